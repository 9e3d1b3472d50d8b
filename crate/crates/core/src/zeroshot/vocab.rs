use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{PanopticLabel, PanopticLabeling};

use super::prompts::PromptEmbeddings;

const SEMANTIC_KITTI: &str = include_str!("../../data/semantickitti.json");
const NUSCENES: &str = include_str!("../../data/nuscenes.json");
const SUPER_CLASSES: &str = include_str!("../../data/super_classes.json");

/// Names accepted by [`Vocabulary::builtin`].
pub const BUILTIN_VOCABULARIES: [&str; 3] = ["semantickitti", "nuscenes", "super_classes"];

/// Placeholder replaced by a prompt inside a template.
pub const PLACEHOLDER: &str = "{}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabClass {
    pub id: u16,
    pub name: String,
    /// Synonyms; each is wrapped in every template.
    pub prompts: Vec<String>,
    pub is_thing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub super_class_id: Option<u16>,
    /// Dataset label ids folded into this class when reading ground truth.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw_ids: Vec<u16>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabFile {
    name: String,
    templates: Vec<String>,
    classes: Vec<VocabClass>,
}

/// Class list, prompt synonyms, sentence templates and (once loaded) one unit
/// text embedding per (class, prompt).
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub name: String,
    pub classes: Vec<VocabClass>,
    pub templates: Vec<String>,
    embeddings: Option<PromptEmbeddings>,
}

impl Vocabulary {
    pub fn new(name: impl Into<String>, classes: Vec<VocabClass>, templates: Vec<String>) -> Result<Self> {
        let v = Self {
            name: name.into(),
            classes,
            templates,
            embeddings: None,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(text)?;
        Self::new(f.name, f.classes, f.templates)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&VocabFile {
            name: self.name.clone(),
            templates: self.templates.clone(),
            classes: self.classes.clone(),
        })?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// One of [`BUILTIN_VOCABULARIES`].
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "semantickitti" => Self::from_json(SEMANTIC_KITTI),
            "nuscenes" => Self::from_json(NUSCENES),
            "super_classes" => Self::from_json(SUPER_CLASSES),
            other => Err(Error::Config(format!(
                "unknown vocabulary {other:?}; expected one of {BUILTIN_VOCABULARIES:?}"
            ))),
        }
    }

    /// A builtin name or a path to a vocabulary JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN_VOCABULARIES.contains(&name_or_path) {
            Self::builtin(name_or_path)
        } else {
            Self::load(name_or_path)
        }
    }

    /// Two-class vocabulary for a free-text query: class 1 is the query,
    /// class 2 the word `other`.
    pub fn for_query(query: &str, templates: Vec<String>) -> Result<Self> {
        let class = |id, name: &str| VocabClass {
            id,
            name: name.to_string(),
            prompts: vec![name.to_string()],
            is_thing: true,
            super_class_id: None,
            raw_ids: Vec::new(),
        };
        Self::new("query", vec![class(1, query), class(2, "other")], templates)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("vocabulary has no classes"));
        }
        let mut ids = HashSet::new();
        for c in &self.classes {
            if c.id == 0 {
                return Err(Error::invalid(format!("class {:?} uses the void id 0", c.name)));
            }
            if !ids.insert(c.id) {
                return Err(Error::invalid(format!("duplicate class id {}", c.id)));
            }
            if c.prompts.is_empty() {
                return Err(Error::invalid(format!("class {:?} has no prompts", c.name)));
            }
        }
        Ok(())
    }

    pub fn class(&self, id: u16) -> Option<&VocabClass> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn class_by_name(&self, name: &str) -> Option<&VocabClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn is_thing(&self, id: u16) -> Option<bool> {
        self.class(id).map(|c| c.is_thing)
    }

    pub fn class_ids(&self) -> Vec<u16> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn embeddings(&self) -> Option<&PromptEmbeddings> {
        self.embeddings.as_ref()
    }

    /// Attaches prompt embeddings; their class ids and prompt counts must
    /// match this vocabulary.
    pub fn with_embeddings(mut self, emb: PromptEmbeddings) -> Result<Self> {
        if emb.classes.len() != self.classes.len() {
            return Err(Error::LengthMismatch {
                expected: self.classes.len(),
                actual: emb.classes.len(),
            });
        }
        for (c, (id, prompts)) in self.classes.iter().zip(&emb.classes) {
            if c.id != *id || c.prompts.len() != prompts.len() {
                return Err(Error::invalid(format!(
                    "embeddings for class {id} ({} prompts) do not match class {} ({} prompts)",
                    prompts.len(),
                    c.id,
                    c.prompts.len()
                )));
            }
            for e in prompts {
                let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                if e.len() != emb.dim || (n - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid(format!("class {id}: embedding is not a unit {}-vector", emb.dim)));
                }
            }
        }
        self.embeddings = Some(emb);
        Ok(self)
    }

    /// Folds dataset label ids into class ids via `raw_ids`. Ids listed by no
    /// class become void; instance ids of void points are cleared. A
    /// vocabulary without any `raw_ids` leaves the labeling untouched.
    pub fn remap_raw_labels(&self, labeling: &PanopticLabeling) -> PanopticLabeling {
        if self.classes.iter().all(|c| c.raw_ids.is_empty()) {
            return labeling.clone();
        }
        let mut lut = vec![0u16; u16::MAX as usize + 1];
        for c in &self.classes {
            for &r in &c.raw_ids {
                lut[r as usize] = c.id;
            }
        }
        PanopticLabeling::new(
            labeling
                .labels()
                .iter()
                .map(|l| match lut[l.semantic as usize] {
                    0 => PanopticLabel::VOID,
                    s => PanopticLabel::new(s, l.instance),
                })
                .collect(),
        )
    }
}

/// Rewrites semantic ids to super-class ids; instance ids are untouched and
/// void stays void.
pub fn map_to_super_classes(labeling: &PanopticLabeling, vocab: &Vocabulary) -> Result<PanopticLabeling> {
    let mut lut = vec![None; u16::MAX as usize + 1];
    for c in &vocab.classes {
        lut[c.id as usize] = Some(c);
    }
    let mut out = Vec::with_capacity(labeling.len());
    for l in labeling.labels() {
        if l.semantic == 0 {
            out.push(*l);
            continue;
        }
        let c = lut[l.semantic as usize]
            .ok_or_else(|| Error::invalid(format!("class id {} not in vocabulary {:?}", l.semantic, vocab.name)))?;
        let s = c
            .super_class_id
            .ok_or_else(|| Error::invalid(format!("class {:?} has no super class", c.name)))?;
        out.push(PanopticLabel::new(s, l.instance));
    }
    Ok(PanopticLabeling::new(out))
}
