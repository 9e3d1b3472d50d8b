use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{read_f32_blob, write_f32_blob};

use super::vocab::{Vocabulary, PLACEHOLDER};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub class_id: u16,
    pub prompt_index: usize,
    pub template_index: usize,
    pub text: String,
}

/// Sentences to embed externally, ordered by (class, prompt, template).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptManifest {
    pub entries: Vec<ManifestEntry>,
}

impl PromptManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One sentence per line, newline terminated.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&e.text);
            s.push('\n');
        }
        s
    }
}

pub fn build_prompt_manifest(vocab: &Vocabulary) -> Result<PromptManifest> {
    if vocab.classes.is_empty() {
        return Err(Error::invalid("vocabulary has no classes"));
    }
    if vocab.templates.is_empty() {
        return Err(Error::invalid("vocabulary has no templates"));
    }
    for t in &vocab.templates {
        if t.matches(PLACEHOLDER).count() != 1 {
            return Err(Error::invalid(format!("template {t:?} must contain exactly one {PLACEHOLDER}")));
        }
        if t.contains('\n') {
            return Err(Error::invalid(format!("template {t:?} contains a newline")));
        }
    }
    let mut entries = Vec::new();
    for c in &vocab.classes {
        for (pi, p) in c.prompts.iter().enumerate() {
            if p.contains('\n') {
                return Err(Error::invalid(format!("prompt {p:?} contains a newline")));
            }
            for (ti, t) in vocab.templates.iter().enumerate() {
                entries.push(ManifestEntry {
                    class_id: c.id,
                    prompt_index: pi,
                    template_index: ti,
                    text: t.replacen(PLACEHOLDER, p, 1),
                });
            }
        }
    }
    Ok(PromptManifest { entries })
}

/// Text-encoder output rows, one per manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub rows: Vec<Vec<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingHeader {
    dim: usize,
    rows: usize,
    /// Blob path relative to the header.
    data: String,
}

/// Reads a JSON header `{"dim", "rows", "data"}` and the little-endian f32
/// blob it points to.
pub fn read_embedding_matrix(header_path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let header_path = header_path.as_ref();
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let h: EmbeddingHeader = serde_json::from_str(&text)?;
    let data = header_path.parent().unwrap_or(Path::new(".")).join(&h.data);
    let rows = read_f32_blob(&data, h.dim)?;
    if rows.len() != h.rows {
        return Err(Error::LengthMismatch {
            expected: h.rows,
            actual: rows.len(),
        });
    }
    Ok(EmbeddingMatrix { dim: h.dim, rows })
}

/// Writes `<stem>.json` and `<stem>.bin` into `dir`; returns the header path.
pub fn write_embedding_matrix(m: &EmbeddingMatrix, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if m.rows.iter().any(|r| r.len() != m.dim) {
        return Err(Error::invalid(format!("embedding rows must have dimension {}", m.dim)));
    }
    let data = format!("{stem}.bin");
    write_f32_blob(&dir.join(&data), m.rows.iter().cloned())?;
    let header = dir.join(format!("{stem}.json"));
    let h = EmbeddingHeader {
        dim: m.dim,
        rows: m.rows.len(),
        data,
    };
    fs::write(&header, serde_json::to_string_pretty(&h)?).map_err(|e| Error::io(&header, e))?;
    Ok(header)
}

/// One unit text embedding per (class, prompt), classes in vocabulary order.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbeddings {
    pub dim: usize,
    pub classes: Vec<(u16, Vec<Vec<f64>>)>,
}

/// Averages the template rows of each (class, prompt) and renormalizes.
pub fn load_prompt_embeddings(manifest: &PromptManifest, matrix: &EmbeddingMatrix) -> Result<PromptEmbeddings> {
    if matrix.rows.len() != manifest.len() {
        return Err(Error::LengthMismatch {
            expected: manifest.len(),
            actual: matrix.rows.len(),
        });
    }
    if matrix.dim == 0 {
        return Err(Error::invalid("embedding dimension is zero"));
    }
    let mut classes: Vec<(u16, Vec<Vec<f64>>)> = Vec::new();
    let mut sums: Vec<Vec<Vec<f64>>> = Vec::new();
    for (e, row) in manifest.entries.iter().zip(&matrix.rows) {
        if row.len() != matrix.dim {
            return Err(Error::LengthMismatch {
                expected: matrix.dim,
                actual: row.len(),
            });
        }
        if classes.last().map(|c| c.0) != Some(e.class_id) {
            classes.push((e.class_id, Vec::new()));
            sums.push(Vec::new());
        }
        let prompts = sums.last_mut().unwrap();
        if prompts.len() <= e.prompt_index {
            prompts.resize(e.prompt_index + 1, vec![0.0; matrix.dim]);
        }
        for (s, &v) in prompts[e.prompt_index].iter_mut().zip(row) {
            *s += v as f64;
        }
    }
    for ((id, out), prompts) in classes.iter_mut().zip(sums) {
        for (pi, s) in prompts.into_iter().enumerate() {
            let n = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::invalid(format!("class {id} prompt {pi}: mean embedding has zero norm")));
            }
            out.push(s.into_iter().map(|v| v / n).collect());
        }
    }
    Ok(PromptEmbeddings {
        dim: matrix.dim,
        classes,
    })
}

/// Builds the manifest of `vocab`, averages `matrix` over it and attaches the
/// result.
pub fn attach_embeddings(vocab: Vocabulary, matrix: &EmbeddingMatrix) -> Result<Vocabulary> {
    let manifest = build_prompt_manifest(&vocab)?;
    let emb = load_prompt_embeddings(&manifest, matrix)?;
    vocab.with_embeddings(emb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zeroshot::vocab::VocabClass;

    fn vocab(classes: usize, prompts: usize, templates: &[&str]) -> Vocabulary {
        let cs = (1..=classes as u16)
            .map(|id| VocabClass {
                id,
                name: format!("c{id}"),
                prompts: (0..prompts).map(|p| format!("c{id}p{p}")).collect(),
                is_thing: true,
                super_class_id: None,
                raw_ids: Vec::new(),
            })
            .collect();
        Vocabulary::new("t", cs, templates.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn photo_of_a_car() {
        let k = Vocabulary::builtin("semantickitti").unwrap();
        let m = build_prompt_manifest(&k).unwrap();
        assert_eq!(m.entries[0].text, "a photo of a car");
        assert_eq!(m.len(), k.classes.iter().map(|c| c.prompts.len()).sum::<usize>() * k.templates.len());
    }

    #[test]
    fn counts_and_order() {
        let m = build_prompt_manifest(&vocab(2, 2, &["a {}", "b {}", "c {}"])).unwrap();
        assert_eq!(m.len(), 12);
        let texts: Vec<&str> = m.entries.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(&texts[..4], &["a c1p0", "b c1p0", "c c1p0", "a c1p1"]);
        assert_eq!(m.to_text().lines().count(), 12);
    }

    #[test]
    fn bad_templates() {
        assert!(build_prompt_manifest(&vocab(1, 1, &[])).is_err());
        assert!(build_prompt_manifest(&vocab(1, 1, &["no placeholder"])).is_err());
        assert!(build_prompt_manifest(&vocab(1, 1, &["{} and {}"])).is_err());
    }

    #[test]
    fn template_mean_is_renormalized() {
        let v = vocab(1, 1, &["a {}", "b {}"]);
        let m = build_prompt_manifest(&v).unwrap();
        let mat = EmbeddingMatrix {
            dim: 2,
            rows: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let e = load_prompt_embeddings(&m, &mat).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.classes[0].1[0][0] - h).abs() < 1e-12);
        assert!((e.classes[0].1[0][1] - h).abs() < 1e-12);
    }

    #[test]
    fn single_template_normalizes_row() {
        let v = vocab(1, 1, &["{}"]);
        let m = build_prompt_manifest(&v).unwrap();
        let mat = EmbeddingMatrix {
            dim: 2,
            rows: vec![vec![3.0, 4.0]],
        };
        let e = load_prompt_embeddings(&m, &mat).unwrap();
        assert!((e.classes[0].1[0][0] - 0.6).abs() < 1e-7);
        assert!((e.classes[0].1[0][1] - 0.8).abs() < 1e-7);
        assert!(attach_embeddings(v, &mat).unwrap().embeddings().is_some());
    }

    #[test]
    fn mismatches_fail() {
        let v = vocab(1, 1, &["a {}", "b {}"]);
        let m = build_prompt_manifest(&v).unwrap();
        let short = EmbeddingMatrix {
            dim: 2,
            rows: vec![vec![1.0, 0.0]],
        };
        assert!(load_prompt_embeddings(&m, &short).is_err());
        let ragged = EmbeddingMatrix {
            dim: 2,
            rows: vec![vec![1.0, 0.0], vec![1.0]],
        };
        assert!(load_prompt_embeddings(&m, &ragged).is_err());
        let cancel = EmbeddingMatrix {
            dim: 2,
            rows: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
        };
        assert!(load_prompt_embeddings(&m, &cancel).is_err());
    }

    #[test]
    fn matrix_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix {
            dim: 3,
            rows: vec![vec![1.0, -2.5, 0.125], vec![0.0, 1e-8, 7.0]],
        };
        let h = write_embedding_matrix(&m, dir.path(), "prompts").unwrap();
        assert_eq!(read_embedding_matrix(&h).unwrap(), m);
    }
}
