//! Label coverage and instance statistics over a corpus of labeled scans.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::PanopticLabeling;
use crate::zeroshot::Vocabulary;

/// Statistics over one point subset (the full scans, or their frustum part).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub total_points: u64,
    pub labeled_points: u64,
    /// labeled / total, 0 when there are no points.
    pub coverage: f64,
    pub total_instances: u64,
    pub max_instances: u64,
    pub mean_instances: f64,
    /// Split by the vocabulary's thing flag; zero without a vocabulary.
    pub thing_instances: u64,
    pub stuff_instances: u64,
    /// Instances whose class is void or unknown to the vocabulary.
    pub unclassified_instances: u64,
    /// #things / #stuff; `None` without stuff instances.
    pub thing_stuff_ratio: Option<f64>,
    /// Instance count per semantic id.
    pub per_class: BTreeMap<u16, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub n_scans: usize,
    pub full: CoverageStats,
    /// Restricted to points inside the camera frustum, when masks were given.
    pub frustum: Option<CoverageStats>,
    #[serde(skip)]
    class_names: BTreeMap<u16, String>,
}

#[derive(Debug, Clone, Default)]
struct Acc {
    total: u64,
    labeled: u64,
    instances: u64,
    max: u64,
    things: u64,
    stuff: u64,
    unclassified: u64,
    per_class: BTreeMap<u16, u64>,
}

impl Acc {
    fn finish(&self, n_scans: usize) -> CoverageStats {
        CoverageStats {
            total_points: self.total,
            labeled_points: self.labeled,
            coverage: if self.total == 0 {
                0.0
            } else {
                self.labeled as f64 / self.total as f64
            },
            total_instances: self.instances,
            max_instances: self.max,
            mean_instances: if n_scans == 0 {
                0.0
            } else {
                self.instances as f64 / n_scans as f64
            },
            thing_instances: self.things,
            stuff_instances: self.stuff,
            unclassified_instances: self.unclassified,
            thing_stuff_ratio: (self.stuff > 0).then(|| self.things as f64 / self.stuff as f64),
            per_class: self.per_class.clone(),
        }
    }
}

/// Streaming accumulator; scans may be added in any order.
#[derive(Debug, Clone)]
pub struct LabelStatsAccumulator {
    is_thing: BTreeMap<u16, bool>,
    class_names: BTreeMap<u16, String>,
    n_scans: usize,
    full: Acc,
    frustum: Option<Acc>,
}

impl LabelStatsAccumulator {
    pub fn new(vocab: Option<&Vocabulary>) -> Self {
        let classes = vocab.map(|v| v.classes.as_slice()).unwrap_or(&[]);
        Self {
            is_thing: classes.iter().map(|c| (c.id, c.is_thing)).collect(),
            class_names: classes.iter().map(|c| (c.id, c.name.clone())).collect(),
            n_scans: 0,
            full: Acc::default(),
            frustum: None,
        }
    }

    /// Instances are distinct (semantic, instance) pairs with a nonzero
    /// instance id; points of a stuff class without an instance id count as
    /// one instance of that class.
    fn scan(&self, labeling: &PanopticLabeling, mask: Option<&[bool]>, acc: &mut Acc) {
        let mut seen = HashSet::new();
        for (i, l) in labeling.labels().iter().enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            acc.total += 1;
            if !l.is_labeled() {
                continue;
            }
            acc.labeled += 1;
            let stuff = self.is_thing.get(&l.semantic) == Some(&false);
            if l.instance != 0 || stuff {
                seen.insert((l.semantic, l.instance));
            }
        }
        let n = seen.len() as u64;
        acc.instances += n;
        acc.max = acc.max.max(n);
        for (s, _) in seen {
            *acc.per_class.entry(s).or_default() += 1;
            match self.is_thing.get(&s) {
                Some(true) => acc.things += 1,
                Some(false) => acc.stuff += 1,
                None => acc.unclassified += 1,
            }
        }
    }

    /// Adds one scan of `n_points` points. All scans must agree on whether a
    /// frustum mask is given.
    pub fn add_scan(&mut self, labeling: &PanopticLabeling, n_points: usize, frustum: Option<&[bool]>) -> Result<()> {
        labeling.ensure_len(n_points)?;
        if let Some(m) = frustum {
            if m.len() != n_points {
                return Err(Error::LengthMismatch {
                    expected: n_points,
                    actual: m.len(),
                });
            }
        }
        if self.n_scans > 0 && frustum.is_some() != self.frustum.is_some() {
            return Err(Error::invalid("frustum masks must be given for all scans or none"));
        }
        let mut full = std::mem::take(&mut self.full);
        self.scan(labeling, None, &mut full);
        self.full = full;
        if let Some(m) = frustum {
            let mut acc = self.frustum.take().unwrap_or_default();
            self.scan(labeling, Some(m), &mut acc);
            self.frustum = Some(acc);
        }
        self.n_scans += 1;
        Ok(())
    }

    pub fn finish(&self) -> LabelStats {
        LabelStats {
            n_scans: self.n_scans,
            full: self.full.finish(self.n_scans),
            frustum: self.frustum.as_ref().map(|a| a.finish(self.n_scans)),
            class_names: self.class_names.clone(),
        }
    }
}

/// Statistics over `(labeling, n_points, frustum mask)` triples.
pub fn compute_label_stats<'a, I>(scans: I, vocab: Option<&Vocabulary>) -> Result<LabelStats>
where
    I: IntoIterator<Item = (&'a PanopticLabeling, usize, Option<&'a [bool]>)>,
{
    let mut acc = LabelStatsAccumulator::new(vocab);
    for (l, n, m) in scans {
        acc.add_scan(l, n, m)?;
    }
    Ok(acc.finish())
}

impl LabelStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8}  {:>8}  {:>10}  {:>5}  {:>7}  {:>7}  {:>7}  {:>7}",
            "subset", "coverage", "total", "max", "mean", "things", "stuff", "Th/St"
        );
        let pct = |a: u64, b: u64| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let mut row = |name: &str, c: &CoverageStats| {
            let classified = c.thing_instances + c.stuff_instances;
            let _ = writeln!(
                s,
                "{:<8}  {:>7.1}%  {:>10}  {:>5}  {:>7.1}  {:>6.1}%  {:>6.1}%  {:>7}",
                name,
                100.0 * c.coverage,
                c.total_instances,
                c.max_instances,
                c.mean_instances,
                pct(c.thing_instances, classified),
                pct(c.stuff_instances, classified),
                c.thing_stuff_ratio.map_or("-".to_string(), |r| format!("{r:.2}"))
            );
        };
        row("full", &self.full);
        if let Some(f) = &self.frustum {
            row("frustum", f);
        }
        if !self.full.per_class.is_empty() {
            let _ = writeln!(s, "\ninstances per class (% of all instances)");
            for (id, n) in &self.full.per_class {
                let name = self.class_names.get(id).cloned().unwrap_or_else(|| format!("class {id}"));
                let _ = writeln!(s, "  {:<20} {:>8}  {:>5.1}%", name, n, pct(*n, self.full.total_instances));
            }
        }
        let _ = writeln!(s, "scans: {}", self.n_scans);
        s
    }
}
