use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::panoptic::ClassCounts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: u16,
    pub name: String,
    pub is_thing: bool,
    /// Some segment of the class exists in ground truth or prediction; only
    /// present classes enter the averages.
    pub present: bool,
    pub counts: ClassCounts,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    /// Semantic-channel IoU.
    pub iou: f64,
}

impl ClassMetrics {
    pub fn new(class_id: u16, name: &str, is_thing: bool, counts: ClassCounts) -> Self {
        Self {
            class_id,
            name: name.to_string(),
            is_thing,
            present: counts.present(),
            counts,
            pq: counts.pq(),
            sq: counts.sq(),
            rq: counts.rq(),
            iou: counts.semantic_iou(),
        }
    }
}

/// Evaluation conventions recorded alongside the numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub pq_dagger: String,
    pub void_handling: String,
    pub stuff_segments: String,
    pub matching: String,
    pub averaging: String,
    /// Protocols applied to the predictions before scoring.
    pub protocols: Vec<String>,
}

impl ReportMeta {
    pub fn new(stuff_per_class: bool, protocols: Vec<String>) -> Self {
        Self {
            pq_dagger: "stuff-class PQ replaced by semantic IoU; thing classes keep PQ".into(),
            void_handling: "points with void ground truth are removed before evaluation".into(),
            stuff_segments: if stuff_per_class {
                "stuff segments keyed by class only".into()
            } else {
                "stuff segments keyed by (class, instance)".into()
            },
            matching: "per class, unique matches at IoU > 0.5".into(),
            averaging: "per-class counts summed over scans, then averaged over classes present in ground truth or prediction".into(),
            protocols,
        }
    }
}

/// Panoptic metrics as fractions in [0, 1]; the text table shows them ×100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PQReport {
    pub pq: f64,
    pub pq_dagger: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_th: f64,
    pub sq_th: f64,
    pub rq_th: f64,
    pub pq_st: f64,
    pub sq_st: f64,
    pub rq_st: f64,
    pub miou: f64,
    pub n_scans: usize,
    pub classes: Vec<ClassMetrics>,
    pub meta: ReportMeta,
}

impl PQReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let w = self.classes.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<w$}  {:>5}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}",
            "class", "kind", "PQ", "SQ", "RQ", "IoU", "TP", "FP", "FN"
        );
        for c in &self.classes {
            if !c.present {
                continue;
            }
            let _ = writeln!(
                s,
                "{:<w$}  {:>5}  {:>6.1}  {:>6.1}  {:>6.1}  {:>6.1}  {:>6}  {:>6}  {:>6}",
                c.name,
                if c.is_thing { "thing" } else { "stuff" },
                100.0 * c.pq,
                100.0 * c.sq,
                100.0 * c.rq,
                100.0 * c.iou,
                c.counts.tp,
                c.counts.fp,
                c.counts.fn_
            );
        }
        s.push('\n');
        let cols = [
            ("PQ", self.pq),
            ("PQ†", self.pq_dagger),
            ("RQ", self.rq),
            ("SQ", self.sq),
            ("PQ_Th", self.pq_th),
            ("RQ_Th", self.rq_th),
            ("SQ_Th", self.sq_th),
            ("PQ_St", self.pq_st),
            ("RQ_St", self.rq_st),
            ("SQ_St", self.sq_st),
            ("mIoU", self.miou),
        ];
        for (name, _) in &cols {
            let _ = write!(s, "{name:>7}");
        }
        s.push('\n');
        for (_, v) in &cols {
            let _ = write!(s, "{:>7.1}", 100.0 * v);
        }
        s.push('\n');
        let _ = writeln!(s, "scans: {}", self.n_scans);
        if !self.meta.protocols.is_empty() {
            let _ = writeln!(s, "protocols: {}", self.meta.protocols.join(", "));
        }
        let _ = writeln!(s, "PQ†: {}", self.meta.pq_dagger);
        let _ = writeln!(s, "void: {}", self.meta.void_handling);
        s
    }
}
