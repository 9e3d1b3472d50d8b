//! Panoptic quality (PQ, SQ, RQ, PQ†, thing/stuff splits, mIoU) and the
//! evaluation protocols: semantic oracle, stuff merging, frustum filtering.

mod panoptic;
mod protocols;
mod report;

pub use panoptic::{evaluate_panoptic, ClassCounts, EvalOptions, PanopticEvaluator, MATCH_IOU};
pub use protocols::{apply_semantic_oracle, frustum_filter, merge_stuff, semantic_oracle};
pub use report::{ClassMetrics, PQReport, ReportMeta};
