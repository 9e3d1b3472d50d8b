//! Lidar pseudo-label toolkit.
//!
//! Lifts flattened 2D instance masks and their vision-language tokens onto
//! Lidar scans, refines the lifted segments with a DBSCAN cluster ensemble,
//! classifies segments zero-shot against text-prompt embeddings, and scores
//! panoptic predictions (PQ family, semantic oracle, stuff merging, frustum
//! filtering).
//!
//! Module map:
//!
//! - [`cloud`], [`labels`], [`camera`], [`mask`], [`segment`], [`ply`]: data
//!   model, file formats and camera geometry
//! - [`flatten`]: area-priority NMS turning a mask hierarchy into a disjoint set
//! - [`unproject`]: image-mask to Lidar-segment lifting and multi-view fusion
//! - [`refine`]: ground removal, DBSCAN ensemble, replace/filter refinement
//! - [`zeroshot`]: vocabularies, prompt manifests, cosine matching
//! - [`eval`]: panoptic quality and evaluation protocols
//! - [`augment`]: partial-label training sample preparation
//! - [`stats`]: pseudo-label dataset statistics
//! - [`pipeline`]: the end-to-end per-scan label engine driven by a config file

pub mod augment;
pub mod camera;
pub mod cloud;
pub mod error;
pub mod eval;
pub mod flatten;
pub mod labels;
pub mod mask;
pub mod pipeline;
pub mod ply;
pub mod refine;
pub mod segment;
pub mod stats;
pub mod unproject;
pub mod zeroshot;

pub use camera::{CameraModel, Projection};
pub use cloud::{Point, PointCloud};
pub use error::{Error, Result};
pub use labels::{PanopticLabel, PanopticLabeling};
pub use mask::{ClipToken, ImageMask, ImageMaskSet, RleMask};
pub use segment::{LidarSegment, MaskRef, Provenance};
pub use zeroshot::Vocabulary;
