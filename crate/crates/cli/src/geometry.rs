use std::path::PathBuf;

use clap::{ArgGroup, Args, ValueEnum};
use llf_core::cloud::load_point_cloud;
use llf_core::flatten::{flatten_masks_with, SuppressionOrder, DEFAULT_NMS_IOU};
use llf_core::labels::read_labels;
use llf_core::mask::{read_mask_set, write_mask_set};
use llf_core::ply::{export_ply as write_ply, ColorSource, PlyEncoding};
use llf_core::refine::{
    build_cluster_ensemble, filter_by_clusters, remove_ground, replace_with_clusters, GroundParams, RefineStrategy,
    DEFAULT_EPSILONS, DEFAULT_MIN_PTS, DEFAULT_OVERLAP,
};
use llf_core::segment::{read_segments, write_segments};
use llf_core::unproject::{unproject_masks, ViewFusion, DEFAULT_FUSION_IOU};
use llf_core::Error;

use crate::io::{config_error, ensure_parent, load_cameras, stem};
use crate::{CalibArgs, Outcome};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Order {
    Area,
    Score,
}

#[derive(Args, Debug)]
pub struct FlattenArgs {
    /// Mask container sidecar (.json)
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Output file stem (default: input stem)
    #[arg(long)]
    pub stem: Option<String>,
    #[arg(long, default_value_t = DEFAULT_NMS_IOU)]
    pub nms_iou: f64,
    #[arg(long, value_enum, default_value_t = Order::Area)]
    pub order: Order,
}

pub fn flatten(a: FlattenArgs) -> anyhow::Result<Outcome> {
    if !(a.nms_iou > 0.0 && a.nms_iou <= 1.0) {
        return Err(config_error(format!("--nms-iou {} must lie in (0, 1]", a.nms_iou)));
    }
    let raw = read_mask_set(&a.input)?;
    let order = match a.order {
        Order::Area => SuppressionOrder::Area,
        Order::Score => SuppressionOrder::Score,
    };
    let flat = flatten_masks_with(&raw, a.nms_iou, order)?;
    let stem = a.stem.unwrap_or_else(|| stem(&a.input));
    let out = write_mask_set(&flat, &a.output_dir, &stem)?;
    println!("{}: {} -> {} masks, wrote {}", raw.camera_id, raw.masks.len(), flat.masks.len(), out.display());
    Ok(Outcome::Done)
}

#[derive(Args, Debug)]
pub struct UnprojectArgs {
    /// Scan (.bin)
    #[arg(long)]
    pub cloud: PathBuf,
    #[command(flatten)]
    pub calib: CalibArgs,
    /// Flattened mask sidecars, one per camera, fused in the given order
    #[arg(long, required = true, num_args = 1..)]
    pub masks: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FUSION_IOU)]
    pub fusion_iou: f64,
    /// Drop lifted segments with fewer points
    #[arg(long, default_value_t = 1)]
    pub min_points: usize,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Output file stem (default: scan id)
    #[arg(long)]
    pub stem: Option<String>,
}

pub fn unproject(a: UnprojectArgs) -> anyhow::Result<Outcome> {
    if !(a.fusion_iou > 0.0 && a.fusion_iou <= 1.0) {
        return Err(config_error(format!("--fusion-iou {} must lie in (0, 1]", a.fusion_iou)));
    }
    let cloud = load_point_cloud(&a.cloud)?;
    let cameras = load_cameras(&a.calib)?;
    let mut fusion = ViewFusion::new(cloud.len(), a.fusion_iou);
    for path in &a.masks {
        let set = read_mask_set(path)?;
        let cam = cameras
            .iter()
            .find(|c| c.camera_id == set.camera_id)
            .ok_or_else(|| config_error(format!("{}: camera {:?} not in calibration", path.display(), set.camera_id)))?;
        fusion.add_view(unproject_masks(&cloud, cam, &set, a.min_points)?)?;
    }
    let segments = fusion.finish();
    let stem = a.stem.unwrap_or_else(|| cloud.scan_id.clone());
    let out = write_segments(&segments, &cloud.scan_id, cloud.len(), &a.output_dir, &stem)?;
    println!("{}: {} segments, wrote {}", cloud.scan_id, segments.len(), out.display());
    Ok(Outcome::Done)
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Strategy {
    Replace,
    Filter,
    None,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    /// Segment table (.segments.json)
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long, value_enum, default_value_t = Strategy::Replace)]
    pub strategy: Strategy,
    /// Minimum cluster IoU for a match
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    pub overlap: f64,
    /// DBSCAN radii (comma separated)
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EPSILONS)]
    pub epsilons: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_MIN_PTS)]
    pub min_pts: usize,
    /// Ground inlier distance (meters)
    #[arg(long, default_value_t = GroundParams::default().inlier_dist)]
    pub ground_inlier_dist: f64,
    #[arg(long, default_value_t = 0)]
    pub ground_seed: u64,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub stem: Option<String>,
}

pub fn refine(a: RefineArgs) -> anyhow::Result<Outcome> {
    if !(a.overlap > 0.0 && a.overlap <= 1.0) {
        return Err(config_error(format!("--overlap {} must lie in (0, 1]", a.overlap)));
    }
    if a.epsilons.is_empty() || a.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(config_error("--epsilons must be positive numbers"));
    }
    if a.min_pts == 0 {
        return Err(config_error("--min-pts must be at least 1"));
    }
    let cloud = load_point_cloud(&a.cloud)?;
    let (scan_id, n_points, segments) = read_segments(&a.segments)?;
    if n_points != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: n_points,
        }
        .into());
    }
    let strategy = match a.strategy {
        Strategy::Replace => RefineStrategy::Replace,
        Strategy::Filter => RefineStrategy::Filter,
        Strategy::None => RefineStrategy::None,
    };
    let before = segments.len();
    let (refined, clusters) = if strategy == RefineStrategy::None {
        (segments, 0)
    } else {
        let ground = remove_ground(
            &cloud,
            &GroundParams {
                inlier_dist: a.ground_inlier_dist,
                seed: a.ground_seed,
                ..GroundParams::default()
            },
        );
        let pool = build_cluster_ensemble(&cloud, &ground, &a.epsilons, a.min_pts);
        let out = match strategy {
            RefineStrategy::Replace => {
                let mut s = replace_with_clusters(&segments, &pool, a.overlap);
                s.retain(|s| !s.is_empty());
                s
            }
            _ => filter_by_clusters(&segments, &pool, a.overlap),
        };
        (out, pool.len())
    };
    let stem = a.stem.unwrap_or_else(|| scan_id.clone());
    let out = write_segments(&refined, &scan_id, n_points, &a.output_dir, &stem)?;
    println!(
        "{scan_id}: {before} -> {} segments against {clusters} clusters, wrote {}",
        refined.len(),
        out.display()
    );
    Ok(Outcome::Done)
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["labels", "segments"])))]
pub struct ExportPlyArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    /// Color by label word
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Color by segment
    #[arg(long)]
    pub segments: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    /// Binary little-endian instead of ASCII
    #[arg(long)]
    pub binary: bool,
}

pub fn export_ply(a: ExportPlyArgs) -> anyhow::Result<Outcome> {
    let cloud = load_point_cloud(&a.cloud)?;
    let encoding = if a.binary {
        PlyEncoding::BinaryLittleEndian
    } else {
        PlyEncoding::Ascii
    };
    ensure_parent(&a.output)?;
    if let Some(p) = &a.labels {
        let l = read_labels(p, Some(cloud.len()))?;
        write_ply(&cloud, &ColorSource::Labeling(&l), encoding, &a.output)?;
    } else if let Some(p) = &a.segments {
        let (_, _, segs) = read_segments(p)?;
        write_ply(&cloud, &ColorSource::Segments(&segs), encoding, &a.output)?;
    }
    println!("wrote {}", a.output.display());
    Ok(Outcome::Done)
}
