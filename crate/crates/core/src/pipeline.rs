//! The per-scan label engine and its batch driver.
//!
//! Per scan: build the DBSCAN cluster ensemble on the non-ground points once;
//! then for each camera flatten its raw masks, lift them onto the scan,
//! refine the lifted segments against the ensemble, and fuse them into the
//! scan's segment set. A last pass makes the fused segments disjoint.
//!
//! Batch runs read a TOML config:
//!
//! ```toml
//! [dataset]
//! clouds = "velodyne"        # <scan>.bin files
//! calib = "calib.txt"        # KITTI text or .json; a directory means <calib>/<scan>.{json,txt}
//! image_size = [1241, 376]   # needed by KITTI text calibration
//! masks = "masks"            # <masks>/<scan>/<camera>.json mask containers
//! output = "pseudo"
//! cameras = ["image_2"]      # optional, default: every calibrated camera
//! scans = ["000000"]         # optional, default: every cloud
//!
//! [engine]                   # optional, defaults shown
//! nms_iou = 0.01
//! fusion_iou = 0.01
//! dbscan_overlap = 0.5
//! epsilons = [1.2488, 0.8136, 0.6952, 0.594, 0.4353, 0.3221]
//! min_pts = 5
//! min_points = 1
//! refine = "replace"         # replace | filter | none
//! suppression = "area"       # area | score
//! # threads = 8              # default: all cores; LLF_THREADS overrides
//!
//! [engine.ground]
//! inlier_dist = 0.2
//! max_iters = 200
//! seed = 0
//! max_tilt_deg = 30.0
//!
//! [classify]                 # optional: fill semantic ids zero-shot
//! vocabulary = "semantickitti"
//! embeddings = "prompts.json"
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{load_calibration, CameraModel};
use crate::cloud::{load_point_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::flatten::{flatten_masks_with, SuppressionOrder, DEFAULT_NMS_IOU};
use crate::labels::write_labels;
use crate::mask::{read_mask_set, ImageMaskSet};
use crate::refine::{
    build_cluster_ensemble, filter_by_clusters, remove_ground, replace_with_clusters, GroundParams, RefineStrategy,
    DEFAULT_EPSILONS, DEFAULT_MIN_PTS, DEFAULT_OVERLAP,
};
use crate::segment::{segments_to_labeling, write_segments, LidarSegment};
use crate::unproject::{unproject_masks, ViewFusion, DEFAULT_FUSION_IOU};
use crate::zeroshot::{attach_embeddings, classify_segments, read_embedding_matrix, Vocabulary};

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "LLF_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub nms_iou: f64,
    pub fusion_iou: f64,
    pub dbscan_overlap: f64,
    pub epsilons: Vec<f64>,
    pub min_pts: usize,
    /// Lifted segments with fewer points are dropped.
    pub min_points: usize,
    pub refine: RefineStrategy,
    pub suppression: SuppressionOrder,
    pub ground: GroundParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            nms_iou: DEFAULT_NMS_IOU,
            fusion_iou: DEFAULT_FUSION_IOU,
            dbscan_overlap: DEFAULT_OVERLAP,
            epsilons: DEFAULT_EPSILONS.to_vec(),
            min_pts: DEFAULT_MIN_PTS,
            min_points: 1,
            refine: RefineStrategy::Replace,
            suppression: SuppressionOrder::Area,
            ground: GroundParams::default(),
            threads: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in (0, 1]")))
            }
        };
        unit("nms_iou", self.nms_iou)?;
        unit("fusion_iou", self.fusion_iou)?;
        unit("dbscan_overlap", self.dbscan_overlap)?;
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Config("epsilons must be a nonempty list of positive numbers".into()));
        }
        if self.min_pts == 0 {
            return Err(Error::Config("min_pts must be at least 1".into()));
        }
        if !(self.ground.inlier_dist > 0.0) || !(0.0..=90.0).contains(&self.ground.max_tilt_deg) {
            return Err(Error::Config("ground: inlier_dist must be positive, max_tilt_deg in [0, 90]".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub clouds: PathBuf,
    pub calib: PathBuf,
    #[serde(default)]
    pub image_size: Option<[u32; 2]>,
    pub masks: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub cameras: Vec<String>,
    #[serde(default)]
    pub scans: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    /// Builtin vocabulary name or vocabulary JSON path.
    pub vocabulary: String,
    /// Embedding matrix header for the vocabulary's prompt manifest.
    pub embeddings: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub classify: Option<ClassifyConfig>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let d = &mut c.dataset;
        for p in [&mut d.clouds, &mut d.calib, &mut d.masks, &mut d.output] {
            resolve(base_dir, p);
        }
        if let Some(cl) = &mut c.classify {
            resolve(base_dir, &mut cl.embeddings);
            let v = Path::new(&cl.vocabulary);
            if v.extension().is_some_and(|e| e == "json") && v.is_relative() {
                cl.vocabulary = base_dir.join(v).to_string_lossy().into_owned();
            }
        }
        c.engine.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// SHA-256 over the settings that change the labels: the engine (without
    /// the worker count), the camera selection and the classification setup.
    /// Directories are not part of it; classification inputs enter by file
    /// name.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Relevant<'a> {
            engine: EngineConfig,
            cameras: &'a [String],
            classify: Option<(String, String)>,
        }
        let file_name = |p: &Path| p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let engine = EngineConfig {
            threads: None,
            ..self.engine.clone()
        };
        let r = Relevant {
            engine,
            cameras: &self.dataset.cameras,
            classify: self
                .classify
                .as_ref()
                .map(|c| (file_name(Path::new(&c.vocabulary)), file_name(&c.embeddings))),
        };
        let json = serde_json::to_string(&r).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Mask and segment counts through the stages of one scan.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanFunnel {
    pub raw_masks: usize,
    pub flat_masks: usize,
    pub lifted_segments: usize,
    pub refined_segments: usize,
    pub clusters: usize,
    pub segments: usize,
}

/// Runs the label engine on one scan and its camera views.
pub fn label_scan(
    cloud: &PointCloud,
    views: &[(CameraModel, ImageMaskSet)],
    engine: &EngineConfig,
) -> Result<(Vec<LidarSegment>, ScanFunnel)> {
    engine.validate()?;
    let mut funnel = ScanFunnel::default();
    let pool = if engine.refine != RefineStrategy::None && !views.is_empty() && !cloud.is_empty() {
        let ground = remove_ground(cloud, &engine.ground);
        Some(build_cluster_ensemble(cloud, &ground, &engine.epsilons, engine.min_pts))
    } else {
        None
    };
    funnel.clusters = pool.as_ref().map_or(0, |p| p.len());

    let mut fusion = ViewFusion::new(cloud.len(), engine.fusion_iou);
    for (cam, raw) in views {
        funnel.raw_masks += raw.masks.len();
        let flat = flatten_masks_with(raw, engine.nms_iou, engine.suppression)?;
        funnel.flat_masks += flat.masks.len();
        let lifted = unproject_masks(cloud, cam, &flat, engine.min_points)?;
        funnel.lifted_segments += lifted.len();
        let refined = match (&pool, engine.refine) {
            (Some(p), RefineStrategy::Replace) => {
                let mut r = replace_with_clusters(&lifted, p, engine.dbscan_overlap);
                r.retain(|s| !s.is_empty());
                r
            }
            (Some(p), RefineStrategy::Filter) => filter_by_clusters(&lifted, p, engine.dbscan_overlap),
            _ => lifted,
        };
        funnel.refined_segments += refined.len();
        fusion.add_view(refined)?;
    }
    let segments = fusion.finish();
    funnel.segments = segments.len();
    Ok((segments, funnel))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub scan_id: String,
    pub status: ScanStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub funnel: Option<ScanFunnel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub engine: EngineConfig,
    pub cameras: Vec<String>,
    pub scans: Vec<ScanRecord>,
}

impl RunManifest {
    pub fn failures(&self) -> usize {
        self.scans.iter().filter(|s| s.status == ScanStatus::Failed).count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Abort on the first failing scan instead of recording it.
    pub fail_fast: bool,
}

/// Output locations of one scan.
pub fn label_path(output: &Path, scan_id: &str) -> PathBuf {
    output.join("labels").join(format!("{scan_id}.label"))
}

pub fn segments_path(output: &Path, scan_id: &str) -> PathBuf {
    output.join("segments").join(format!("{scan_id}.segments.json"))
}

fn list_scans(cfg: &DatasetConfig) -> Result<Vec<String>> {
    if !cfg.scans.is_empty() {
        return Ok(cfg.scans.clone());
    }
    let rd = fs::read_dir(&cfg.clouds).map_err(|e| Error::io(&cfg.clouds, e))?;
    let mut scans = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(&cfg.clouds, e))?.path();
        if p.extension().is_some_and(|e| e == "bin") {
            if let Some(s) = p.file_stem() {
                scans.push(s.to_string_lossy().into_owned());
            }
        }
    }
    scans.sort();
    Ok(scans)
}

fn load_cameras(cfg: &DatasetConfig, calib: &Path) -> Result<Vec<CameraModel>> {
    let all = load_calibration(calib, cfg.image_size.map(|[w, h]| (w, h)))?;
    if cfg.cameras.is_empty() {
        return Ok(all);
    }
    cfg.cameras
        .iter()
        .map(|id| {
            all.iter()
                .find(|c| &c.camera_id == id)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("{}: no camera {id:?}", calib.display())))
        })
        .collect()
}

fn scan_calib(dir: &Path, scan_id: &str) -> Result<PathBuf> {
    ["json", "txt"]
        .iter()
        .map(|ext| dir.join(format!("{scan_id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::invalid(format!("no calibration for scan {scan_id} in {}", dir.display())))
}

struct Shared {
    cameras: Option<Vec<CameraModel>>,
    vocab: Option<Vocabulary>,
}

fn process_scan(cfg: &PipelineConfig, shared: &Shared, scan_id: &str) -> Result<(usize, ScanFunnel)> {
    let d = &cfg.dataset;
    let cloud = load_point_cloud(d.clouds.join(format!("{scan_id}.bin")))?;
    let per_scan;
    let cameras = match &shared.cameras {
        Some(c) => c,
        None => {
            per_scan = load_cameras(d, &scan_calib(&d.calib, scan_id)?)?;
            &per_scan
        }
    };
    let mut views = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let set = read_mask_set(d.masks.join(scan_id).join(format!("{}.json", cam.camera_id)))?;
        views.push((cam.clone(), set));
    }
    let (segments, funnel) = label_scan(&cloud, &views, &cfg.engine)?;
    let semantic: Option<Vec<u16>> = match &shared.vocab {
        Some(v) => Some(classify_segments(&segments, v)?.into_iter().map(|s| s.best).collect()),
        None => None,
    };
    let labeling = segments_to_labeling(&segments, cloud.len(), semantic.as_deref())?;
    let lp = label_path(&d.output, scan_id);
    let sp = segments_path(&d.output, scan_id);
    for dir in [lp.parent().unwrap(), sp.parent().unwrap()] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_labels(&labeling, cloud.len(), &lp)?;
    write_segments(&segments, scan_id, cloud.len(), sp.parent().unwrap(), scan_id)?;
    Ok((cloud.len(), funnel))
}

/// Worker count: `LLF_THREADS`, else the config, else all cores.
pub fn effective_threads(engine: &EngineConfig) -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        };
    }
    Ok(engine.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

/// Labels every scan of the config and writes `labels/`, `segments/` and
/// `manifest.json` under the output directory. Scan failures are recorded in
/// the manifest; with `fail_fast` the first one is returned as an error.
pub fn run_pipeline(cfg: &PipelineConfig, opts: RunOptions) -> Result<RunManifest> {
    cfg.engine.validate()?;
    let threads = effective_threads(&cfg.engine)?;
    let d = &cfg.dataset;
    let scans = list_scans(d)?;
    let cameras = if d.calib.is_dir() {
        None
    } else {
        Some(load_cameras(d, &d.calib)?)
    };
    let vocab = match &cfg.classify {
        Some(c) => {
            let v = Vocabulary::resolve(&c.vocabulary)?;
            Some(attach_embeddings(v, &read_embedding_matrix(&c.embeddings)?)?)
        }
        None => None,
    };
    let shared = Shared { cameras, vocab };
    fs::create_dir_all(&d.output).map_err(|e| Error::io(&d.output, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let run = |s: &String| {
        let r = process_scan(cfg, &shared, s);
        match &r {
            Ok((_, f)) => log::info!("scan {s}: {} segments", f.segments),
            Err(e) => log::error!("scan {s}: {e}"),
        }
        (s.clone(), r)
    };
    // collecting into a Result stops scheduling new scans after a failure
    let results: Vec<(String, Result<(usize, ScanFunnel)>)> = pool.install(|| {
        if opts.fail_fast {
            scans
                .par_iter()
                .map(|s| {
                    let (id, r) = run(s);
                    r.map(|v| (id, Ok(v)))
                })
                .collect::<Result<Vec<_>>>()
        } else {
            Ok(scans.par_iter().map(run).collect())
        }
    })?;

    let mut records = Vec::with_capacity(results.len());
    for (scan_id, r) in results {
        records.push(match r {
            Ok((n, funnel)) => ScanRecord {
                scan_id,
                status: ScanStatus::Ok,
                n_points: Some(n),
                funnel: Some(funnel),
                error: None,
            },
            Err(e) => ScanRecord {
                scan_id,
                status: ScanStatus::Failed,
                n_points: None,
                funnel: None,
                error: Some(e.to_string()),
            },
        });
    }
    let manifest = RunManifest {
        config_hash: cfg.config_hash(),
        engine: EngineConfig {
            threads: None,
            ..cfg.engine.clone()
        },
        cameras: shared
            .cameras
            .as_ref()
            .map_or_else(|| d.cameras.clone(), |c| c.iter().map(|c| c.camera_id.clone()).collect()),
        scans: records,
    };
    let mp = d.output.join("manifest.json");
    fs::write(&mp, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))?;
    Ok(manifest)
}
