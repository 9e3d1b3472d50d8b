use std::path::{Path, PathBuf};

use clap::Args;
use llf_core::cloud::load_point_cloud;
use llf_core::eval::{apply_semantic_oracle, frustum_filter, merge_stuff, EvalOptions, PanopticEvaluator};
use llf_core::labels::read_labels;
use llf_core::stats::LabelStatsAccumulator;
use llf_core::zeroshot::map_to_super_classes;
use llf_core::{CameraModel, Error, Vocabulary};

use crate::io::{list_files, load_cameras, scan_file, stem};
use crate::{CalibArgs, Outcome};

/// Frustum restriction: scans plus the cameras to project them into.
#[derive(Args, Debug)]
pub struct FrustumArgs {
    /// Only count points that project into a camera
    #[arg(long, requires_all = ["clouds", "calib"])]
    pub frustum: bool,
    /// Scan file or directory of <scan>.bin
    #[arg(long)]
    pub clouds: Option<PathBuf>,
    /// Calibration file (.json, or KITTI text with --image-size)
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long, value_parser = crate::io::parse_image_size)]
    pub image_size: Option<(u32, u32)>,
    #[arg(long, value_delimiter = ',')]
    pub cameras: Vec<String>,
}

impl FrustumArgs {
    fn cameras(&self) -> anyhow::Result<Option<Vec<CameraModel>>> {
        if !self.frustum {
            return Ok(None);
        }
        let calib = CalibArgs {
            calib: self.calib.clone().expect("clap requires --calib"),
            image_size: self.image_size,
            cameras: self.cameras.clone(),
        };
        load_cameras(&calib).map(Some)
    }

    fn mask(&self, cameras: Option<&[CameraModel]>, scan: &str, n_points: usize) -> anyhow::Result<Option<Vec<bool>>> {
        let Some(cams) = cameras else {
            return Ok(None);
        };
        let root = self.clouds.as_deref().expect("clap requires --clouds");
        let cloud = load_point_cloud(scan_file(root, scan, "bin"))?;
        if cloud.len() != n_points {
            return Err(Error::LengthMismatch {
                expected: cloud.len(),
                actual: n_points,
            }
            .into());
        }
        Ok(Some(frustum_filter(&cloud, cams)?))
    }
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Predicted .label file or directory
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth .label file or directory (files paired by name)
    #[arg(long)]
    pub gt: PathBuf,
    /// Builtin vocabulary name or vocabulary JSON
    #[arg(long, default_value = "semantickitti")]
    pub vocab: String,
    /// Ground truth carries raw dataset ids; remap them through the vocabulary
    #[arg(long)]
    pub raw_gt: bool,
    /// Evaluate on super classes
    #[arg(long)]
    pub super_classes: bool,
    /// Replace predicted classes by the ground-truth majority per instance
    #[arg(long)]
    pub oracle: bool,
    /// Collapse each predicted stuff class into one instance
    #[arg(long)]
    pub merge_stuff: bool,
    /// Key stuff segments by class only
    #[arg(long)]
    pub stuff_per_class: bool,
    #[command(flatten)]
    pub frustum: FrustumArgs,
    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

fn pairs(pred: &Path, gt: &Path) -> anyhow::Result<Vec<(String, PathBuf, PathBuf)>> {
    if !gt.is_dir() {
        return Ok(vec![(stem(gt), pred.to_path_buf(), gt.to_path_buf())]);
    }
    if !pred.is_dir() {
        return Err(Error::Config("--gt is a directory, so --pred must be one too".into()).into());
    }
    list_files(gt, "label")?
        .into_iter()
        .map(|g| {
            let p = pred.join(g.file_name().expect("listed file"));
            if !p.is_file() {
                return Err(Error::Invalid(format!("no prediction {} for {}", p.display(), g.display())).into());
            }
            Ok((stem(&g), p, g))
        })
        .collect()
}

pub fn evaluate(a: EvaluateArgs) -> anyhow::Result<Outcome> {
    let vocab = Vocabulary::resolve(&a.vocab)?;
    let eval_vocab = if a.super_classes {
        Vocabulary::builtin("super_classes")?
    } else {
        vocab.clone()
    };
    let cameras = a.frustum.cameras()?;
    let mut protocols = Vec::new();
    for (on, name) in [
        (a.raw_gt, "raw_gt"),
        (a.super_classes, "super_classes"),
        (a.oracle, "oracle"),
        (a.merge_stuff, "merge_stuff"),
        (a.frustum.frustum, "frustum"),
    ] {
        if on {
            protocols.push(name.to_string());
        }
    }
    let mut ev = PanopticEvaluator::new(&eval_vocab);
    for (scan, pred_path, gt_path) in pairs(&a.pred, &a.gt)? {
        let mut gt = read_labels(&gt_path, None)?;
        let mut pred = read_labels(&pred_path, Some(gt.len()))?;
        if a.raw_gt {
            gt = vocab.remap_raw_labels(&gt);
        }
        if a.super_classes {
            gt = map_to_super_classes(&gt, &vocab)?;
            if !a.oracle {
                pred = map_to_super_classes(&pred, &vocab)?;
            }
        }
        if a.oracle {
            pred = apply_semantic_oracle(&pred, &gt)?;
        }
        if a.merge_stuff {
            pred = merge_stuff(&pred, &eval_vocab);
        }
        let opts = EvalOptions {
            frustum_mask: a.frustum.mask(cameras.as_deref(), &scan, gt.len())?,
            stuff_per_class: a.stuff_per_class,
        };
        ev.add_scan(&pred, &gt, &opts)?;
    }
    let report = ev.report(protocols);
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(Outcome::Done)
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// .label file or directory
    #[arg(long)]
    pub labels: PathBuf,
    /// Vocabulary for the thing/stuff split
    #[arg(long)]
    pub vocab: Option<String>,
    #[command(flatten)]
    pub frustum: FrustumArgs,
    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

pub fn stats(a: StatsArgs) -> anyhow::Result<Outcome> {
    let vocab = a.vocab.as_deref().map(Vocabulary::resolve).transpose()?;
    let cameras = a.frustum.cameras()?;
    let mut acc = LabelStatsAccumulator::new(vocab.as_ref());
    for path in list_files(&a.labels, "label")? {
        let labeling = read_labels(&path, None)?;
        let mask = a.frustum.mask(cameras.as_deref(), &stem(&path), labeling.len())?;
        acc.add_scan(&labeling, labeling.len(), mask.as_deref())?;
    }
    let s = acc.finish();
    if a.json {
        println!("{}", s.to_json());
    } else {
        print!("{}", s.to_table());
    }
    Ok(Outcome::Done)
}
