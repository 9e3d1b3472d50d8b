use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use llf_core::augment::{crop_unlabeled, franken_frustum, mix_scans, spatial_augment, FrankenParams, SpatialParams};
use llf_core::cloud::{load_point_cloud, write_point_cloud};
use llf_core::labels::{read_labels, write_labels};
use llf_core::{PanopticLabeling, PointCloud};

use crate::io::{config_error, ensure_parent};
use crate::Outcome;

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[command(subcommand)]
    pub op: AugmentOp,
}

/// A labeled scan in, a labeled scan out.
#[derive(Args, Debug)]
pub struct ScanIo {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub output_cloud: PathBuf,
    #[arg(long)]
    pub output_labels: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Subcommand, Debug)]
pub enum AugmentOp {
    /// Drop unlabeled points
    Crop {
        #[command(flatten)]
        io: ScanIo,
    },
    /// Tile the labeled frustum around the sensor
    Franken {
        #[command(flatten)]
        io: ScanIo,
        /// Per-replica rotation jitter (degrees)
        #[arg(long, default_value_t = FrankenParams::default().jitter_deg)]
        jitter_deg: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = FrankenParams::default().max_replicas)]
        max_replicas: usize,
    },
    /// Concatenate a second labeled scan
    Mix {
        #[command(flatten)]
        io: ScanIo,
        #[arg(long)]
        other_cloud: PathBuf,
        #[arg(long)]
        other_labels: PathBuf,
    },
    /// Seeded random flip, z-rotation, scale and translation
    Spatial {
        #[command(flatten)]
        io: ScanIo,
        /// Rotation range about z as LO,HI (degrees)
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [0.0, 0.0])]
        rot_z_deg: Vec<f64>,
        /// Axes that may be mirrored, each with probability 1/2
        #[arg(long, value_enum, value_delimiter = ',')]
        flip: Vec<Axis>,
        /// Scale range as LO,HI
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0])]
        scale: Vec<f64>,
        /// Max absolute translation per axis as X,Y,Z
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.0, 0.0])]
        translate: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_scan(cloud: &PathBuf, labels: &PathBuf) -> anyhow::Result<(PointCloud, PanopticLabeling)> {
    let c = load_point_cloud(cloud)?;
    let l = read_labels(labels, Some(c.len()))?;
    Ok((c, l))
}

fn write_scan(io: &ScanIo, cloud: &PointCloud, labels: &PanopticLabeling) -> anyhow::Result<()> {
    ensure_parent(&io.output_cloud)?;
    ensure_parent(&io.output_labels)?;
    write_point_cloud(cloud, &io.output_cloud)?;
    write_labels(labels, cloud.len(), &io.output_labels)?;
    println!("wrote {} points to {}", cloud.len(), io.output_cloud.display());
    Ok(())
}

pub fn run(a: AugmentArgs) -> anyhow::Result<Outcome> {
    match a.op {
        AugmentOp::Crop { io } => {
            let (c, l) = read_scan(&io.cloud, &io.labels)?;
            let (c, l, _) = crop_unlabeled(&c, &l)?;
            write_scan(&io, &c, &l)?;
        }
        AugmentOp::Franken {
            io,
            jitter_deg,
            seed,
            max_replicas,
        } => {
            if !(jitter_deg.is_finite() && jitter_deg >= 0.0) || max_replicas == 0 {
                return Err(config_error("--jitter-deg must be >= 0 and --max-replicas >= 1"));
            }
            let (c, l) = read_scan(&io.cloud, &io.labels)?;
            let params = FrankenParams {
                jitter_deg,
                seed,
                max_replicas,
            };
            let (c, l) = franken_frustum(&c, &l, &params)?;
            write_scan(&io, &c, &l)?;
        }
        AugmentOp::Mix {
            io,
            other_cloud,
            other_labels,
        } => {
            let a = read_scan(&io.cloud, &io.labels)?;
            let b = read_scan(&other_cloud, &other_labels)?;
            let (c, l) = mix_scans((&a.0, &a.1), (&b.0, &b.1))?;
            write_scan(&io, &c, &l)?;
        }
        AugmentOp::Spatial {
            io,
            rot_z_deg,
            flip,
            scale,
            translate,
            seed,
        } => {
            if rot_z_deg.len() != 2 || scale.len() != 2 || translate.len() != 3 {
                return Err(config_error("--rot-z-deg and --scale take LO,HI; --translate takes X,Y,Z"));
            }
            if rot_z_deg[0] > rot_z_deg[1] || scale[0] > scale[1] || scale[0] <= 0.0 || translate.iter().any(|t| *t < 0.0) {
                return Err(config_error("ranges must be ordered, scale positive, translation non-negative"));
            }
            let params = SpatialParams {
                rot_z_range: [rot_z_deg[0].to_radians(), rot_z_deg[1].to_radians()],
                flip_axes: [Axis::X, Axis::Y, Axis::Z].map(|ax| flip.contains(&ax)),
                scale_range: [scale[0], scale[1]],
                translate_range: [translate[0], translate[1], translate[2]],
                seed,
            };
            let (c, l) = read_scan(&io.cloud, &io.labels)?;
            let c = spatial_augment(&c, &params)?;
            write_scan(&io, &c, &l)?;
        }
    }
    Ok(Outcome::Done)
}
