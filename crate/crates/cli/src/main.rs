mod augment;
mod evaluate;
mod geometry;
mod io;
mod label;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    /// Some scans failed and were recorded (`--keep-going`).
    Partial,
}

#[derive(Parser)]
#[command(name = "llf", version, about = "Lidar pseudo-labels from 2D masks and vision-language tokens")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Log level (error, warn, info, debug, trace)
    #[arg(long, default_value = "warn", global = true)]
    log_level: String,
}

#[derive(Subcommand)]
enum Command {
    /// Flatten a mask hierarchy into disjoint masks
    FlattenMasks(geometry::FlattenArgs),
    /// Lift flattened image masks of one scan to Lidar segments
    Unproject(geometry::UnprojectArgs),
    /// Refine a segment table against the DBSCAN cluster ensemble
    Refine(geometry::RefineArgs),
    /// Run the full label engine over a dataset config
    PseudoLabel(label::PseudoLabelArgs),
    /// Assign vocabulary classes to segments by embedding similarity
    Classify(label::ClassifyArgs),
    /// Select segments matching a single text prompt
    Query(label::QueryArgs),
    /// Score panoptic predictions against ground truth
    Evaluate(evaluate::EvaluateArgs),
    /// Coverage and instance statistics of label files
    Stats(evaluate::StatsArgs),
    /// Build training samples from partially labeled scans
    Augment(augment::AugmentArgs),
    /// Write a colored PLY for inspection
    ExportPly(geometry::ExportPlyArgs),
    /// Print the prompt list an embedding matrix must follow
    PromptManifest(label::PromptManifestArgs),
}

/// Camera geometry shared by the commands that project points.
#[derive(Args, Debug, Clone)]
pub struct CalibArgs {
    /// Calibration file (.json, or KITTI text with --image-size)
    #[arg(long)]
    pub calib: PathBuf,
    /// Image size as WIDTHxHEIGHT, required for KITTI text calibration
    #[arg(long, value_parser = io::parse_image_size)]
    pub image_size: Option<(u32, u32)>,
    /// Restrict to these camera ids
    #[arg(long, value_delimiter = ',')]
    pub cameras: Vec<String>,
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::FlattenMasks(a) => geometry::flatten(a),
        Command::Unproject(a) => geometry::unproject(a),
        Command::Refine(a) => geometry::refine(a),
        Command::PseudoLabel(a) => label::pseudo_label(a),
        Command::Classify(a) => label::classify(a),
        Command::Query(a) => label::query(a),
        Command::Evaluate(a) => evaluate::evaluate(a),
        Command::Stats(a) => evaluate::stats(a),
        Command::Augment(a) => augment::run(a),
        Command::ExportPly(a) => geometry::export_ply(a),
        Command::PromptManifest(a) => label::prompt_manifest(a),
    }
}

/// 1 for configuration problems, 2 for everything else.
fn error_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<llf_core::Error>() {
            return if matches!(e, llf_core::Error::Config(_)) { 1 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn error_codes() {
        let e: anyhow::Error = llf_core::Error::Config("x".into()).into();
        assert_eq!(error_code(&e), 1);
        let e: anyhow::Error = llf_core::Error::Invalid("x".into()).into();
        assert_eq!(error_code(&e), 2);
        assert_eq!(error_code(&e.context("while reading")), 2);
        assert_eq!(error_code(&anyhow::anyhow!("plain")), 2);
    }
}
