use std::path::PathBuf;

use clap::{ArgGroup, Args};
use llf_core::labels::write_labels;
use llf_core::pipeline::{run_pipeline, PipelineConfig, RunOptions, THREADS_ENV};
use llf_core::refine::RefineStrategy;
use llf_core::segment::{read_segments, segments_to_labeling, LidarSegment};
use llf_core::zeroshot::{
    attach_embeddings, build_prompt_manifest, classify_segments, prompt_query, read_embedding_matrix,
    DISPLAY_TEMPERATURE,
};
use llf_core::{PanopticLabel, PanopticLabeling, Vocabulary};
use serde_json::json;

use crate::geometry::Strategy;
use crate::io::{config_error, ensure_parent, write_text};
use crate::Outcome;

#[derive(Args, Debug)]
pub struct PseudoLabelArgs {
    /// Pipeline config (TOML)
    #[arg(long)]
    pub config: PathBuf,
    /// Stop at the first failing scan (exit 2)
    #[arg(long, conflicts_with = "keep_going")]
    pub fail_fast: bool,
    /// Record failing scans and continue (exit 3 if any failed); the default
    #[arg(long)]
    pub keep_going: bool,
    /// Worker count; overrides the config and LLF_THREADS
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub fusion_iou: Option<f64>,
    #[arg(long)]
    pub dbscan_overlap: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    #[arg(long)]
    pub min_pts: Option<usize>,
    #[arg(long, value_enum)]
    pub refine: Option<Strategy>,
    /// Output directory; overrides the config
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn pseudo_label(a: PseudoLabelArgs) -> anyhow::Result<Outcome> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    let e = &mut cfg.engine;
    if let Some(v) = a.nms_iou {
        e.nms_iou = v;
    }
    if let Some(v) = a.fusion_iou {
        e.fusion_iou = v;
    }
    if let Some(v) = a.dbscan_overlap {
        e.dbscan_overlap = v;
    }
    if let Some(v) = a.epsilons {
        e.epsilons = v;
    }
    if let Some(v) = a.min_pts {
        e.min_pts = v;
    }
    if let Some(v) = a.refine {
        e.refine = match v {
            Strategy::Replace => RefineStrategy::Replace,
            Strategy::Filter => RefineStrategy::Filter,
            Strategy::None => RefineStrategy::None,
        };
    }
    if let Some(n) = a.threads {
        if n == 0 {
            return Err(config_error("--threads must be at least 1"));
        }
        // the worker count resolves the environment first
        std::env::set_var(THREADS_ENV, n.to_string());
    }
    if let Some(o) = a.output {
        cfg.dataset.output = o;
    }
    cfg.engine.validate()?;
    let manifest = run_pipeline(
        &cfg,
        RunOptions {
            fail_fast: a.fail_fast,
        },
    )?;
    let failed = manifest.failures();
    let segments: usize = manifest.scans.iter().filter_map(|s| s.funnel).map(|f| f.segments).sum();
    println!(
        "config {}: {} scans, {} segments, {} failed, output {}",
        &manifest.config_hash[..12],
        manifest.scans.len(),
        segments,
        failed,
        cfg.dataset.output.display()
    );
    for s in manifest.scans.iter().filter(|s| s.error.is_some()) {
        eprintln!("scan {}: {}", s.scan_id, s.error.as_deref().unwrap_or_default());
    }
    Ok(if failed > 0 { Outcome::Partial } else { Outcome::Done })
}

fn load_vocab(name: &str, embeddings: &PathBuf) -> anyhow::Result<Vocabulary> {
    let v = Vocabulary::resolve(name)?;
    Ok(attach_embeddings(v, &read_embedding_matrix(embeddings)?)?)
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    /// Segment table (.segments.json)
    #[arg(long)]
    pub segments: PathBuf,
    /// Builtin vocabulary name or vocabulary JSON
    #[arg(long, default_value = "semantickitti")]
    pub vocab: String,
    /// Embedding matrix header for the vocabulary's prompt manifest
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Write the classified labeling here (.label)
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Softmax temperature of the reported probabilities
    #[arg(long, default_value_t = DISPLAY_TEMPERATURE)]
    pub temperature: f64,
    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

pub fn classify(a: ClassifyArgs) -> anyhow::Result<Outcome> {
    if !(a.temperature > 0.0) {
        return Err(config_error("--temperature must be positive"));
    }
    let vocab = load_vocab(&a.vocab, &a.embeddings)?;
    let (scan_id, n_points, segments) = read_segments(&a.segments)?;
    let scores = classify_segments(&segments, &vocab)?;
    let semantic: Vec<u16> = scores.iter().map(|s| s.best).collect();
    if let Some(out) = &a.output {
        let labeling = segments_to_labeling(&segments, n_points, Some(&semantic))?;
        ensure_parent(out)?;
        write_labels(&labeling, n_points, out)?;
    }
    let rows: Vec<_> = segments
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(k, (seg, sc))| {
            let i = sc.class_ids.iter().position(|&c| c == sc.best).unwrap_or(0);
            let name = vocab.class(sc.best).map_or("", |c| c.name.as_str());
            (k, seg.len(), sc.best, name, sc.best_score(), sc.probabilities(a.temperature)[i])
        })
        .collect();
    if a.json {
        let doc = json!({
            "scan_id": scan_id,
            "vocabulary": vocab.name,
            "segments": rows.iter().map(|r| json!({
                "segment": r.0, "points": r.1, "class_id": r.2, "class": r.3, "score": r.4, "probability": r.5,
            })).collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        println!("{:>7}  {:>8}  {:<20}  {:>7}  {:>7}", "segment", "points", "class", "cosine", "prob");
        for r in rows {
            println!("{:>7}  {:>8}  {:<20}  {:>7.4}  {:>7.4}", r.0, r.1, r.3, r.4, r.5);
        }
    }
    Ok(Outcome::Done)
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    #[arg(long)]
    pub segments: PathBuf,
    /// Free-text query, e.g. "traffic cone"
    #[arg(long)]
    pub text: String,
    /// Embedding matrix header for the query's prompt manifest
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Vocabulary whose templates the query manifest used
    #[arg(long, default_value = "semantickitti")]
    pub templates: String,
    /// Write a labeling with the selected segments as class 1 (.label)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn query_vocab(text: &str, templates: &str) -> anyhow::Result<Vocabulary> {
    let t = Vocabulary::resolve(templates)?.templates;
    Ok(Vocabulary::for_query(text, t)?)
}

pub fn query(a: QueryArgs) -> anyhow::Result<Outcome> {
    let v = query_vocab(&a.text, &a.templates)?;
    let v = attach_embeddings(v, &read_embedding_matrix(&a.embeddings)?)?;
    let (_, n_points, segments) = read_segments(&a.segments)?;
    let selected = prompt_query(&segments, &v)?;
    if let Some(out) = &a.output {
        let chosen: Vec<LidarSegment> = selected.iter().map(|&i| segments[i].clone()).collect();
        let labeling = segments_to_labeling(&chosen, n_points, None)?;
        let labels = labeling
            .labels()
            .iter()
            .map(|l| if l.instance == 0 { *l } else { PanopticLabel::new(1, l.instance) })
            .collect();
        ensure_parent(out)?;
        write_labels(&PanopticLabeling::new(labels), n_points, out)?;
    }
    for i in &selected {
        println!("{i}");
    }
    log::info!("{} of {} segments match {:?}", selected.len(), segments.len(), a.text);
    Ok(Outcome::Done)
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["vocab", "query"])))]
pub struct PromptManifestArgs {
    /// Builtin vocabulary name or vocabulary JSON
    #[arg(long)]
    pub vocab: Option<String>,
    /// Free-text query (manifest of the query and "other")
    #[arg(long)]
    pub query: Option<String>,
    /// Template source for --query
    #[arg(long, default_value = "semantickitti", requires = "query")]
    pub templates: String,
    /// Write here instead of stdout
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn prompt_manifest(a: PromptManifestArgs) -> anyhow::Result<Outcome> {
    let vocab = match (&a.vocab, &a.query) {
        (Some(v), _) => Vocabulary::resolve(v)?,
        (None, Some(q)) => query_vocab(q, &a.templates)?,
        (None, None) => unreachable!("clap requires one source"),
    };
    let text = build_prompt_manifest(&vocab)?.to_text();
    match &a.output {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(Outcome::Done)
}
