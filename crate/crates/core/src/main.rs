use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crlm_core::evalkit::{evaluate_case, summarize, write_case_csv};
use crlm_core::pipeline::{run_until, simulate_study, PipelineError, RunConfig, RunManifest, Stage, StudySpec};
use crlm_core::promptseg::{segmenter_by_name, PromptPoint};
use crlm_core::samonai::{samonai_segment, PropagationConfig};
use crlm_core::synthgen::{generate_cohort, write_cohort_csv, CohortSpec};
use crlm_core::volgrid::{load_mask, load_volume, save_mask, Label, Mask3D, SliceAddress, View};

#[derive(Parser)]
#[command(name = "crlm", version, about = "Liver metastasis segmentation and survival modelling")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complete and post-process masks for every case in the data root.
    Segment,
    /// Propagate a single prompt through one volume.
    Samonai(SamonaiArgs),
    /// Segment, post-process and extract radiomics features.
    Features,
    /// Everything up to cross-validated SurvAMINN training.
    Train,
    /// Full batch run including the statistics reports.
    Stats,
    /// Alias of `stats`.
    Run,
    /// Score predicted masks against references.
    Evaluate(EvaluateArgs),
    /// Write a synthetic study (phantoms, labels, survival table, config).
    Simulate(SimulateArgs),
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        addr: Option<String>,
    },
}

#[derive(Args)]
struct SamonaiArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long, default_value = "axial")]
    view: View,
    #[arg(long)]
    index: usize,
    #[arg(long)]
    row: usize,
    #[arg(long)]
    col: usize,
    /// Extra negative prompts as `row,col`.
    #[arg(long = "negative", value_parser = parse_point)]
    negatives: Vec<(usize, usize)>,
    #[arg(long, default_value = "region-grow")]
    segmenter: String,
    /// Propagation config overrides as `key=value` (JSON values).
    #[arg(long = "set", value_parser = parse_kv)]
    overrides: Vec<(String, serde_json::Value)>,
    #[arg(long, default_value = "tumor")]
    label: String,
    /// Output mask path (.nii or .nii.gz).
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of predicted masks.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of reference masks with matching file names.
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 24)]
    patients: usize,
    #[arg(long, default_value_t = 48)]
    size: usize,
    #[arg(long, default_value_t = 2.0)]
    spacing: f64,
    #[arg(long, default_value_t = 0.25)]
    partial_fraction: f64,
    /// Also write a feature-level bag cohort of this size.
    #[arg(long)]
    cohort: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Other(String),
}

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

fn parse_point(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or("expected row,col")?;
    Ok((r.trim().parse().map_err(|e| format!("{e}"))?, c.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_kv(s: &str) -> Result<(String, serde_json::Value), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_root = out.clone();
    }
    Ok(cfg)
}

fn batch(cli: &Cli, last: Stage) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let manifest: RunManifest = run_until(&cfg, last)?;
    for s in &manifest.stages {
        println!("{:<12} {} artifacts {}", s.stage.to_string(), s.artifacts.len(), s.notes.join("; "));
    }
    println!("manifest: {}", cfg.output_root.join("manifest.json").display());
    Ok(())
}

fn samonai(cli: &Cli, a: &SamonaiArgs) -> Result<(), CliError> {
    let volume = load_volume(&a.volume).map_err(other)?;
    let segmenter = segmenter_by_name(&a.segmenter).map_err(other)?;
    let mut cfg = match &cli.config {
        Some(_) => load_config(cli)?.samonai,
        None => PropagationConfig::default(),
    };
    if !a.overrides.is_empty() {
        let mut v = serde_json::to_value(&cfg).map_err(other)?;
        for (k, val) in &a.overrides {
            match v.get_mut(k) {
                Some(slot) => *slot = val.clone(),
                None => return Err(CliError::Usage(format!("unknown propagation setting {k}"))),
            }
        }
        cfg = serde_json::from_value(v).map_err(other)?;
    }
    let label: Label = serde_json::from_value(serde_json::Value::String(a.label.clone())).map_err(other)?;
    let mut prompts = vec![PromptPoint::positive(a.row, a.col)];
    prompts.extend(a.negatives.iter().map(|&(r, c)| PromptPoint::negative(r, c)));
    let res = samonai_segment(&volume, SliceAddress::new(a.view, a.index), &prompts, segmenter.as_ref(), &cfg)
        .map_err(other)?;
    let labels = res.mask.data().iter().map(|&b| if b { label } else { Label::Background }).collect();
    let mask = Mask3D::new(*volume.geometry(), labels).map_err(other)?;
    save_mask(&a.output, &mask).map_err(other)?;
    println!("{} voxels, threshold {:.4}, written to {}", mask.count(label), res.threshold, a.output.display());
    Ok(())
}

fn mask_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| other(format!("{}: {e}", dir.display())))? {
        let path = entry.map_err(other)?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if let Some(stem) = name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii")) {
            out.push((stem.to_string(), path));
        }
    }
    out.sort();
    Ok(out)
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<(), CliError> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(other)?;
    let gt: std::collections::BTreeMap<String, PathBuf> = mask_files(&a.gt)?.into_iter().collect();
    let mut rows = Vec::new();
    for (case, path) in mask_files(&a.pred)? {
        let Some(gt_path) = gt.get(&case) else {
            eprintln!("warning: no reference for {case}");
            continue;
        };
        let pred = load_mask(&path).map_err(other)?;
        let reference = load_mask(gt_path).map_err(other)?;
        rows.push(evaluate_case(&case, &pred, &reference).map_err(other)?);
    }
    if rows.is_empty() {
        return Err(CliError::Usage("no matching cases".into()));
    }
    let csv_path = out.join("evaluation.csv");
    write_case_csv(&rows, std::fs::File::create(&csv_path).map_err(other)?).map_err(other)?;
    let summary = summarize(&rows);
    let text = serde_json::to_string_pretty(&summary).map_err(other)?;
    std::fs::write(out.join("evaluation_summary.json"), &text).map_err(other)?;
    println!("{text}");
    Ok(())
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), CliError> {
    let dir = cli.out.clone().ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let seed = cli.seed.unwrap_or(0);
    let spec = StudySpec {
        patients: a.patients,
        dims: [a.size; 3],
        spacing: [a.spacing; 3],
        partial_fraction: a.partial_fraction,
        seed,
        ..Default::default()
    };
    simulate_study(&spec, &dir)?;
    if let Some(n) = a.cohort {
        let cohort = generate_cohort(&CohortSpec::single_feature(n, 8, 0, 2.0, seed)).map_err(other)?;
        let cdir = dir.join("cohort");
        std::fs::create_dir_all(&cdir).map_err(other)?;
        write_cohort_csv(&cohort, &cdir).map_err(other)?;
    }
    println!("study written to {}; run with --config {}", dir.display(), dir.join("config.json").display());
    Ok(())
}

fn serve(cli: &Cli, addr: &Option<String>) -> Result<(), CliError> {
    let mut cfg = load_config(cli)?;
    if let Some(a) = addr {
        cfg.server.addr = a.clone();
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(other)?;
    eprintln!("listening on http://{}", cfg.server.addr);
    rt.block_on(crlm_core::pipeline::server::serve(&cfg))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Segment => batch(&cli, Stage::Postprocess),
        Command::Samonai(a) => samonai(&cli, a),
        Command::Features => batch(&cli, Stage::Features),
        Command::Train => batch(&cli, Stage::Train),
        Command::Stats | Command::Run => batch(&cli, Stage::Stats),
        Command::Evaluate(a) => evaluate(&cli, a),
        Command::Simulate(a) => simulate(&cli, a),
        Command::Serve { addr } => serve(&cli, addr),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
