//! Subcommand front end: every invocation reads a TOML config, owns one output
//! directory and leaves a [`RunManifest`] behind.

pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{load_config, parse_config};
pub use manifest::{find_orphans, sha256_file, ArtifactDir, ArtifactRecord, DirLock, RunManifest, MANIFEST_FILE};

use crate::data::{
    self, io, prepare_dataset, LinearInterpolation, PreparedDataset, ProvenanceGuard,
};
use crate::error::{Error, Result};
use crate::evaluation::protocol::{
    finetune_horizons, pretrain_checkpoint, run_ablation, run_transfer, run_zero_shot, FinetunedSet,
    PartitionedOutcome,
};
use crate::evaluation::{evaluate_with_forecasts, scatter_rows, write_scatter_csv, ExperimentConfig, MetricReport};
use crate::finetune::write_forecast_csv;
use crate::model::checkpoint::Checkpoint;
use crate::model::Model;
use crate::pretrain::write_log_jsonl;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

pub const ENV_ARTIFACT_ROOT: &str = "GASFM_ARTIFACT_ROOT";
pub const ENV_THREADS: &str = "GASFM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gasfm", version, about = "Pretrain, fine-tune and evaluate multi-customer gas demand forecasters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration; an empty file means all defaults.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory. Relative paths resolve under $GASFM_ARTIFACT_ROOT.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic raw readings and customer metadata.
    SynthData(Common),
    /// Consolidate, screen and impute raw readings into a dataset.
    PrepareData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        readings: PathBuf,
        #[arg(long)]
        metadata: Option<PathBuf>,
    },
    /// Self-supervised pretraining on every customer's training region.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Fine-tune one forecast head per planned horizon.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Starting checkpoint; omit to fine-tune from random initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Test-window metrics and forecasts for fine-tuned checkpoints.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        /// Checkpoints to compare against per customer.
        #[arg(long, num_args = 1..)]
        baseline: Vec<PathBuf>,
    },
    /// Pretrain on one customer part, fine-tune and test on the other.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Pretrain and fine-tune on one part, test on the other without updates.
    ZeroShot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Every configured ablation variant at the ablation horizon.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Validate the outputs of a previous run and summarize its metrics.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthData(_) => "synth-data",
            Command::PrepareData { .. } => "prepare-data",
            Command::Pretrain { .. } => "pretrain",
            Command::Finetune { .. } => "finetune",
            Command::Evaluate { .. } => "evaluate",
            Command::Transfer { .. } => "transfer",
            Command::ZeroShot { .. } => "zero-shot",
            Command::Ablation { .. } => "ablation",
            Command::Report { .. } => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::SynthData(c) => c,
            Command::PrepareData { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Finetune { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Transfer { common, .. }
            | Command::ZeroShot { common, .. }
            | Command::Ablation { common, .. }
            | Command::Report { common, .. } => common,
        }
    }
}

/// Exit code for a pipeline error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        Error::Data(_)
        | Error::Imputation { .. }
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Checkpoint(_)
        | Error::IncompatibleCheckpoint { .. } => EXIT_DATA,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

fn error_kind(code: i32) -> &'static str {
    match code {
        EXIT_USAGE => "usage",
        EXIT_DATA => "data",
        _ => "runtime",
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    exit_code: i32,
    message: &'a str,
}

fn report_error(code: i32, message: &str) -> i32 {
    let r = ErrorReport { error: error_kind(code), exit_code: code, message };
    eprintln!("{}", serde_json::to_string(&r).unwrap_or_else(|_| message.to_string()));
    code
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Failures print one JSON object on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            return report_error(EXIT_USAGE, e.to_string().trim());
        }
    };
    configure_threads();
    match dispatch(&cli.command) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            EXIT_OK
        }
        Err(e) => report_error(exit_code(&e), &e.to_string()),
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(ENV_THREADS).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        // A pool may already exist when called from a test harness; that is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// `out` if absolute, else joined onto the artifact root; defaults to
/// `<root>/<command>`.
pub fn resolve_out(out: Option<&Path>, command: &str) -> PathBuf {
    let root = std::env::var_os(ENV_ARTIFACT_ROOT).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    match out {
        Some(p) if p.is_absolute() => p.to_path_buf(),
        Some(p) => root.join(p),
        None => root.join(command),
    }
}

/// Runs one subcommand and returns the written manifest path.
pub fn dispatch(cmd: &Command) -> Result<PathBuf> {
    let common = cmd.common();
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg = match cmd {
            Command::SynthData(_) => {
                cfg.data.synth_seed = seed;
                cfg
            }
            _ => cfg.with_seed(seed),
        };
    }
    let seed = match cmd {
        Command::SynthData(_) | Command::PrepareData { .. } => cfg.data.synth_seed,
        _ => cfg.pretrain.seed,
    };
    let name = cmd.name();
    let manifest = RunManifest::new(name, seed, serde_json::to_value(&cfg)?);
    let mut out = ArtifactDir::open(resolve_out(common.out.as_deref(), name), manifest)?;
    match cmd {
        Command::SynthData(_) => synth_data(&cfg, &mut out)?,
        Command::PrepareData { readings, metadata, .. } => prepare_data(&cfg, readings, metadata.as_deref(), &mut out)?,
        Command::Pretrain { dataset, .. } => {
            let data = load_dataset(dataset, &cfg, &mut out)?;
            cmd_pretrain(&cfg, &data, &mut out)?
        }
        Command::Finetune { dataset, checkpoint, .. } => {
            let data = load_dataset(dataset, &cfg, &mut out)?;
            cmd_finetune(&cfg, &data, checkpoint.as_deref(), &mut out)?
        }
        Command::Evaluate { dataset, checkpoint, baseline, .. } => {
            let data = load_dataset(dataset, &cfg, &mut out)?;
            cmd_evaluate(&cfg, &data, checkpoint, baseline, &mut out)?
        }
        Command::Transfer { dataset, .. } => {
            let data = load_dataset(dataset, &cfg, &mut out)?;
            let t = Instant::now();
            let outcome = run_transfer(&data, &cfg)?;
            out.time("transfer", t);
            write_partitioned(&outcome, &mut out)?
        }
        Command::ZeroShot { dataset, .. } => {
            let data = load_dataset(dataset, &cfg, &mut out)?;
            let t = Instant::now();
            let outcome = run_zero_shot(&data, &cfg)?;
            out.time("zero_shot", t);
            write_partitioned(&outcome, &mut out)?
        }
        Command::Ablation { dataset, .. } => {
            let data = load_dataset(dataset, &cfg, &mut out)?;
            cmd_ablation(&cfg, &data, &mut out)?
        }
        Command::Report { manifest, .. } => cmd_report(manifest, &mut out)?,
    }
    out.finish()
}

fn load_dataset(path: &Path, cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<PreparedDataset> {
    let t = Instant::now();
    let fp = out.input(path)?;
    out.manifest.dataset_fingerprint = Some(fp);
    let series = io::read_dataset_jsonl(path)?;
    let data = PreparedDataset::new(&series, cfg.data.split)?;
    if data.is_empty() {
        return Err(Error::data(format!("{}: no customer long enough to split", path.display())));
    }
    out.time("load_dataset", t);
    Ok(data)
}

fn synth_data(cfg: &ExperimentConfig, out: &mut ArtifactDir) -> Result<()> {
    let t = Instant::now();
    let seed = cfg.data.synth_seed;
    let (series, manifest) = data::generate_synthetic_dataset(&cfg.data.synth, seed)?;
    let readings = data::explode_to_readings(&series, seed);
    io::write_readings_csv(&out.path("readings.csv"), &readings)?;
    out.record("readings.csv")?;
    io::write_metadata_csv(&out.path("metadata.csv"), &series)?;
    out.record("metadata.csv")?;
    io::write_manifest(&out.path("dataset_manifest.json"), &manifest)?;
    out.record("dataset_manifest.json")?;
    out.manifest.dataset_fingerprint = Some(sha256_file(&out.path("readings.csv"))?);
    out.time("synth_data", t);
    Ok(())
}

fn prepare_data(cfg: &ExperimentConfig, readings: &Path, metadata: Option<&Path>, out: &mut ArtifactDir) -> Result<()> {
    let t = Instant::now();
    out.manifest.dataset_fingerprint = Some(out.input(readings)?);
    let raw = io::read_readings(readings)?;
    let meta = match metadata {
        Some(p) => {
            out.input(p)?;
            io::read_metadata_csv(p)?
        }
        None => Vec::new(),
    };
    let (series, report) = prepare_dataset(&raw, &meta, &cfg.data.prepare, &LinearInterpolation)?;
    io::write_dataset_jsonl(&out.path("dataset.jsonl"), &series)?;
    out.record("dataset.jsonl")?;
    io::write_manifest(&out.path("dataset_manifest.json"), &data::DatasetManifest::from_series(&series))?;
    out.record("dataset_manifest.json")?;
    out.write_json("prepare_report.json", &report)?;
    out.time("prepare_data", t);
    Ok(())
}

fn cmd_pretrain(cfg: &ExperimentConfig, data: &PreparedDataset, out: &mut ArtifactDir) -> Result<()> {
    let t = Instant::now();
    let mut guard = ProvenanceGuard::open();
    let (ck, log, _) = pretrain_checkpoint(data, cfg, &mut guard)?;
    out.time("pretrain", t);
    ck.save(&out.path("pretrained.safetensors"))?;
    out.record("pretrained.safetensors")?;
    write_log_jsonl(&out.path("pretrain_log.jsonl"), &log)?;
    out.record("pretrain_log.jsonl")
}

fn write_finetuned(set: &FinetunedSet, out: &mut ArtifactDir) -> Result<()> {
    for (h, ck) in &set.checkpoints {
        let name = format!("finetuned_h{h}.safetensors");
        ck.save(&out.path(&name))?;
        out.record(&name)?;
        out.write_json(&format!("curve_h{h}.json"), &set.curves[h])?;
    }
    Ok(())
}

fn cmd_finetune(cfg: &ExperimentConfig, data: &PreparedDataset, checkpoint: Option<&Path>, out: &mut ArtifactDir) -> Result<()> {
    let base = match checkpoint {
        Some(p) => {
            out.input(p)?;
            let ck = Checkpoint::load(p)?;
            ck.check_patch(&cfg.patch)?;
            ck
        }
        None => Checkpoint::new(Model::new(cfg.model.clone(), cfg.patch)?),
    };
    let t = Instant::now();
    let mut guard = ProvenanceGuard::open();
    let set = finetune_horizons(&base, data, cfg, &cfg.plan.horizons, &mut guard)?;
    out.time("finetune", t);
    write_finetuned(&set, out)
}

fn evaluate_checkpoints(
    cfg: &ExperimentConfig,
    data: &PreparedDataset,
    paths: &[PathBuf],
    out: &mut ArtifactDir,
    keep_forecasts: bool,
) -> Result<(MetricReport, Vec<crate::finetune::ForecastRow>)> {
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    let mut forecasts = Vec::new();
    for p in paths {
        out.input(p)?;
        let ck = Checkpoint::load(p)?;
        ck.check_patch(&cfg.patch)?;
        let horizons = ck.model.forecast_horizons();
        if horizons.is_empty() {
            return Err(Error::data(format!("{} has no forecast head; fine-tune it first", p.display())));
        }
        let (r, f) = evaluate_with_forecasts(&ck.model, data, &horizons, &cfg.evaluation, keep_forecasts)?;
        rows.extend(r.rows);
        excluded.extend(r.excluded);
        forecasts.extend(f);
    }
    Ok((MetricReport::from_rows(rows, excluded), forecasts))
}

fn write_report(report: &MetricReport, stem: &str, out: &mut ArtifactDir) -> Result<()> {
    let csv = format!("{stem}.csv");
    report.write_csv(&out.path(&csv))?;
    out.record(&csv)?;
    let json = format!("{stem}_summary.json");
    report.write_json_summary(&out.path(&json))?;
    out.record(&json)
}

fn cmd_evaluate(
    cfg: &ExperimentConfig,
    data: &PreparedDataset,
    checkpoints: &[PathBuf],
    baselines: &[PathBuf],
    out: &mut ArtifactDir,
) -> Result<()> {
    let t = Instant::now();
    let (report, forecasts) = evaluate_checkpoints(cfg, data, checkpoints, out, true)?;
    write_report(&report, "metrics", out)?;
    write_forecast_csv(&out.path("forecasts.csv"), &forecasts)?;
    out.record("forecasts.csv")?;
    if !baselines.is_empty() {
        let (base, _) = evaluate_checkpoints(cfg, data, baselines, out, false)?;
        write_report(&base, "baseline_metrics", out)?;
        let scatter: Vec<_> = report.horizons().into_iter().flat_map(|h| scatter_rows(&report, &base, h)).collect();
        write_scatter_csv(&out.path("scatter.csv"), &scatter)?;
        out.record("scatter.csv")?;
    }
    out.time("evaluate", t);
    Ok(())
}

fn write_partitioned(outcome: &PartitionedOutcome, out: &mut ArtifactDir) -> Result<()> {
    write_report(&outcome.report, "metrics", out)?;
    out.write_json("provenance.json", &outcome.provenance)?;
    write_finetuned(&outcome.finetuned, out)?;
    if outcome.provenance.violations > 0 || outcome.provenance.lineage_leaks > 0 {
        return Err(Error::Provenance(format!("{:?}", outcome.provenance)));
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationSummary<'a> {
    variant: &'a str,
    label: &'a str,
    config_diff: &'a [String],
    similarity_evaluations: usize,
    overall: &'a crate::evaluation::Aggregate,
}

fn cmd_ablation(cfg: &ExperimentConfig, data: &PreparedDataset, out: &mut ArtifactDir) -> Result<()> {
    let t = Instant::now();
    let runs = run_ablation(data, cfg)?;
    out.time("ablation", t);
    let mut summary = Vec::new();
    for r in &runs {
        write_report(&r.report, &format!("metrics_{}", r.variant.slug()), out)?;
        summary.push(AblationSummary {
            variant: r.variant.slug(),
            label: r.variant.label(),
            config_diff: &r.config_diff,
            similarity_evaluations: r.similarity_evaluations,
            overall: &r.report.overall,
        });
    }
    out.write_json("ablation.json", &summary)
}

#[derive(Debug, Serialize)]
struct ReportFile {
    path: String,
    rows: usize,
    per_horizon: Vec<crate::evaluation::Aggregate>,
}

/// Checks every artifact hash of a previous run, parses each metric CSV
/// against the row schema and each JSON artifact, then writes a summary.
fn cmd_report(manifest_path: &Path, out: &mut ArtifactDir) -> Result<()> {
    let t = Instant::now();
    out.input(manifest_path)?;
    let run = RunManifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let stale = run.verify(dir)?;
    if !stale.is_empty() {
        return Err(Error::data(format!("artifacts missing or modified since the run: {}", stale.join(", "))));
    }
    let mut files = Vec::new();
    for a in &run.artifacts {
        let p = dir.join(&a.path);
        if a.path.ends_with(".json") {
            serde_json::from_slice::<serde_json::Value>(&std::fs::read(&p)?)?;
        }
        let is_metrics = a.path.ends_with(".csv") && (a.path.starts_with("metrics") || a.path.starts_with("baseline_metrics"));
        if is_metrics {
            let rows = MetricReport::read_csv(&p)?;
            let r = MetricReport::from_rows(rows, Vec::new());
            files.push(ReportFile { path: a.path.clone(), rows: r.rows.len(), per_horizon: r.per_horizon });
        }
    }
    if files.is_empty() {
        return Err(Error::data(format!("{} lists no metric CSV", manifest_path.display())));
    }
    out.write_json("report.json", &files)?;
    let mut md = format!("# {} run\n\n| file | horizon | customers | MSE | MAE | SMAPE | MASE |\n|---|---|---|---|---|---|---|\n", run.command);
    for f in &files {
        for a in &f.per_horizon {
            md.push_str(&format!(
                "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {} |\n",
                f.path,
                a.horizon.map_or("-".into(), |h| h.to_string()),
                a.customers,
                a.mse,
                a.mae,
                a.smape,
                a.mase.map_or("n/a".into(), |m| format!("{m:.4}")),
            ));
        }
    }
    std::fs::write(out.path("report.md"), md)?;
    out.record("report.md")?;
    out.time("report", t);
    Ok(())
}
