//! Command-line driver: one experiment or report per invocation.
//!
//! Run directories hold `config.resolved.toml`, `metrics.csv`,
//! `prune_events.jsonl`, `final.ckpt`, `best.ckpt` and `summary.json`.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointInfo};
use super::config::{ExperimentConfig, Overrides, PruneMethod};
use super::metrics::MetricsLog;
use super::reports;
use crate::error::{Error, Result};
use crate::pruning::{
    compact, evaluate, run_epochs, write_event, ClsPruner, EpochMetrics, PruneEvent, PruneMode, Pruner, RunObserver,
    RunOutcome, RunState, WlsPruner,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "prune_events.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Parser)]
#[command(name = "screenprune", version, about = "F-statistic screening pruning workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train without pruning.
    Train(RunArgs),
    /// Train and prune with the method configured under [prune].
    Prune(RunArgs),
    /// Test error of a checkpoint on the configured test set.
    Evaluate(EvaluateArgs),
    /// Tables and plot data computed from a checkpoint (or an alpha sweep).
    Report(ReportArgs),
    /// Write a dense layer's weight mask as a PGM grid.
    ExportMask(ExportMaskArgs),
    /// Remove dead units and masked channels; writes compact.ckpt.
    Compact(CompactArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML); may name a built-in profile.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Kept fraction, applied to every group.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Dataset root; falls back to $SCREENPRUNE_DATA, then ./data.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
}

impl ConfigArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            output: self.output.clone(),
            seed: self.seed,
            alpha: self.alpha,
            ratio: self.ratio,
            data_root: self.data_root.clone(),
        }
    }

    fn load(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::load(&self.config, &self.overrides())
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Continue the run in the output directory from its final.ckpt.
    #[arg(long, conflicts_with = "init")]
    pub resume: bool,
    /// Start from this checkpoint's network, optimizer state and epoch.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Compression,
    Channels,
    Histogram,
    AlphaSweep,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_enum)]
    pub kind: ReportKind,
    /// Checkpoint to report on (all kinds except alpha-sweep).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Experiment config (alpha-sweep only).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for the CSV file; defaults to the checkpoint's directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.4, 0.6, 0.8, 1.0])]
    pub alphas: Vec<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportMaskArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "fc1")]
    pub layer: String,
    /// Output file; defaults to `<layer>_mask.pgm` next to the checkpoint.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompactArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output file; defaults to `compact.ckpt` next to the checkpoint.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// End-of-run summary written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub alpha: f64,
    pub epochs: usize,
    pub best_error: f64,
    pub best_epoch: usize,
    pub final_error: f64,
    pub sparsity: f64,
    pub kept: Vec<usize>,
    pub config_digest: String,
}

impl RunSummary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => run_experiment(&a, false).map(|_| ()),
        Command::Prune(a) => run_experiment(&a, true).map(|_| ()),
        Command::Evaluate(a) => evaluate_command(&a),
        Command::Report(a) => report_command(&a),
        Command::ExportMask(a) => export_mask_command(&a),
        Command::Compact(a) => compact_command(&a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn method_name(method: PruneMethod, pruning: bool) -> &'static str {
    match (pruning, method) {
        (false, _) | (true, PruneMethod::None) => "none",
        (true, PruneMethod::Wls) => "wls",
        (true, PruneMethod::Cls) => "cls",
    }
}

/// Streams metrics and events to disk and keeps `final.ckpt`/`best.ckpt` current.
struct RunWriter {
    dir: PathBuf,
    metrics: MetricsLog,
    events: BufWriter<File>,
    digest: String,
    method: String,
    best_error: f64,
    best_from: usize,
}

impl RunWriter {
    fn checkpoint(&self, state: &RunState, test_error: f64, sparsity: f64) -> Checkpoint {
        Checkpoint {
            network: state.network.clone(),
            optimizer: Some(state.optimizer.clone()),
            epoch: state.epoch,
            config_digest: self.digest.clone(),
            info: CheckpointInfo {
                method: self.method.clone(),
                test_error: Some(test_error),
                sparsity: Some(sparsity),
            },
        }
    }
}

impl RunObserver for RunWriter {
    fn on_epoch(&mut self, m: &EpochMetrics, state: &RunState) -> Result<()> {
        self.metrics.record(m)?;
        let ckpt = self.checkpoint(state, m.test_error, m.sparsity);
        ckpt.save(self.dir.join(FINAL_CHECKPOINT))?;
        if m.epoch >= self.best_from && m.test_error < self.best_error {
            self.best_error = m.test_error;
            ckpt.save(self.dir.join(BEST_CHECKPOINT))?;
        }
        Ok(())
    }

    fn on_prune(&mut self, event: &PruneEvent) -> Result<()> {
        let path = self.dir.join(EVENTS_FILE);
        write_event(&mut self.events, event).map_err(|e| Error::io(&path, e))?;
        self.events.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Runs `train` (no pruning) or `prune` for a loaded config; returns the summary.
pub fn run_experiment(args: &RunArgs, pruning: bool) -> Result<RunSummary> {
    let config = args.config.load()?;
    run_config(&config, pruning, args.resume, args.init.as_deref())
}

/// The body of `train`/`prune` for an already validated config.
pub fn run_config(config: &ExperimentConfig, pruning: bool, resume: bool, init: Option<&Path>) -> Result<RunSummary> {
    let dir = config.output.dir.clone();
    create_dir(&dir)?;
    let digest = config.digest();
    let schedule = if pruning {
        Some(config.schedule()?.ok_or_else(|| {
            Error::Config(vec!["prune.method is \"none\"; use the train command or choose wls/cls".into()])
        })?)
    } else {
        None
    };
    let opts = config.train_options();
    let data = config.load_data()?;

    let start = if resume {
        Some(dir.join(FINAL_CHECKPOINT))
    } else {
        init.map(Path::to_path_buf)
    };
    let mut state = match &start {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.config_digest != digest {
                warn!("{} was written under a different configuration", path.display());
            }
            let mut state = RunState::new(ckpt.network);
            if let Some(opt) = ckpt.optimizer {
                state.optimizer = opt;
            }
            state.epoch = ckpt.epoch;
            info!("starting from {} at epoch {}", path.display(), state.epoch);
            state
        }
        None => RunState::new(config.build_network()?),
    };

    let best_from = schedule.as_ref().map_or(0, |s| s.last_prune_epoch());
    let previous_best = if resume {
        match Checkpoint::load(dir.join(BEST_CHECKPOINT)) {
            Ok(c) => c.info.test_error.unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    } else {
        f64::INFINITY
    };
    let events_path = dir.join(EVENTS_FILE);
    let events_file = if resume {
        OpenOptions::new().create(true).append(true).open(&events_path)
    } else {
        File::create(&events_path)
    }
    .map_err(|e| Error::io(&events_path, e))?;
    let metrics_path = dir.join(METRICS_FILE);
    let metrics = if resume {
        MetricsLog::append(&metrics_path)?
    } else {
        MetricsLog::create(&metrics_path, data.validation.is_some())?
    };
    if !resume {
        for stale in [BEST_CHECKPOINT, SUMMARY_FILE] {
            let _ = fs::remove_file(dir.join(stale));
        }
    }
    write_file(&dir.join(RESOLVED_CONFIG), &config.to_toml())?;

    let method = method_name(config.prune.method, pruning);
    let mut writer = RunWriter {
        dir: dir.clone(),
        metrics,
        events: BufWriter::new(events_file),
        digest: digest.clone(),
        method: method.to_string(),
        best_error: previous_best,
        best_from,
    };

    let class_count = data.train.class_count;
    let mut pruner: Option<Box<dyn Pruner>> = match (&schedule, config.prune.method) {
        (Some(_), PruneMethod::Wls) => Some(Box::new(WlsPruner::new(&state.network, class_count, &config.ranking)?)),
        (Some(s), PruneMethod::Cls) => Some(Box::new(ClsPruner::new(
            &state.network,
            class_count,
            &config.ranking,
            s.mode == PruneMode::OneShot,
        )?)),
        _ => None,
    };
    let fine_tune_after = schedule.as_ref().map(|s| s.last_prune_epoch());
    let outcome = {
        let prune_arg = match (pruner.as_mut(), schedule.as_ref()) {
            (Some(p), Some(s)) => Some((&mut **p as &mut dyn Pruner, s)),
            _ => None,
        };
        run_epochs(&mut state, &data, &opts, prune_arg, fine_tune_after, &mut writer)?
    };
    let summary = summarize(config, method, &outcome, &writer, &state, pruner.as_deref());
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&dir.join(SUMMARY_FILE), &json)?;
    println!(
        "{method}: best error {:.2}% (epoch {}), final error {:.2}%, sparsity {:.2}%",
        summary.best_error,
        summary.best_epoch,
        summary.final_error,
        100.0 * summary.sparsity
    );
    Ok(summary)
}

fn summarize(
    config: &ExperimentConfig,
    method: &str,
    outcome: &RunOutcome,
    writer: &RunWriter,
    state: &RunState,
    pruner: Option<&dyn Pruner>,
) -> RunSummary {
    // A resumed run only sees its own epochs; the best checkpoint holds the overall best.
    let (best_error, best_epoch) = match Checkpoint::load(writer.dir.join(BEST_CHECKPOINT)) {
        Ok(c) if c.info.test_error.is_some() => (c.info.test_error.unwrap_or(f64::NAN), c.epoch),
        _ => (outcome.best_error, outcome.best_epoch),
    };
    let last = outcome.metrics.last();
    RunSummary {
        method: method.to_string(),
        alpha: config.ranking.alpha,
        epochs: state.epoch,
        best_error,
        best_epoch,
        final_error: last.map_or(f64::NAN, |m| m.test_error),
        sparsity: match (pruner, last) {
            (Some(p), _) => p.sparsity(),
            (None, Some(m)) => m.sparsity,
            (None, None) => 0.0,
        },
        kept: pruner.map(|p| p.groups().iter().map(|g| g.kept()).collect()).unwrap_or_default(),
        config_digest: writer.digest.clone(),
    }
}

fn evaluate_command(args: &EvaluateArgs) -> Result<()> {
    let config = args.config.load()?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let test = config.load_test()?;
    let eval = evaluate(&ckpt.network, &test, config.train.eval_batch_size)?;
    println!("test error {:.4}% (loss {:.6}) on {} samples", eval.error_percent, eval.loss, test.len());
    let Some(recorded) = ckpt.info.test_error else {
        return Ok(());
    };
    println!("recorded test error {recorded:.4}%");
    if eval.error_percent == recorded {
        return Ok(());
    }
    if ckpt.config_digest == config.digest() {
        Err(Error::Checkpoint(format!(
            "evaluated error {}% differs from the recorded {}% under the same configuration",
            eval.error_percent, recorded
        )))
    } else {
        eprintln!("warning: the checkpoint was written under a different configuration; errors are not comparable");
        Ok(())
    }
}

fn default_dir(checkpoint: Option<&Path>) -> PathBuf {
    checkpoint
        .and_then(Path::parent)
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn emit_table(dir: &Path, file: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    create_dir(dir)?;
    print!("{}", reports::text_table(header, rows));
    let path = dir.join(file);
    write_file(&path, &reports::csv_table(header, rows))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn report_command(args: &ReportArgs) -> Result<()> {
    let dir = args.output.clone().unwrap_or_else(|| default_dir(args.checkpoint.as_deref()));
    if args.kind == ReportKind::AlphaSweep {
        let config = args
            .config
            .as_ref()
            .ok_or_else(|| Error::invalid("the alpha sweep needs --config"))?;
        let overrides = Overrides {
            output: args.output.clone(),
            seed: args.seed,
            alpha: None,
            ratio: args.ratio,
            data_root: args.data_root.clone(),
        };
        let base = ExperimentConfig::load(config, &overrides)?;
        let rows = alpha_sweep(&base, &args.alphas)?;
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|s| {
                vec![
                    format!("{}", s.alpha),
                    format!("{:.2}", s.best_error),
                    format!("{:.2}", s.final_error),
                    format!("{:.2}", 100.0 * s.sparsity),
                ]
            })
            .collect();
        return emit_table(
            &base.output.dir,
            "alpha_sweep.csv",
            &["alpha", "best_error", "final_error", "sparsity_percent"],
            &cells,
        );
    }
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::invalid("this report needs --checkpoint"))?;
    let ckpt = Checkpoint::load(path)?;
    match args.kind {
        ReportKind::Compression => {
            let (h, rows) = reports::compression_cells(&reports::layer_compression(&ckpt.network));
            emit_table(&dir, "layer_compression.csv", &h, &rows)
        }
        ReportKind::Channels => {
            let (h, rows) = reports::channel_cells(&reports::channels_per_layer(&ckpt.network)?);
            emit_table(&dir, "channels_per_layer.csv", &h, &rows)
        }
        ReportKind::Histogram => {
            let (h, rows) = reports::histogram_cells(&reports::weight_histogram(&ckpt.network, args.bins)?);
            emit_table(&dir, "weight_histogram.csv", &h, &rows)
        }
        ReportKind::AlphaSweep => unreachable!("handled above"),
    }
}

/// Runs (or reuses a completed run of) the configured pruning experiment once
/// per alpha, in `<output>/alpha_<a>/`.
pub fn alpha_sweep(base: &ExperimentConfig, alphas: &[f64]) -> Result<Vec<RunSummary>> {
    if alphas.is_empty() {
        return Err(Error::invalid("no alpha values given"));
    }
    let mut rows = Vec::new();
    for &alpha in alphas {
        let mut config = base.clone();
        config.ranking.alpha = alpha;
        config.output.dir = base.output.dir.join(format!("alpha_{alpha}"));
        config.validate()?;
        let previous = RunSummary::load(config.output.dir.join(SUMMARY_FILE));
        let summary = match previous {
            Ok(s) if s.config_digest == config.digest() && s.epochs == config.train.epochs => {
                info!("alpha {alpha}: reusing {}", config.output.dir.display());
                s
            }
            _ => run_config(&config, true, false, None)?,
        };
        rows.push(summary);
    }
    Ok(rows)
}

fn export_mask_command(args: &ExportMaskArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let pgm = reports::mask_pgm(&ckpt.network, &args.layer)?;
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| default_dir(Some(&args.checkpoint)).join(format!("{}_mask.pgm", args.layer)));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&out, &pgm)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn compact_command(args: &CompactArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (network, report) = compact(&ckpt.network)?;
    for r in &report.removed {
        println!("{}: removed {} {}", r.layer, r.count, r.kind);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "parameters {} -> {} ({} kept connections dropped with dead units)",
        report.parameters_before, report.parameters_after, report.removed_connections
    );
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| default_dir(Some(&args.checkpoint)).join("compact.ckpt"));
    let compacted = Checkpoint {
        network,
        optimizer: None,
        epoch: ckpt.epoch,
        config_digest: ckpt.config_digest,
        info: ckpt.info,
    };
    compacted.save(&out)?;
    let report_path = out.with_extension("json");
    write_file(&report_path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    println!("wrote {} and {}", out.display(), report_path.display());
    Ok(())
}

/// Reads a run's prune-event log.
pub fn read_run_events(dir: impl AsRef<Path>) -> Result<Vec<PruneEvent>> {
    let path = dir.as_ref().join(EVENTS_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    crate::pruning::read_events(BufReader::new(file))
}
