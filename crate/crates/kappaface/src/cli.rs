//! Command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or file-format
//! error, 4 numerical abort during training.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use kappaface_core::class_stats::MemoryBuffer;
use kappaface_core::data::{generate_split, make_pairs, Pair, SyntheticDataset};
use kappaface_core::model::{ClassifierParams, MlpParams};
use kappaface_core::scheduler::{compute_psi, psi_from_standardized, SchedulerConfig};
use kappaface_core::trainer::{
    evaluate_model, train_with, EpochRecord, EpochState, EvalSet, Summary, TrainObserver,
};
use kappaface_core::Error as CoreError;

use crate::config::{Artifact, ConfigError, RunConfig};
use crate::fmt::sig6;
use crate::formats::{self, Checkpoint, FormatError, Stamp};

const TRAIN_PAIR_SEED: u64 = 0x7472_6169;
const EVAL_PAIR_SEED: u64 = 0x6576_616c;

#[derive(Debug, Parser)]
#[command(
    name = "kappaface",
    version,
    about = "Adaptive angular-margin training lab"
)]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Directory for outputs and default inputs.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Omit the generation-time header line from text outputs.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
    /// Override any config key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Loss family: plain_softmax, norm_softmax, arcface, cosface or kappaface.
    #[arg(long, global = true)]
    pub loss: Option<String>,
    /// Base margin (also the fixed margin of arcface and cosface).
    #[arg(long, global = true)]
    pub m0: Option<f64>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Drop the population term of the margin calibration.
    #[arg(long, global = true)]
    pub no_population_weight: bool,
    /// Use this constant calibration for every class.
    #[arg(long, global = true, value_name = "PSI")]
    pub psi_fixed: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset, holdout set and pair lists.
    GenData,
    /// Train a model and write the checkpoint, metrics and buffer snapshot.
    Train,
    /// Evaluate a checkpoint on the holdout pairs.
    Eval,
    /// Per-class concentration and margin table.
    WeightsReport {
        /// CSV with columns `class_id,n_c,kappa_tilde` used instead of a buffer snapshot.
        #[arg(long, value_name = "PATH")]
        fixture: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::Numerical(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.0)
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        Self::Io(e.to_string())
    }
}

fn core_error(e: CoreError) -> CliError {
    use CoreError::*;
    match e {
        InvalidConfig(_)
        | SpecInvalid(_)
        | OutOfDomain { .. }
        | ConfigMismatch(_)
        | InsufficientPairs { .. }
        | PopulationExceedsMax { .. }
        | InvalidDimension(_) => CliError::Config(e.to_string()),
        NonFiniteLoss { .. } | ZeroVector { .. } | NonUnitInput { .. } => {
            CliError::Numerical(e.to_string())
        }
        _ => CliError::Io(format!("inconsistent inputs: {e}")),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Builds the run configuration: defaults, then the file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        cfg.apply_text(&text, path)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    let flags = [
        ("seed", cli.seed.map(|v| v.to_string())),
        ("out", cli.out.as_ref().map(|p| p.display().to_string())),
        ("loss", cli.loss.clone()),
        ("m0", cli.m0.map(|v| v.to_string())),
        ("temperature", cli.temperature.map(|v| v.to_string())),
        ("gamma", cli.gamma.map(|v| v.to_string())),
        ("psi_fixed", cli.psi_fixed.map(|v| v.to_string())),
        ("timestamp", cli.no_timestamp.then(|| "false".to_string())),
        (
            "population_weight",
            cli.no_population_weight.then(|| "false".to_string()),
        ),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    Ok(cfg)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("kappaface: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let stamp = if cfg.timestamp {
        Stamp::now()
    } else {
        Stamp::None
    };
    match &cli.command {
        Command::GenData => gen_data(&cfg, stamp),
        Command::Train => train(&cfg, stamp),
        Command::Eval => eval(&cfg, stamp),
        Command::WeightsReport { fixture } => weights_report(&cfg, fixture.as_deref(), stamp),
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{what} {} not found", path.display())))
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
        }
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    Ok(formats::write_atomic(path, text.as_bytes())?)
}

fn population_summary(ds: &SyntheticDataset) -> String {
    let mut pops = ds.populations.clone();
    pops.sort_unstable();
    let kappas: Vec<f64> = ds.true_kappas.iter().map(|&k| f64::from(k)).collect();
    let k = Summary::of(&kappas);
    format!(
        "{} samples, {} classes, n_c min {} median {} max {}, true kappa min {} mean {} max {}",
        ds.len(),
        ds.num_classes(),
        pops[0],
        pops[pops.len() / 2],
        pops[pops.len() - 1],
        sig6(k.min),
        sig6(k.mean),
        sig6(k.max),
    )
}

/// Training set, holdout set and their pair lists, exactly as `gen-data` writes them.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub train: SyntheticDataset,
    pub holdout: SyntheticDataset,
    pub train_pairs: Vec<Pair>,
    pub eval_pairs: Vec<Pair>,
}

pub fn build_data(cfg: &RunConfig) -> Result<GeneratedData, CliError> {
    cfg.validate_data()?;
    let (train, holdout) = generate_split(&cfg.spec, cfg.holdout_fraction).map_err(core_error)?;
    let train_pairs = make_pairs(
        &train,
        cfg.train_pos_pairs,
        cfg.train_neg_pairs,
        cfg.spec.seed ^ TRAIN_PAIR_SEED,
    )
    .map_err(core_error)?;
    let eval_pairs = make_pairs(
        &holdout,
        cfg.eval_pos_pairs,
        cfg.eval_neg_pairs,
        cfg.spec.seed ^ EVAL_PAIR_SEED,
    )
    .map_err(core_error)?;
    Ok(GeneratedData {
        train,
        holdout,
        train_pairs,
        eval_pairs,
    })
}

fn gen_data(cfg: &RunConfig, stamp: Stamp) -> Result<(), CliError> {
    let GeneratedData {
        train,
        holdout,
        train_pairs,
        eval_pairs,
    } = build_data(cfg)?;

    for (artifact, ds) in [(Artifact::Dataset, &train), (Artifact::Holdout, &holdout)] {
        let path = cfg.path(artifact);
        ensure_parent(&path)?;
        formats::write_dataset(ds, &path)?;
    }
    for (artifact, pairs) in [
        (Artifact::TrainPairs, &train_pairs),
        (Artifact::EvalPairs, &eval_pairs),
    ] {
        write_text(&cfg.path(artifact), &formats::format_pairs(pairs, stamp))?;
    }
    println!("train: {}", population_summary(&train));
    println!("holdout: {}", population_summary(&holdout));
    println!(
        "pairs: {} train, {} eval, written under {}",
        train_pairs.len(),
        eval_pairs.len(),
        cfg.out.display()
    );
    Ok(())
}

/// Keeps the records and the parameters of the last completed epoch.
#[derive(Default)]
struct LastGood {
    records: Vec<EpochRecord>,
    params: Option<(MlpParams, ClassifierParams)>,
}

impl TrainObserver for LastGood {
    fn on_epoch(&mut self, state: &EpochState<'_>) {
        let r = state.record;
        let psi = r
            .psi
            .map_or(String::new(), |s| format!(" psi mean {}", sig6(s.mean)));
        let eval = r
            .eval
            .map_or(String::new(), |e| format!(" eval acc {}", sig6(e.accuracy)));
        eprintln!(
            "epoch {:>3} lr {} loss {}{psi}{eval}",
            r.epoch,
            sig6(r.lr),
            sig6(r.mean_loss)
        );
        self.records.push(r.clone());
        self.params = Some((state.mlp.clone(), state.classifier.clone()));
    }
}

fn train(cfg: &RunConfig, stamp: Stamp) -> Result<(), CliError> {
    cfg.validate_train()?;
    let tc = cfg.effective_train();
    let dataset_path = cfg.path(Artifact::Dataset);
    require_file(&dataset_path, "dataset")?;
    let with_eval = tc.eval_every > 0;
    if with_eval {
        require_file(&cfg.path(Artifact::Holdout), "holdout dataset")?;
        require_file(&cfg.path(Artifact::EvalPairs), "eval pair list")?;
    }
    let dataset = formats::read_dataset(&dataset_path)?;
    let holdout = if with_eval {
        let ds = formats::read_dataset(&cfg.path(Artifact::Holdout))?;
        Some((ds, formats::read_pairs(&cfg.path(Artifact::EvalPairs))?))
    } else {
        None
    };
    let outputs = [Artifact::Checkpoint, Artifact::Metrics, Artifact::Buffer].map(|a| cfg.path(a));
    for path in &outputs {
        ensure_parent(path)?;
    }
    let [ckpt_path, metrics_path, buffer_path] = outputs;

    let eval_set = holdout
        .as_ref()
        .map(|(ds, pairs)| EvalSet { dataset: ds, pairs });
    let mut observer = LastGood::default();
    match train_with(&dataset, &tc, eval_set, &mut observer) {
        Ok(out) => {
            let ckpt = Checkpoint {
                mlp: out.mlp,
                classifier: out.classifier,
            };
            formats::write_checkpoint(&ckpt, &ckpt_path)?;
            write_text(
                &metrics_path,
                &formats::format_metrics(&out.records, with_eval, stamp),
            )?;
            if let Some(buffer) = &out.buffer {
                formats::write_buffer(buffer, &buffer_path)?;
            }
            let last = out.records.last().expect("at least one epoch");
            println!(
                "trained {} epochs, final loss {}, checkpoint {}",
                out.records.len(),
                sig6(last.mean_loss),
                ckpt_path.display()
            );
            Ok(())
        }
        Err(e) => match core_error(e) {
            CliError::Numerical(msg) => {
                let metrics = formats::format_metrics(&observer.records, with_eval, stamp);
                write_text(&metrics_path, &metrics)?;
                let kept = match observer.params {
                    Some((mlp, classifier)) => {
                        formats::write_checkpoint(&Checkpoint { mlp, classifier }, &ckpt_path)?;
                        format!(
                            "last good checkpoint (epoch {}) kept at {}",
                            observer.records.len() - 1,
                            ckpt_path.display()
                        )
                    }
                    None => "no epoch completed, no checkpoint written".into(),
                };
                Err(CliError::Numerical(format!("{msg}; {kept}")))
            }
            other => Err(other),
        },
    }
}

fn eval(cfg: &RunConfig, stamp: Stamp) -> Result<(), CliError> {
    cfg.validate_eval()?;
    let ckpt_path = cfg.path(Artifact::Checkpoint);
    let holdout_path = cfg.path(Artifact::Holdout);
    let pairs_path = cfg.path(Artifact::EvalPairs);
    require_file(&ckpt_path, "checkpoint")?;
    require_file(&holdout_path, "holdout dataset")?;
    require_file(&pairs_path, "eval pair list")?;
    let ckpt = formats::read_checkpoint(&ckpt_path, cfg.train.activation)?;
    let holdout = formats::read_dataset(&holdout_path)?;
    let pairs = formats::read_pairs(&pairs_path)?;
    let report =
        evaluate_model(&ckpt.mlp, &holdout, &pairs, &cfg.far_levels).map_err(core_error)?;
    write_text(
        &cfg.path(Artifact::Report),
        &formats::format_report(&report, stamp),
    )?;
    write_text(
        &cfg.path(Artifact::Roc),
        &formats::format_roc(&report, stamp),
    )?;
    let tars: Vec<String> = report
        .tar_at_far
        .iter()
        .map(|(l, t)| format!("TAR@{}={}", sig6(*l), sig6(*t)))
        .collect();
    println!(
        "accuracy {} at threshold {} over {} pairs; {}",
        sig6(report.accuracy),
        sig6(report.best_threshold),
        pairs.len(),
        tars.join(" ")
    );
    Ok(())
}

fn scheduler_config(cfg: &RunConfig, populations: &[usize]) -> Result<SchedulerConfig, CliError> {
    let tc = cfg.effective_train();
    let largest = populations.iter().copied().max().unwrap_or(0);
    let sched = SchedulerConfig {
        temperature: tc.temperature,
        gamma: tc.gamma,
        m0: tc.loss.margin,
        max_population: tc.max_population.unwrap_or(largest),
    };
    sched.validate().map_err(core_error)?;
    Ok(sched)
}

/// Reads `class_id,n_c,kappa_tilde` rows; class ids must run 0, 1, 2, ...
pub fn read_fixture(path: &Path) -> Result<(Vec<usize>, Vec<f64>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut lines = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let bad = |n: usize, why: &str| CliError::Io(format!("{}: row {n}: {why}", path.display()));
    if lines.next().map(str::trim) != Some("class_id,n_c,kappa_tilde") {
        return Err(bad(0, "expected header class_id,n_c,kappa_tilde"));
    }
    let (mut pops, mut tilde) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [id, count, kt] = fields[..] else {
            return Err(bad(n + 1, "expected 3 fields"));
        };
        if id.parse::<usize>().ok() != Some(n) {
            return Err(bad(n + 1, "class ids must be consecutive from 0"));
        }
        pops.push(count.parse().map_err(|_| bad(n + 1, "bad n_c"))?);
        tilde.push(kt.parse().map_err(|_| bad(n + 1, "bad kappa_tilde"))?);
    }
    if pops.is_empty() {
        return Err(bad(0, "no classes"));
    }
    Ok((pops, tilde))
}

fn weights_report(cfg: &RunConfig, fixture: Option<&Path>, stamp: Stamp) -> Result<(), CliError> {
    let (weights, populations) = match fixture {
        Some(path) => {
            require_file(path, "fixture")?;
            let (pops, tilde) = read_fixture(path)?;
            let sched = scheduler_config(cfg, &pops)?;
            (
                psi_from_standardized(&tilde, &pops, &sched).map_err(core_error)?,
                pops,
            )
        }
        None => {
            let buffer_path = cfg.path(Artifact::Buffer);
            let dataset_path = cfg.path(Artifact::Dataset);
            require_file(&buffer_path, "buffer snapshot")?;
            require_file(&dataset_path, "dataset")?;
            let buffer: MemoryBuffer = formats::read_buffer(&buffer_path, cfg.train.alpha)?;
            let dataset = formats::read_dataset(&dataset_path)?;
            if buffer.labels() != dataset.labels.as_slice() {
                return Err(CliError::Io(format!(
                    "{} does not belong to {}",
                    buffer_path.display(),
                    dataset_path.display()
                )));
            }
            let sched = scheduler_config(cfg, &dataset.populations)?;
            let cc = buffer.epoch_concentrations();
            let w = compute_psi(&cc.kappa_hat, &dataset.populations, &sched).map_err(core_error)?;
            (w, dataset.populations)
        }
    };
    let path = cfg.path(Artifact::Weights);
    let m0 = cfg.train.loss.margin;
    write_text(
        &path,
        &formats::format_weights(&weights, &populations, m0, stamp),
    )?;
    let psi = Summary::of(&weights.psi);
    println!(
        "{} classes, psi min {} mean {} max {}, written to {}",
        weights.num_classes(),
        sig6(psi.min),
        sig6(psi.mean),
        sig6(psi.max),
        path.display()
    );
    Ok(())
}
