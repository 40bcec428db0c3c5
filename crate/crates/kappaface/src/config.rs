//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, unknown keys are rejected.
//! Values are applied in order: built-in defaults, then the config file,
//! then command-line overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use kappaface_core::data::SyntheticSpec;
use kappaface_core::eval::DEFAULT_FAR_LEVELS;
use kappaface_core::losses::LossFamily;
use kappaface_core::model::Activation;
use kappaface_core::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

/// Output and input files of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Dataset,
    Holdout,
    TrainPairs,
    EvalPairs,
    Checkpoint,
    Metrics,
    Buffer,
    Report,
    Roc,
    Weights,
}

impl Artifact {
    pub const ALL: [Artifact; 10] = [
        Self::Dataset,
        Self::Holdout,
        Self::TrainPairs,
        Self::EvalPairs,
        Self::Checkpoint,
        Self::Metrics,
        Self::Buffer,
        Self::Report,
        Self::Roc,
        Self::Weights,
    ];

    /// Config key that overrides the location.
    pub fn key(self) -> &'static str {
        match self {
            Self::Dataset => "dataset",
            Self::Holdout => "holdout",
            Self::TrainPairs => "train_pairs",
            Self::EvalPairs => "eval_pairs",
            Self::Checkpoint => "checkpoint",
            Self::Metrics => "metrics",
            Self::Buffer => "buffer",
            Self::Report => "report",
            Self::Roc => "roc",
            Self::Weights => "weights",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Self::Dataset => "dataset.kfd",
            Self::Holdout => "holdout.kfd",
            Self::TrainPairs => "train_pairs.tsv",
            Self::EvalPairs => "eval_pairs.tsv",
            Self::Checkpoint => "model.kmm",
            Self::Metrics => "metrics.csv",
            Self::Buffer => "buffer.kmb",
            Self::Report => "report.json",
            Self::Roc => "roc.tsv",
            Self::Weights => "weights.csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: SyntheticSpec,
    pub holdout_fraction: f64,
    pub train_pos_pairs: usize,
    pub train_neg_pairs: usize,
    pub eval_pos_pairs: usize,
    pub eval_neg_pairs: usize,
    pub train: TrainConfig,
    /// `false` drops the population term (`gamma = 0`).
    pub population_weight: bool,
    pub far_levels: Vec<f64>,
    pub out: PathBuf,
    overrides: Vec<(Artifact, PathBuf)>,
    pub timestamp: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spec: SyntheticSpec::default(),
            holdout_fraction: 0.2,
            train_pos_pairs: 1000,
            train_neg_pairs: 1000,
            eval_pos_pairs: 3000,
            eval_neg_pairs: 3000,
            train: TrainConfig::default(),
            population_weight: true,
            far_levels: DEFAULT_FAR_LEVELS.to_vec(),
            out: PathBuf::from("kappaface-out"),
            overrides: Vec::new(),
            timestamp: true,
        }
    }
}

/// Every key accepted by [`RunConfig::set`].
pub const KEYS: &[&str] = &[
    "seed",
    "num_classes",
    "input_dim",
    "min_n",
    "max_n",
    "pop_exponent",
    "kappa_min",
    "kappa_max",
    "noise_mix",
    "noisy_class_fraction",
    "holdout_fraction",
    "train_pos_pairs",
    "train_neg_pairs",
    "eval_pos_pairs",
    "eval_neg_pairs",
    "loss",
    "scale",
    "m0",
    "temperature",
    "gamma",
    "population_weight",
    "max_population",
    "psi_fixed",
    "batch_size",
    "epochs",
    "lr",
    "lr_decay_epochs",
    "lr_decay_factor",
    "momentum",
    "weight_decay",
    "alpha",
    "hidden",
    "embed_dim",
    "activation",
    "eval_every",
    "eval_far",
    "far_levels",
    "out",
    "timestamp",
    "dataset",
    "holdout",
    "train_pairs",
    "eval_pairs",
    "checkpoint",
    "metrics",
    "buffer",
    "report",
    "roc",
    "weights",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| ConfigError(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let spec = &mut self.spec;
        let train = &mut self.train;
        match key {
            "seed" => {
                spec.seed = parse(key, v)?;
                train.seed = spec.seed;
            }
            "num_classes" => spec.num_classes = parse(key, v)?,
            "input_dim" => spec.input_dim = parse(key, v)?,
            "min_n" => spec.min_n = parse(key, v)?,
            "max_n" => spec.max_n = parse(key, v)?,
            "pop_exponent" => spec.pop_exponent = parse(key, v)?,
            "kappa_min" => spec.kappa_min = parse(key, v)?,
            "kappa_max" => spec.kappa_max = parse(key, v)?,
            "noise_mix" => spec.noise_mix = parse(key, v)?,
            "noisy_class_fraction" => spec.noisy_class_fraction = parse(key, v)?,
            "holdout_fraction" => self.holdout_fraction = parse(key, v)?,
            "train_pos_pairs" => self.train_pos_pairs = parse(key, v)?,
            "train_neg_pairs" => self.train_neg_pairs = parse(key, v)?,
            "eval_pos_pairs" => self.eval_pos_pairs = parse(key, v)?,
            "eval_neg_pairs" => self.eval_neg_pairs = parse(key, v)?,
            "loss" => {
                train.loss.family = LossFamily::from_name(v).ok_or_else(|| {
                    let names: Vec<_> = LossFamily::ALL.iter().map(|f| f.name()).collect();
                    ConfigError(format!(
                        "loss: unknown family {v:?} (expected one of {})",
                        names.join(", ")
                    ))
                })?
            }
            "scale" => train.loss.scale = parse(key, v)?,
            "m0" => train.loss.margin = parse(key, v)?,
            "temperature" => train.temperature = parse(key, v)?,
            "gamma" => train.gamma = parse(key, v)?,
            "population_weight" => self.population_weight = parse_bool(key, v)?,
            "max_population" => {
                train.max_population = if v == "auto" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "psi_fixed" => {
                train.psi_fixed = if v == "none" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "batch_size" => train.batch_size = parse(key, v)?,
            "epochs" => train.epochs = parse(key, v)?,
            "lr" => train.lr = parse(key, v)?,
            "lr_decay_epochs" => train.lr_decay_epochs = parse_list(key, v)?,
            "lr_decay_factor" => train.lr_decay_factor = parse(key, v)?,
            "momentum" => train.momentum = parse(key, v)?,
            "weight_decay" => train.weight_decay = parse(key, v)?,
            "alpha" => train.alpha = parse(key, v)?,
            "hidden" => train.hidden = parse_list(key, v)?,
            "embed_dim" => train.embed_dim = parse(key, v)?,
            "activation" => {
                train.activation = Activation::from_name(v).ok_or_else(|| {
                    ConfigError(format!("activation: unknown {v:?} (expected relu or tanh)"))
                })?
            }
            "eval_every" => train.eval_every = parse(key, v)?,
            "eval_far" => train.eval_far = parse(key, v)?,
            "far_levels" => self.far_levels = parse_list(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "timestamp" => self.timestamp = parse_bool(key, v)?,
            _ => {
                let artifact = Artifact::ALL
                    .into_iter()
                    .find(|a| a.key() == key)
                    .ok_or_else(|| ConfigError(format!("unknown config key {key:?}")))?;
                self.overrides.retain(|(a, _)| *a != artifact);
                self.overrides.push((artifact, PathBuf::from(v)));
            }
        }
        Ok(())
    }

    /// Applies the contents of a config file.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), ConfigError> {
        for (n, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| {
                ConfigError(format!(
                    "{}:{}: expected `key = value`",
                    origin.display(),
                    n + 1
                ))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| ConfigError(format!("{}:{}: {e}", origin.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn path(&self, artifact: Artifact) -> PathBuf {
        self.overrides
            .iter()
            .find(|(a, _)| *a == artifact)
            .map_or_else(|| self.out.join(artifact.file_name()), |(_, p)| p.clone())
    }

    /// Training settings with the ablation switches folded in.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if !self.population_weight {
            t.gamma = 0.0;
        }
        t
    }

    pub fn validate_data(&self) -> Result<(), ConfigError> {
        self.spec
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(ConfigError(format!(
                "holdout_fraction {} must lie in (0, 1)",
                self.holdout_fraction
            )));
        }
        Ok(())
    }

    pub fn validate_train(&self) -> Result<(), ConfigError> {
        self.effective_train()
            .validate()
            .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn validate_eval(&self) -> Result<(), ConfigError> {
        if let Some(l) = self.far_levels.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
            return Err(ConfigError(format!("far_levels: {l} must lie in (0, 1]")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_is_accepted() {
        let samples = [
            ("loss", "arcface"),
            ("activation", "tanh"),
            ("population_weight", "false"),
            ("timestamp", "no"),
            ("psi_fixed", "none"),
            ("max_population", "auto"),
            ("lr_decay_epochs", "5, 8"),
            ("hidden", "32,32"),
            ("far_levels", "0.1,0.01"),
        ];
        for key in KEYS {
            let value = samples
                .iter()
                .find(|(k, _)| k == key)
                .map_or("3", |(_, v)| *v);
            RunConfig::default()
                .set(key, value)
                .unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("learning_rate", "0.1").is_err());
        let err = cfg
            .apply_text("lr = 0.2\njunk\n", Path::new("run.cfg"))
            .unwrap_err();
        assert!(err.0.contains("run.cfg:2"), "{err}");
    }

    #[test]
    fn comments_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# header\nepochs = 7  # trailing\n\nmetrics = m.csv\n",
            Path::new("c"),
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.path(Artifact::Metrics), PathBuf::from("m.csv"));
        assert_eq!(
            cfg.path(Artifact::Roc),
            PathBuf::from("kappaface-out/roc.tsv")
        );
    }

    #[test]
    fn population_switch_zeroes_gamma() {
        let mut cfg = RunConfig::default();
        cfg.set("population_weight", "false").unwrap();
        assert_eq!(cfg.effective_train().gamma, 0.0);
        assert_eq!(cfg.train.gamma, 0.5);
    }
}
