//! Minibatch training loop with end-of-epoch margin refresh.
//!
//! Per batch: embed, normalize, move the memory-buffer rows of the batch
//! towards the fresh embeddings, evaluate the loss with the current epoch's
//! `psi` snapshot, and take one SGD step on both parameter groups. At the
//! end of each epoch the buffer sums are recomputed, per-class
//! concentrations estimated, and the next `psi` snapshot computed.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::class_stats::{ClassConcentrations, MemoryBuffer};
use crate::data::{Pair, SyntheticDataset};
use crate::eval::{evaluate_pairs, VerificationReport};
use crate::linalg::row;
use crate::losses::{loss_and_gradients, normalize_rows, LossFamily, MarginLossConfig};
use crate::model::{Activation, ClassifierParams, MlpParams, SgdConfig, SgdState};
use crate::scheduler::{compute_psi, warm_start, ClassWeights, SchedulerConfig};
use crate::sphere::{UnitVector, UNIT_TOLERANCE};
use crate::{Error, Result};

// Seed offsets for the independent random streams of one run.
const MLP_SEED: u64 = 0x6d6c_7000;
const CLASSIFIER_SEED: u64 = 0x636c_7300;
const BUFFER_SEED: u64 = 0x6275_6600;
const SHUFFLE_STREAM: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: MarginLossConfig,
    pub temperature: f64,
    pub gamma: f64,
    /// Overrides the largest class population `K` of the population weight.
    pub max_population: Option<usize>,
    /// Forces `psi` to this constant for every class and epoch.
    pub psi_fixed: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// EMA momentum of the memory buffer.
    pub alpha: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
    /// Evaluate every this many epochs (0 disables).
    pub eval_every: usize,
    /// FAR level reported as `eval_tar`.
    pub eval_far: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: MarginLossConfig::new(LossFamily::KappaFace, 8.0, 0.5),
            temperature: 0.55,
            gamma: 0.5,
            max_population: None,
            psi_fixed: None,
            batch_size: 64,
            epochs: 40,
            lr: 0.1,
            lr_decay_epochs: alloc::vec![20, 30],
            lr_decay_factor: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            alpha: 0.3,
            seed: 0,
            hidden: alloc::vec![128, 128],
            embed_dim: 16,
            activation: Activation::Relu,
            eval_every: 0,
            eval_far: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad(format!(
                "lr_decay_factor {} must be positive",
                self.lr_decay_factor
            ));
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr_decay_epochs must be strictly increasing".into());
        }
        if self
            .lr_decay_epochs
            .last()
            .is_some_and(|&e| e >= self.epochs)
        {
            return bad("lr_decay_epochs must be below epochs".into());
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha {} must lie in [0, 1)", self.alpha));
        }
        if let Some(p) = self.psi_fixed {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("psi_fixed {p} must lie in [0, 1]"));
            }
            if self.loss.family != LossFamily::KappaFace {
                return bad("psi_fixed only applies to kappaface".into());
            }
        }
        if self.embed_dim < 2 {
            return bad(format!("embed_dim {} must be at least 2", self.embed_dim));
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        if !(self.eval_far > 0.0 && self.eval_far <= 1.0) {
            return bad(format!("eval_far {} must lie in (0, 1]", self.eval_far));
        }
        SgdConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
        .validate()?;
        if self.loss.family == LossFamily::KappaFace && self.psi_fixed.is_none() {
            self.scheduler_config(1)?.validate()?;
        }
        Ok(())
    }

    fn scheduler_config(&self, largest_class: usize) -> Result<SchedulerConfig> {
        let k = self.max_population.unwrap_or(largest_class);
        if k < largest_class {
            return Err(Error::PopulationExceedsMax {
                n: largest_class,
                max: k,
            });
        }
        Ok(SchedulerConfig {
            temperature: self.temperature,
            gamma: self.gamma,
            m0: self.loss.margin,
            max_population: k,
        })
    }

    /// Layer widths from input to embedding.
    pub fn layer_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = alloc::vec![input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.embed_dim);
        dims
    }
}

/// Step-decayed learning rate for a zero-based epoch.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let decays = config
        .lr_decay_epochs
        .iter()
        .filter(|&&e| e <= epoch)
        .count();
    config.lr * config.lr_decay_factor.powi(decays as i32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    /// `psi` used during this epoch; absent for families without a margin.
    pub psi: Option<Summary>,
    /// Buffer concentrations at the end of this epoch.
    pub kappa: Option<Summary>,
    pub eval: Option<EvalMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    /// TAR at `eval_far`; absent when the negatives cannot resolve that level.
    pub tar: Option<f64>,
}

/// Held-out data for periodic evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub dataset: &'a SyntheticDataset,
    pub pairs: &'a [Pair],
}

/// Read-only view handed to observers at the end of every epoch.
#[derive(Debug)]
pub struct EpochState<'a> {
    pub record: &'a EpochRecord,
    pub mlp: &'a MlpParams,
    pub classifier: &'a ClassifierParams,
    pub buffer: Option<&'a MemoryBuffer>,
    pub concentrations: Option<&'a ClassConcentrations>,
    /// Snapshot that the next epoch will use.
    pub next_weights: Option<&'a ClassWeights>,
}

pub trait TrainObserver {
    fn on_batch(&mut self, _epoch: usize, _indices: &[usize], _weights: Option<&ClassWeights>) {}
    fn on_epoch(&mut self, _state: &EpochState<'_>) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub mlp: MlpParams,
    pub classifier: ClassifierParams,
    pub records: Vec<EpochRecord>,
    pub buffer: Option<MemoryBuffer>,
    /// Snapshot computed at the end of the last epoch.
    pub weights: Option<ClassWeights>,
}

/// Unit embeddings of the given dataset rows.
pub fn embed(mlp: &MlpParams, dataset: &SyntheticDataset, indices: &[usize]) -> Result<Vec<f64>> {
    if dataset.input_dim != mlp.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: mlp.input_dim(),
            got: dataset.input_dim,
        });
    }
    let mut out = Vec::with_capacity(indices.len() * mlp.output_dim());
    for chunk in indices.chunks(256) {
        let x = dataset.gather_inputs(chunk);
        let (z, _) = mlp.forward(&x, chunk.len())?;
        out.extend(normalize_rows(&z, mlp.output_dim())?);
    }
    Ok(out)
}

/// Verification report of `pairs` over every row of `dataset`.
pub fn evaluate_model(
    mlp: &MlpParams,
    dataset: &SyntheticDataset,
    pairs: &[Pair],
    far_levels: &[f64],
) -> Result<VerificationReport> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let z = embed(mlp, dataset, &all)?;
    evaluate_pairs(&z, mlp.output_dim(), pairs, far_levels)
}

pub fn train(dataset: &SyntheticDataset, config: &TrainConfig) -> Result<TrainOutput> {
    train_with(dataset, config, None, &mut ())
}

pub fn train_with<O: TrainObserver + ?Sized>(
    dataset: &SyntheticDataset,
    config: &TrainConfig,
    eval: Option<EvalSet<'_>>,
    observer: &mut O,
) -> Result<TrainOutput> {
    config.validate()?;
    dataset.validate()?;
    let family = config.loss.family;
    let classes = dataset.num_classes();
    let dim = config.embed_dim;
    let n = dataset.len();

    let mut mlp = MlpParams::init(
        &config.layer_dims(dataset.input_dim),
        config.activation,
        config.seed ^ MLP_SEED,
    )?;
    let mut classifier = ClassifierParams::init(classes, dim, config.seed ^ CLASSIFIER_SEED);
    let mut sgd = SgdState::new(
        SgdConfig {
            momentum: config.momentum,
            weight_decay: config.weight_decay,
        },
        &mlp,
        &classifier,
    )?;
    let mut buffer = if family.has_margin() {
        Some(MemoryBuffer::new(
            &dataset.labels,
            dim,
            config.alpha,
            config.seed ^ BUFFER_SEED,
        )?)
    } else {
        None
    };
    let largest = dataset.populations.iter().copied().max().unwrap_or(0);
    let adaptive = family == LossFamily::KappaFace && config.psi_fixed.is_none();
    let sched = if adaptive {
        Some(config.scheduler_config(largest)?)
    } else {
        None
    };
    let constant_psi = |value: f64| ClassWeights {
        kappa_hat: None,
        kappa_tilde: alloc::vec![0.0; classes],
        w_conc: alloc::vec![0.5; classes],
        w_pop: alloc::vec![0.5; classes],
        psi: alloc::vec![value; classes],
        epoch: 0,
    };
    let mut weights: Option<ClassWeights> = match (family, sched.as_ref()) {
        (LossFamily::KappaFace, Some(s)) => Some(warm_start(&dataset.populations, s)?),
        (LossFamily::KappaFace, None) => Some(constant_psi(config.psi_fixed.unwrap_or(1.0))),
        // ArcFace and CosFace apply the full margin to every class.
        (LossFamily::ArcFace | LossFamily::CosFace, _) => Some(constant_psi(1.0)),
        _ => None,
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut concentrations = None;

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let psi_arg = if family == LossFamily::KappaFace {
            weights.as_ref().map(|w| w.psi.as_slice())
        } else {
            None
        };
        for (batch_idx, indices) in order.chunks(config.batch_size).enumerate() {
            observer.on_batch(epoch, indices, weights.as_ref());
            let b = indices.len();
            let x = dataset.gather_inputs(indices);
            let labels: Vec<usize> = indices.iter().map(|&i| dataset.labels[i]).collect();
            let (z_raw, cache) = mlp.forward(&x, b)?;
            let non_finite = Error::NonFiniteLoss {
                epoch,
                batch: batch_idx,
            };
            if z_raw.iter().any(|v| !v.is_finite()) {
                return Err(non_finite);
            }
            if let Some(buf) = buffer.as_mut() {
                let z_unit = normalize_rows(&z_raw, dim)?;
                for (k, &i) in indices.iter().enumerate() {
                    let z = UnitVector::from_unit(row(&z_unit, dim, k).to_vec())?;
                    match buf.update_sample(i, &z) {
                        Ok(()) | Err(Error::ZeroVector { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            let (result, grads) = loss_and_gradients(
                &z_raw,
                &classifier.weights,
                &labels,
                dim,
                psi_arg,
                &config.loss,
            )?;
            if !result.loss.is_finite() {
                return Err(non_finite);
            }
            loss_sum += result.loss * b as f64;
            let mlp_grads = mlp.backward(&cache, &grads.grad_embeddings)?;
            sgd.step(
                lr,
                &mut mlp,
                &mlp_grads,
                &mut classifier,
                &grads.grad_class_weights,
            );
        }

        let psi_summary = weights.as_ref().map(|w| Summary::of(&w.psi));
        if let Some(buf) = buffer.as_mut() {
            buf.refresh_class_sums();
            let cc = buf.epoch_concentrations();
            if let Some(s) = sched.as_ref() {
                let mut next = compute_psi(&cc.kappa_hat, &dataset.populations, s)?;
                next.epoch = epoch + 1;
                weights = Some(next);
            }
            concentrations = Some(cc);
        }
        let eval_metrics = match eval {
            Some(set) if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 => {
                let report = evaluate_model(&mlp, set.dataset, set.pairs, &[config.eval_far])?;
                Some(EvalMetrics {
                    accuracy: report.accuracy,
                    tar: report.tar_at(config.eval_far),
                })
            }
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            lr,
            mean_loss: loss_sum / n as f64,
            psi: psi_summary,
            kappa: concentrations.as_ref().map(|c| Summary::of(&c.kappa_hat)),
            eval: eval_metrics,
        };
        observer.on_epoch(&EpochState {
            record: &record,
            mlp: &mlp,
            classifier: &classifier,
            buffer: buffer.as_ref(),
            concentrations: concentrations.as_ref(),
            next_weights: weights.as_ref(),
        });
        records.push(record);
    }

    debug_assert!(buffer
        .as_ref()
        .is_none_or(
            |b| (0..b.len()).all(|i| (crate::linalg::norm(b.row(i)) - 1.0).abs() < UNIT_TOLERANCE)
        ));
    Ok(TrainOutput {
        mlp,
        classifier,
        records,
        buffer,
        weights,
    })
}
