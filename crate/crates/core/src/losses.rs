//! Margin-softmax loss family with analytic gradients.
//!
//! All angular families work on cosines between unit embeddings and unit
//! class weights. Only the target logit differs between families:
//!
//! | family         | target logit                  |
//! |----------------|-------------------------------|
//! | `NormSoftmax`  | `s cos t`                     |
//! | `ArcFace`      | `s cos(t + m)`                |
//! | `CosFace`      | `s (cos t - m)`               |
//! | `KappaFace`    | `s cos(t + psi_y m0)`         |
//!
//! `PlainSoftmax` uses raw inner products `W_j . z` without normalization or
//! scale, and a zero bias.
//!
//! Shifted angles are clamped at `pi`, so a target pushed past the antipode
//! has logit `-s` and no gradient through the angle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;

use crate::linalg::{axpy, dot, norm, normalize_backward, row, row_mut};
use crate::sphere::NORM_EPSILON;
use crate::{Error, Result};

/// Rows passed to the angular families must be unit norm within this.
pub const UNIT_INPUT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossFamily {
    PlainSoftmax,
    NormSoftmax,
    ArcFace,
    CosFace,
    KappaFace,
}

impl LossFamily {
    pub const ALL: [LossFamily; 5] = [
        LossFamily::PlainSoftmax,
        LossFamily::NormSoftmax,
        LossFamily::ArcFace,
        LossFamily::CosFace,
        LossFamily::KappaFace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::PlainSoftmax => "plain_softmax",
            LossFamily::NormSoftmax => "norm_softmax",
            LossFamily::ArcFace => "arcface",
            LossFamily::CosFace => "cosface",
            LossFamily::KappaFace => "kappaface",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Whether embeddings and class weights are l2-normalized.
    pub fn is_angular(self) -> bool {
        !matches!(self, LossFamily::PlainSoftmax)
    }

    /// Whether the family applies a positive margin to the target.
    pub fn has_margin(self) -> bool {
        matches!(
            self,
            LossFamily::ArcFace | LossFamily::CosFace | LossFamily::KappaFace
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginLossConfig {
    pub family: LossFamily,
    /// Logit scale `s`.
    pub scale: f64,
    /// Angular margin (radians) for ArcFace, base margin `m0` for KappaFace,
    /// cosine margin for CosFace. Ignored otherwise.
    pub margin: f64,
    /// Cosines are clamped to `[-1 + eps, 1 - eps]` before `acos`.
    pub clamp_eps: f64,
}

impl MarginLossConfig {
    pub fn new(family: LossFamily, scale: f64, margin: f64) -> Self {
        Self {
            family,
            scale,
            margin,
            clamp_eps: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scale {} must be positive",
                self.scale
            )));
        }
        let max_margin = match self.family {
            LossFamily::CosFace => 1.0,
            _ => PI,
        };
        if self.family.has_margin() && !(self.margin >= 0.0 && self.margin < max_margin) {
            return Err(Error::InvalidConfig(format!(
                "margin {} outside [0, {max_margin}) for {}",
                self.margin,
                self.family.name()
            )));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "clamp_eps {}",
                self.clamp_eps
            )));
        }
        Ok(())
    }
}

/// Forward results for one batch. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatchResult {
    pub batch: usize,
    pub classes: usize,
    pub dim: usize,
    /// Mean loss over the batch, in nats.
    pub loss: f64,
    pub per_sample_loss: Vec<f64>,
    /// `B x C` logits after scale and margin.
    pub logits: Vec<f64>,
    /// `B x C` softmax probabilities.
    pub probs: Vec<f64>,
    /// `B x C` derivative of the mean loss with respect to each cosine
    /// (raw logit for `PlainSoftmax`).
    pub grad_logit_cos: Vec<f64>,
    /// `B x d` gradient with respect to the (normalized) embeddings.
    pub grad_embeddings: Vec<f64>,
    /// `C x d` gradient with respect to the (normalized) class weights.
    pub grad_class_weights: Vec<f64>,
}

/// Gradients with respect to raw, pre-normalization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGradients {
    pub grad_embeddings: Vec<f64>,
    pub grad_class_weights: Vec<f64>,
}

fn check_shapes(
    embeddings: &[f64],
    class_weights: &[f64],
    labels: &[usize],
    dim: usize,
) -> Result<(usize, usize)> {
    if dim == 0 {
        return Err(Error::InvalidDimension(dim));
    }
    if !embeddings.len().is_multiple_of(dim) || embeddings.len() / dim != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len() * dim,
            got: embeddings.len(),
        });
    }
    if !class_weights.len().is_multiple_of(dim) || class_weights.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: class_weights.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptySet);
    }
    let classes = class_weights.len() / dim;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: classes,
        });
    }
    Ok((labels.len(), classes))
}

fn check_unit_rows(data: &[f64], dim: usize) -> Result<()> {
    for (i, r) in data.chunks_exact(dim).enumerate() {
        let n = norm(r);
        if !((n - 1.0).abs() <= UNIT_INPUT_TOLERANCE) {
            return Err(Error::NonUnitInput { row: i, norm: n });
        }
    }
    Ok(())
}

/// `ln sum exp(l_j)` kept as `max + ln(1 + rest)` so that `lse - l_max`
/// stays accurate when the loss is tiny.
#[derive(Debug, Clone, Copy)]
struct LogSumExp {
    max: f64,
    log1p_rest: f64,
}

impl LogSumExp {
    fn value(self) -> f64 {
        self.max + self.log1p_rest
    }

    fn minus(self, x: f64) -> f64 {
        (self.max - x) + self.log1p_rest
    }
}

fn log_sum_exp(logits: &[f64]) -> LogSumExp {
    let (arg, max) =
        logits
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (j, l)| if l > acc.1 { (j, l) } else { acc },
            );
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != arg)
        .map(|(_, l)| (l - max).exp())
        .sum();
    LogSumExp {
        max,
        log1p_rest: rest.ln_1p(),
    }
}

/// Target logit and its derivative with respect to the cosine.
fn target_logit(cos: f64, margin: f64, config: &MarginLossConfig) -> (f64, f64) {
    let s = config.scale;
    match config.family {
        LossFamily::PlainSoftmax => (cos, 1.0),
        LossFamily::NormSoftmax => (s * cos, s),
        LossFamily::CosFace => (s * (cos - margin), s),
        LossFamily::ArcFace | LossFamily::KappaFace => {
            if margin == 0.0 {
                return (s * cos, s);
            }
            let eps = config.clamp_eps;
            let u = cos.clamp(-1.0 + eps, 1.0 - eps);
            let theta = u.acos();
            let shifted = theta + margin;
            if shifted >= PI {
                (-s, 0.0)
            } else {
                // d cos(t + m) / d cos t = sin(t + m) / sin t
                (s * shifted.cos(), s * shifted.sin() / (1.0 - u * u).sqrt())
            }
        }
    }
}

/// Forward pass with the per-cosine gradients and gradients with respect to
/// the (unit) inputs.
///
/// `psi` must be given exactly when the family is `KappaFace`, with one
/// entry per class. Angular families require unit rows.
pub fn forward(
    embeddings: &[f64],
    class_weights: &[f64],
    labels: &[usize],
    dim: usize,
    psi: Option<&[f64]>,
    config: &MarginLossConfig,
) -> Result<LossBatchResult> {
    config.validate()?;
    let (batch, classes) = check_shapes(embeddings, class_weights, labels, dim)?;
    match (config.family, psi) {
        (LossFamily::KappaFace, None) => {
            return Err(Error::ConfigMismatch(
                "kappaface needs per-class psi".into(),
            ))
        }
        (LossFamily::KappaFace, Some(p)) if p.len() != classes => {
            return Err(Error::ConfigMismatch(format!(
                "psi has {} entries for {classes} classes",
                p.len()
            )))
        }
        (LossFamily::KappaFace, Some(_)) | (_, None) => {}
        (f, Some(_)) => {
            return Err(Error::ConfigMismatch(format!("{} takes no psi", f.name())));
        }
    }
    if config.family.is_angular() {
        check_unit_rows(embeddings, dim)?;
        check_unit_rows(class_weights, dim)?;
    }

    let inv_b = 1.0 / batch as f64;
    let mut logits = vec![0.0; batch * classes];
    let mut probs = vec![0.0; batch * classes];
    let mut grad_cos = vec![0.0; batch * classes];
    let mut per_sample_loss = Vec::with_capacity(batch);
    let mut grad_embeddings = vec![0.0; batch * dim];
    let mut grad_class_weights = vec![0.0; classes * dim];
    let mut dlogit = vec![0.0; classes];

    for (i, &label) in labels.iter().enumerate() {
        let z = row(embeddings, dim, i);
        let lrow = row_mut(&mut logits, classes, i);
        for (j, (l, dl)) in lrow.iter_mut().zip(dlogit.iter_mut()).enumerate() {
            let cos = dot(z, row(class_weights, dim, j));
            let (logit, d) = if j == label {
                let margin = match config.family {
                    LossFamily::KappaFace => psi.map_or(0.0, |p| p[label]) * config.margin,
                    _ => config.margin,
                };
                target_logit(cos, margin, config)
            } else if config.family.is_angular() {
                (config.scale * cos, config.scale)
            } else {
                (cos, 1.0)
            };
            *l = logit;
            *dl = d;
        }
        let lse = log_sum_exp(lrow);
        per_sample_loss.push(lse.minus(lrow[label]));
        let lse = lse.value();

        let prow = row_mut(&mut probs, classes, i);
        for (p, l) in prow.iter_mut().zip(row(&logits, classes, i)) {
            *p = (l - lse).exp();
        }
        let grow = row_mut(&mut grad_cos, classes, i);
        for (j, g) in grow.iter_mut().enumerate() {
            let indicator = if j == label { 1.0 } else { 0.0 };
            *g = (row(&probs, classes, i)[j] - indicator) * dlogit[j] * inv_b;
        }
        let gz = row_mut(&mut grad_embeddings, dim, i);
        for (j, &g) in row(&grad_cos, classes, i).iter().enumerate() {
            axpy(g, row(class_weights, dim, j), gz);
        }
        for (j, &g) in row(&grad_cos, classes, i).iter().enumerate() {
            axpy(g, z, row_mut(&mut grad_class_weights, dim, j));
        }
    }

    let loss = per_sample_loss.iter().sum::<f64>() * inv_b;
    Ok(LossBatchResult {
        batch,
        classes,
        dim,
        loss,
        per_sample_loss,
        logits,
        probs,
        grad_logit_cos: grad_cos,
        grad_embeddings,
        grad_class_weights,
    })
}

/// Chains the forward gradients through the l2 normalization of every row,
/// giving gradients with respect to the raw embeddings and class weights.
///
/// For `PlainSoftmax` the forward gradients are already raw and are copied.
pub fn backward(
    result: &LossBatchResult,
    raw_embeddings: &[f64],
    raw_class_weights: &[f64],
    config: &MarginLossConfig,
) -> Result<RawGradients> {
    let dim = result.dim;
    if raw_embeddings.len() != result.batch * dim {
        return Err(Error::DimensionMismatch {
            expected: result.batch * dim,
            got: raw_embeddings.len(),
        });
    }
    if raw_class_weights.len() != result.classes * dim {
        return Err(Error::DimensionMismatch {
            expected: result.classes * dim,
            got: raw_class_weights.len(),
        });
    }
    if !config.family.is_angular() {
        return Ok(RawGradients {
            grad_embeddings: result.grad_embeddings.clone(),
            grad_class_weights: result.grad_class_weights.clone(),
        });
    }
    let through_norm = |raw: &[f64], grad: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(raw.len());
        for (v, g) in raw.chunks_exact(dim).zip(grad.chunks_exact(dim)) {
            let n = norm(v);
            let unit: Vec<f64> = v.iter().map(|x| x / n).collect();
            out.extend(normalize_backward(n, &unit, g));
        }
        out
    };
    Ok(RawGradients {
        grad_embeddings: through_norm(raw_embeddings, &result.grad_embeddings),
        grad_class_weights: through_norm(raw_class_weights, &result.grad_class_weights),
    })
}

/// Row-wise l2 normalization of a row-major matrix.
pub fn normalize_rows(data: &[f64], dim: usize) -> Result<Vec<f64>> {
    let mut out = data.to_vec();
    for r in out.chunks_exact_mut(dim) {
        let n = norm(r);
        if !(n > NORM_EPSILON) {
            return Err(Error::ZeroVector { norm: n });
        }
        r.iter_mut().for_each(|x| *x /= n);
    }
    Ok(out)
}

/// Forward and backward from raw parameters: normalizes rows for angular
/// families, then chains the gradients back.
pub fn loss_and_gradients(
    raw_embeddings: &[f64],
    raw_class_weights: &[f64],
    labels: &[usize],
    dim: usize,
    psi: Option<&[f64]>,
    config: &MarginLossConfig,
) -> Result<(LossBatchResult, RawGradients)> {
    let result = if config.family.is_angular() {
        let z = normalize_rows(raw_embeddings, dim)?;
        let w = normalize_rows(raw_class_weights, dim)?;
        forward(&z, &w, labels, dim, psi, config)?
    } else {
        forward(raw_embeddings, raw_class_weights, labels, dim, psi, config)?
    };
    let grads = backward(&result, raw_embeddings, raw_class_weights, config)?;
    Ok((result, grads))
}

/// Mean softmax cross-entropy of row-major `B x C` logits, zero bias.
pub fn plain_softmax_forward(logits: &[f64], labels: &[usize], classes: usize) -> Result<f64> {
    if classes == 0 || labels.is_empty() || logits.len() != labels.len() * classes {
        return Err(Error::DimensionMismatch {
            expected: labels.len() * classes,
            got: logits.len(),
        });
    }
    let mut total = 0.0;
    for (r, &label) in logits.chunks_exact(classes).zip(labels) {
        if label >= classes {
            return Err(Error::IndexOutOfRange {
                index: label,
                len: classes,
            });
        }
        total += log_sum_exp(r).minus(r[label]);
    }
    Ok(total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(
        rng: &mut ChaCha8Rng,
        b: usize,
        c: usize,
        d: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
        let z: Vec<f64> = (0..b * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..b).map(|_| rng.random_range(0..c)).collect();
        (
            normalize_rows(&z, d).unwrap(),
            normalize_rows(&w, d).unwrap(),
            labels,
        )
    }

    #[test]
    fn two_class_hand_example() {
        // cos(target) = 0.8, cos(other) = 0.1, s = 64, margin 0.5
        let z = [1.0, 0.0];
        let w = [0.8, 0.6, 0.1, (1.0f64 - 0.01).sqrt()];
        let cfg = MarginLossConfig::new(LossFamily::ArcFace, 64.0, 0.5);
        let r = forward(&z, &w, &[0], 2, None, &cfg).unwrap();
        // 64 cos(acos 0.8 + 0.5)
        assert!((r.logits[0] - 26.5222864864).abs() < 1e-9);
        assert!((r.logits[1] - 6.4).abs() < 1e-12);
        let want = (r.logits[1] - r.logits[0]).exp().ln_1p();
        assert!((r.loss - want).abs() < 1e-24);
        assert!((r.loss - 1.8239041659e-9).abs() < 1e-18);
    }

    #[test]
    fn plain_softmax_examples() {
        let l = plain_softmax_forward(&[0.3; 5], &[2], 5).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
        let l = plain_softmax_forward(&[10.0, -10.0], &[0], 2).unwrap();
        assert!((l - 2.0611536e-9).abs() < 1e-15);
        let base = [2.0, 0.5, -1.0];
        let mut prev = f64::INFINITY;
        for t in 1..20 {
            let scaled: Vec<f64> = base.iter().map(|x| x * t as f64 * 0.5).collect();
            let l = plain_softmax_forward(&scaled, &[0], 3).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for family in LossFamily::ALL {
            let (z, w, labels) = random_state(&mut rng, 6, 9, 5);
            let psi: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
            let cfg = MarginLossConfig::new(family, 30.0, 0.3);
            let psi = (family == LossFamily::KappaFace).then_some(psi.as_slice());
            let r = forward(&z, &w, &labels, 5, psi, &cfg).unwrap();
            for p in r.probs.chunks_exact(9) {
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
    }

    #[test]
    fn gradient_probability_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (z, w, labels) = random_state(&mut rng, 4, 7, 6);
        let psi = [0.2, 0.9, 0.5, 0.1, 0.7, 0.3, 1.0];
        let cfg = MarginLossConfig::new(LossFamily::KappaFace, 16.0, 0.5);
        let r = forward(&z, &w, &labels, 6, Some(&psi), &cfg).unwrap();
        // Perturb one logit and difference the per-sample loss.
        for (i, &label) in labels.iter().enumerate() {
            for j in 0..7 {
                let h = 1e-6;
                let f = |delta: f64| {
                    let mut l = r.logits[i * 7..(i + 1) * 7].to_vec();
                    l[j] += delta;
                    plain_softmax_forward(&l, &[label], 7).unwrap()
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let ind = if j == label { 1.0 } else { 0.0 };
                assert!((fd - (r.probs[i * 7 + j] - ind)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn non_target_cos_gradient_is_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (z, w, labels) = random_state(&mut rng, 5, 6, 4);
        let cfg = MarginLossConfig::new(LossFamily::ArcFace, 64.0, 0.5);
        let r = forward(&z, &w, &labels, 4, None, &cfg).unwrap();
        for (i, &label) in labels.iter().enumerate() {
            for j in 0..6 {
                if j != label {
                    let g = r.grad_logit_cos[i * 6 + j] * 5.0;
                    assert!((g - 64.0 * r.probs[i * 6 + j]).abs() < 1e-12);
                    assert!(g >= 0.0);
                }
            }
        }
    }

    #[test]
    fn reductions_are_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let (z, w, labels) = random_state(&mut rng, 5, 8, 7);
            let kappa = MarginLossConfig::new(LossFamily::KappaFace, 64.0, 0.5);
            let arc = MarginLossConfig::new(LossFamily::ArcFace, 64.0, 0.5);
            let norm_sm = MarginLossConfig::new(LossFamily::NormSoftmax, 64.0, 0.5);
            let a = forward(&z, &w, &labels, 7, Some(&[1.0; 8]), &kappa).unwrap();
            let b = forward(&z, &w, &labels, 7, None, &arc).unwrap();
            assert!((a.loss - b.loss).abs() <= 1e-12);
            let a = forward(&z, &w, &labels, 7, Some(&[0.0; 8]), &kappa).unwrap();
            let b = forward(&z, &w, &labels, 7, None, &norm_sm).unwrap();
            assert!((a.loss - b.loss).abs() <= 1e-12);
        }
    }

    #[test]
    fn loss_grows_with_psi() {
        let z = [1.0, 0.0, 0.0];
        for &theta in &[0.2f64, 0.8, 1.5, 2.3] {
            let w = [
                theta.cos(),
                theta.sin(),
                0.0,
                0.3f64.cos(),
                0.0,
                0.3f64.sin(),
            ];
            let cfg = MarginLossConfig::new(LossFamily::KappaFace, 32.0, 0.6);
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=20 {
                let psi = [k as f64 / 20.0, 0.5];
                let l = forward(&z, &w, &[0], 3, Some(&psi), &cfg).unwrap().loss;
                assert!(l >= prev, "theta={theta} k={k}");
                prev = l;
            }
        }
    }

    #[test]
    fn angle_overflow_clamps_to_antipode() {
        let theta = 3.0f64;
        let z = [1.0, 0.0];
        let w = [theta.cos(), theta.sin(), 0.0, 1.0];
        let cfg = MarginLossConfig::new(LossFamily::ArcFace, 10.0, 0.5);
        let r = forward(&z, &w, &[0], 2, None, &cfg).unwrap();
        assert_eq!(r.logits[0], -10.0);
        assert_eq!(r.grad_logit_cos[0], 0.0);
    }

    #[test]
    fn input_errors() {
        let cfg = MarginLossConfig::new(LossFamily::KappaFace, 64.0, 0.5);
        let z = [1.0, 0.0];
        let w = [1.0, 0.0, 0.0, 1.0];
        assert!(matches!(
            forward(&z, &w, &[0], 2, Some(&[1.0]), &cfg),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(matches!(
            forward(&z, &w, &[0], 2, None, &cfg),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(matches!(
            forward(&[1.1, 0.0], &w, &[0], 2, Some(&[1.0, 1.0]), &cfg),
            Err(Error::NonUnitInput { row: 0, .. })
        ));
        let arc = MarginLossConfig::new(LossFamily::ArcFace, 64.0, 0.5);
        assert!(matches!(
            forward(&z, &w, &[0], 2, Some(&[1.0, 1.0]), &arc),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(forward(&z, &w, &[2], 2, None, &arc).is_err());
        assert!(MarginLossConfig::new(LossFamily::CosFace, 64.0, 1.2)
            .validate()
            .is_err());
        assert!(MarginLossConfig::new(LossFamily::ArcFace, -1.0, 0.5)
            .validate()
            .is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in LossFamily::ALL {
            assert_eq!(LossFamily::from_name(f.name()), Some(f));
        }
        assert_eq!(LossFamily::from_name("sphereface"), None);
    }
}
