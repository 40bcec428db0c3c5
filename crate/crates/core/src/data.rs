//! Imbalanced vMF-mixture datasets and verification pair lists.
//!
//! Class prototypes are uniform on the input sphere. Class `c` (rank
//! `c + 1`) gets `n_c = clamp(round(max_n * rank^-exponent), min_n, max_n)`
//! samples drawn from `vMF(prototype_c, kappa_c)` with `kappa_c`
//! log-uniform. In noisy classes a fraction of the samples is replaced by
//! uniform sphere draws.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sphere::{sample_uniform_with, UnitVector, VmfParams, VmfSampler};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub pop_exponent: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    /// Fraction of a noisy class's samples drawn uniformly on the sphere.
    pub noise_mix: f64,
    /// Fraction of classes that are noisy.
    pub noisy_class_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 100,
            input_dim: 32,
            min_n: 5,
            max_n: 500,
            pop_exponent: 1.0,
            kappa_min: 10.0,
            kappa_max: 300.0,
            noise_mix: 0.5,
            noisy_class_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::SpecInvalid(msg));
        if self.num_classes < 2 {
            return fail(format!(
                "num_classes = {} must be at least 2",
                self.num_classes
            ));
        }
        if self.input_dim < 2 {
            return fail(format!("input_dim = {} must be at least 2", self.input_dim));
        }
        if self.min_n < 2 {
            return fail(format!("min_n = {} must be at least 2", self.min_n));
        }
        if self.max_n < self.min_n {
            return fail(format!(
                "max_n = {} must be at least min_n = {}",
                self.max_n, self.min_n
            ));
        }
        if !(self.pop_exponent >= 0.0 && self.pop_exponent.is_finite()) {
            return fail(format!(
                "pop_exponent = {} must be nonnegative",
                self.pop_exponent
            ));
        }
        if !(self.kappa_min > 0.0) {
            return fail(format!("kappa_min = {} must be positive", self.kappa_min));
        }
        if !(self.kappa_max >= self.kappa_min && self.kappa_max.is_finite()) {
            return fail(format!(
                "kappa_max = {} must be at least kappa_min",
                self.kappa_max
            ));
        }
        if !(0.0..1.0).contains(&self.noise_mix) {
            return fail(format!("noise_mix = {} must lie in [0, 1)", self.noise_mix));
        }
        if !(0.0..=1.0).contains(&self.noisy_class_fraction) {
            return fail(format!(
                "noisy_class_fraction = {} must lie in [0, 1]",
                self.noisy_class_fraction
            ));
        }
        Ok(())
    }

    /// Class populations by rank.
    pub fn populations(&self) -> Vec<usize> {
        (1..=self.num_classes)
            .map(|rank| {
                let n = (self.max_n as f64 * (rank as f64).powf(-self.pop_exponent)).round();
                (n as usize).clamp(self.min_n, self.max_n)
            })
            .collect()
    }
}

/// Labeled inputs; matrices are row-major `f32` so they round-trip through
/// the binary dataset format exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub input_dim: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<usize>,
    /// `C x input_dim` ground-truth mean directions.
    pub prototypes: Vec<f32>,
    pub true_kappas: Vec<f32>,
    pub populations: Vec<usize>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.populations.len()
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Inputs of the given samples widened to `f64`, row-major.
    pub fn gather_inputs(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            out.extend(self.input(i).iter().map(|&x| x as f64));
        }
        out
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let c = self.populations.len();
        if self.input_dim < 2 || c < 1 {
            return Err(Error::SpecInvalid("empty dataset shape".into()));
        }
        if self.inputs.len() != self.labels.len() * self.input_dim
            || self.prototypes.len() != c * self.input_dim
            || self.true_kappas.len() != c
        {
            return Err(Error::SpecInvalid("inconsistent array lengths".into()));
        }
        let mut counts = alloc::vec![0usize; c];
        for &l in &self.labels {
            if l >= c {
                return Err(Error::IndexOutOfRange { index: l, len: c });
            }
            counts[l] += 1;
        }
        if counts != self.populations {
            return Err(Error::SpecInvalid(
                "populations disagree with labels".into(),
            ));
        }
        if let Some(e) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(e));
        }
        Ok(())
    }
}

fn class_rng(seed: u64, class: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class as u64 + 1);
    rng
}

struct ClassModel {
    prototypes: Vec<UnitVector>,
    kappas: Vec<f64>,
    noisy: Vec<bool>,
}

fn class_model(spec: &SyntheticSpec) -> ClassModel {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.num_classes;
    let prototypes = (0..c)
        .map(|_| sample_uniform_with(spec.input_dim, &mut rng))
        .collect();
    let (lo, hi) = (spec.kappa_min.ln(), spec.kappa_max.ln());
    let kappas = (0..c)
        .map(|_| {
            if hi > lo {
                rng.random_range(lo..hi).exp()
            } else {
                spec.kappa_min
            }
        })
        .collect();
    let num_noisy = ((spec.noisy_class_fraction * c as f64).round() as usize).min(c);
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut rng);
    let mut noisy = alloc::vec![false; c];
    for &k in &order[..num_noisy] {
        noisy[k] = true;
    }
    ClassModel {
        prototypes,
        kappas,
        noisy,
    }
}

fn draw_class(
    sampler: &VmfSampler,
    d: usize,
    n: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<f32>,
) {
    let num_noise = (noise * n as f64).round() as usize;
    for k in 0..n {
        let x = if k < num_noise {
            sample_uniform_with(d, rng)
        } else {
            sampler.sample(rng)
        };
        out.extend(x.as_slice().iter().map(|&v| v as f32));
    }
}

/// Builds the training set and a holdout set of fresh draws from the same
/// classes. The holdout has `max(1, round(holdout_fraction * n_c))` samples
/// per class; the training draws do not depend on the holdout size.
pub fn generate_split(
    spec: &SyntheticSpec,
    holdout_fraction: f64,
) -> Result<(SyntheticDataset, SyntheticDataset)> {
    spec.validate()?;
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::SpecInvalid(format!(
            "holdout_fraction = {holdout_fraction} must lie in [0, 1)"
        )));
    }
    let model = class_model(spec);
    let d = spec.input_dim;
    let populations = spec.populations();
    let holdout_pops: Vec<usize> = populations
        .iter()
        .map(|&n| ((holdout_fraction * n as f64).round() as usize).max(1))
        .collect();

    let mut train_inputs = Vec::new();
    let mut train_labels = Vec::new();
    let mut hold_inputs = Vec::new();
    let mut hold_labels = Vec::new();
    for c in 0..spec.num_classes {
        let params = VmfParams::new(model.prototypes[c].clone(), model.kappas[c])?;
        let sampler = VmfSampler::new(&params);
        let noise = if model.noisy[c] { spec.noise_mix } else { 0.0 };
        let mut rng = class_rng(spec.seed, c);
        draw_class(
            &sampler,
            d,
            populations[c],
            noise,
            &mut rng,
            &mut train_inputs,
        );
        train_labels.extend(core::iter::repeat_n(c, populations[c]));
        draw_class(
            &sampler,
            d,
            holdout_pops[c],
            noise,
            &mut rng,
            &mut hold_inputs,
        );
        hold_labels.extend(core::iter::repeat_n(c, holdout_pops[c]));
    }
    let prototypes: Vec<f32> = model
        .prototypes
        .iter()
        .flat_map(|p| p.as_slice().iter().map(|&v| v as f32))
        .collect();
    let true_kappas: Vec<f32> = model.kappas.iter().map(|&k| k as f32).collect();
    let train = SyntheticDataset {
        input_dim: d,
        inputs: train_inputs,
        labels: train_labels,
        prototypes: prototypes.clone(),
        true_kappas: true_kappas.clone(),
        populations,
    };
    let holdout = SyntheticDataset {
        input_dim: d,
        inputs: hold_inputs,
        labels: hold_labels,
        prototypes,
        true_kappas,
        populations: holdout_pops,
    };
    Ok((train, holdout))
}

/// Training set only.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    generate_split(spec, 0.0).map(|(train, _)| train)
}

/// One verification pair, `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub same: bool,
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Samples `num_pos` same-class and `num_neg` cross-class pairs without
/// duplicate unordered pairs. Positives come first in the output.
pub fn make_pairs(
    dataset: &SyntheticDataset,
    num_pos: usize,
    num_neg: usize,
    seed: u64,
) -> Result<Vec<Pair>> {
    let n = dataset.len();
    let c = dataset.num_classes();
    let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); c];
    for (i, &l) in dataset.labels.iter().enumerate() {
        members[l].push(i);
    }
    let class_pairs: Vec<u64> = members
        .iter()
        .map(|m| (m.len() as u64 * (m.len() as u64).saturating_sub(1)) / 2)
        .collect();
    let pos_available: u64 = class_pairs.iter().sum();
    let neg_available = (n as u64 * (n as u64).saturating_sub(1)) / 2 - pos_available;
    if num_pos as u64 > pos_available {
        return Err(Error::InsufficientPairs {
            kind: "positive",
            requested: num_pos,
            available: pos_available as usize,
        });
    }
    if num_neg as u64 > neg_available {
        return Err(Error::InsufficientPairs {
            kind: "negative",
            requested: num_neg,
            available: neg_available as usize,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(num_pos + num_neg);

    // Positives: uniform over all same-class unordered pairs.
    if num_pos > 0 {
        if 2 * num_pos as u64 > pos_available {
            let mut all: Vec<(usize, usize)> = Vec::with_capacity(pos_available as usize);
            for m in &members {
                for a in 0..m.len() {
                    for b in a + 1..m.len() {
                        all.push((m[a], m[b]));
                    }
                }
            }
            let (chosen, _) = all.partial_shuffle(&mut rng, num_pos);
            out.extend(chosen.iter().map(|&(i, j)| Pair { i, j, same: true }));
        } else {
            let cumulative: Vec<u64> = class_pairs
                .iter()
                .scan(0u64, |acc, &p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect();
            let mut seen = BTreeSet::new();
            while out.len() < num_pos {
                let t = rng.random_range(0..pos_available);
                let cls = cumulative.partition_point(|&cum| cum <= t);
                let m = &members[cls];
                let a = rng.random_range(0..m.len());
                let b = rng.random_range(0..m.len() - 1);
                let b = if b >= a { b + 1 } else { b };
                let (i, j) = ordered(m[a], m[b]);
                if seen.insert((i, j)) {
                    out.push(Pair { i, j, same: true });
                }
            }
        }
    }

    if num_neg > 0 {
        let labels = &dataset.labels;
        if 2 * num_neg as u64 > neg_available {
            let mut all: Vec<(usize, usize)> = Vec::with_capacity(neg_available as usize);
            for i in 0..n {
                for j in i + 1..n {
                    if labels[i] != labels[j] {
                        all.push((i, j));
                    }
                }
            }
            let (chosen, _) = all.partial_shuffle(&mut rng, num_neg);
            out.extend(chosen.iter().map(|&(i, j)| Pair { i, j, same: false }));
        } else {
            let mut seen = BTreeSet::new();
            let mut count = 0;
            while count < num_neg {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if labels[a] == labels[b] {
                    continue;
                }
                let (i, j) = ordered(a, b);
                if seen.insert((i, j)) {
                    out.push(Pair { i, j, same: false });
                    count += 1;
                }
            }
        }
    }
    Ok(out)
}
