//! Per-class margin calibration.
//!
//! Concentrations are standardized across classes and squashed by a
//! tempered sigmoid into a concentration weight `w_conc`; class populations
//! map through a half-cosine into a population weight `w_pop`. The blend
//! `psi = gamma * w_pop + (1 - gamma) * w_conc` scales the base margin.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    /// Sigmoid temperature `T` in `(0, 1]`.
    pub temperature: f64,
    /// Population share `gamma` in `[0, 1]`.
    pub gamma: f64,
    /// Base additive angular margin in radians, `(0, pi)`.
    pub m0: f64,
    /// Largest class population `K`.
    pub max_population: usize,
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature {} must lie in (0, 1]",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "gamma {} must lie in [0, 1]",
                self.gamma
            )));
        }
        if !(self.m0 > 0.0 && self.m0 < PI) {
            return Err(Error::InvalidConfig(format!(
                "m0 {} must lie in (0, pi)",
                self.m0
            )));
        }
        if self.max_population == 0 {
            return Err(Error::InvalidConfig(
                "max_population must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Immutable per-class weight snapshot for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    /// Raw concentration estimates, when the snapshot came from them.
    pub kappa_hat: Option<Vec<f64>>,
    pub kappa_tilde: Vec<f64>,
    pub w_conc: Vec<f64>,
    pub w_pop: Vec<f64>,
    pub psi: Vec<f64>,
    pub epoch: usize,
}

impl ClassWeights {
    pub fn num_classes(&self) -> usize {
        self.psi.len()
    }
}

/// Standardizes with the population standard deviation. All-equal inputs
/// map to all zeros.
pub fn standardize_kappas(kappa_hat: &[f64]) -> Vec<f64> {
    let c = kappa_hat.len() as f64;
    if kappa_hat.is_empty() {
        return Vec::new();
    }
    let mean = kappa_hat.iter().sum::<f64>() / c;
    let var = kappa_hat.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / c;
    let sigma = var.sqrt();
    if !(sigma > 1e-12 * mean.abs().max(1.0)) {
        return vec![0.0; kappa_hat.len()];
    }
    kappa_hat.iter().map(|k| (k - mean) / sigma).collect()
}

/// `1 - sigmoid(kappa_tilde * T)`.
pub fn concentration_weight(kappa_tilde: f64, temperature: f64) -> f64 {
    // 1 - 1/(1+e^{-x}) = 1/(1+e^{x})
    1.0 / (1.0 + (kappa_tilde * temperature).exp())
}

/// `(cos(pi n / K) + 1) / 2`.
pub fn population_weight(n: usize, max_population: usize) -> Result<f64> {
    if max_population == 0 || n > max_population {
        return Err(Error::PopulationExceedsMax {
            n,
            max: max_population,
        });
    }
    Ok(((PI * n as f64 / max_population as f64).cos() + 1.0) / 2.0)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ConfigMismatch(format!(
            "{a} concentrations for {b} class populations"
        )));
    }
    if a == 0 {
        return Err(Error::EmptySet);
    }
    Ok(())
}

fn population_weights(populations: &[usize], config: &SchedulerConfig) -> Result<Vec<f64>> {
    populations
        .iter()
        .map(|&n| population_weight(n, config.max_population))
        .collect()
}

fn blend(
    kappa_hat: Option<Vec<f64>>,
    kappa_tilde: Vec<f64>,
    w_conc: Vec<f64>,
    w_pop: Vec<f64>,
    gamma: f64,
    epoch: usize,
) -> ClassWeights {
    let psi = w_pop
        .iter()
        .zip(&w_conc)
        .map(|(s, k)| gamma * s + (1.0 - gamma) * k)
        .collect();
    ClassWeights {
        kappa_hat,
        kappa_tilde,
        w_conc,
        w_pop,
        psi,
        epoch,
    }
}

/// Calibration from already standardized concentrations.
pub fn psi_from_standardized(
    kappa_tilde: &[f64],
    populations: &[usize],
    config: &SchedulerConfig,
) -> Result<ClassWeights> {
    config.validate()?;
    check_lengths(kappa_tilde.len(), populations.len())?;
    let w_pop = population_weights(populations, config)?;
    let w_conc = kappa_tilde
        .iter()
        .map(|&k| concentration_weight(k, config.temperature))
        .collect();
    Ok(blend(
        None,
        kappa_tilde.to_vec(),
        w_conc,
        w_pop,
        config.gamma,
        0,
    ))
}

/// Full calibration from raw per-class concentration estimates.
pub fn compute_psi(
    kappa_hat: &[f64],
    populations: &[usize],
    config: &SchedulerConfig,
) -> Result<ClassWeights> {
    let kappa_tilde = standardize_kappas(kappa_hat);
    let mut w = psi_from_standardized(&kappa_tilde, populations, config)?;
    w.kappa_hat = Some(kappa_hat.to_vec());
    Ok(w)
}

/// Snapshot used before the first concentration pass: population weights
/// only, with every concentration weight at its midpoint 0.5.
pub fn warm_start(populations: &[usize], config: &SchedulerConfig) -> Result<ClassWeights> {
    config.validate()?;
    if populations.is_empty() {
        return Err(Error::EmptySet);
    }
    let w_pop = population_weights(populations, config)?;
    let c = populations.len();
    Ok(blend(
        None,
        vec![0.0; c],
        vec![0.5; c],
        w_pop,
        config.gamma,
        0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(t: f64, g: f64, k: usize) -> SchedulerConfig {
        SchedulerConfig {
            temperature: t,
            gamma: g,
            m0: 0.5,
            max_population: k,
        }
    }

    #[test]
    fn standardize_examples() {
        assert_eq!(standardize_kappas(&[1.0, 3.0]), vec![-1.0, 1.0]);
        assert_eq!(standardize_kappas(&[5.0, 5.0, 5.0]), vec![0.0; 3]);
        let s = standardize_kappas(&[0.0, 10.0, 20.0]);
        assert!((s[0] + 1.22474).abs() < 1e-5 && s[1] == 0.0 && (s[2] - 1.22474).abs() < 1e-5);
    }

    #[test]
    fn concentration_weight_examples() {
        assert_eq!(concentration_weight(0.0, 0.3), 0.5);
        // 1 / (1 + e^{-1.958})
        assert!((concentration_weight(-3.56, 0.55) - 0.8763163435).abs() < 1e-9);
        assert!((concentration_weight(5.44, 0.55) - 0.0477885978).abs() < 1e-9);
    }

    #[test]
    fn population_weight_examples() {
        assert!(population_weight(840, 840).unwrap().abs() < 1e-15);
        assert!((population_weight(420, 840).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(population_weight(0, 840).unwrap(), 1.0);
        assert!((population_weight(13, 840).unwrap() - 0.99941).abs() < 1e-5);
        assert_eq!(
            population_weight(841, 840),
            Err(Error::PopulationExceedsMax { n: 841, max: 840 })
        );
    }

    #[test]
    fn psi_is_convex_blend() {
        // w_pop = w_conc = 0.5 at n = K/2 and kappa_tilde = 0.
        let w = psi_from_standardized(&[0.0], &[50], &cfg(0.5, 0.5, 100)).unwrap();
        assert!((w.psi[0] - 0.5).abs() < 1e-15);
        let w = psi_from_standardized(&[1.3, -0.4], &[3, 90], &cfg(0.7, 0.3, 100)).unwrap();
        for c in 0..2 {
            assert_eq!(w.psi[c], 0.3 * w.w_pop[c] + 0.7 * w.w_conc[c]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0, 0.5, 10).validate().is_err());
        assert!(cfg(1.0, 0.5, 10).validate().is_ok());
        assert!(cfg(1.1, 0.5, 10).validate().is_err());
        assert!(cfg(0.5, 1.5, 10).validate().is_err());
        assert!(cfg(0.5, 0.5, 0).validate().is_err());
        let mut c = cfg(0.5, 0.5, 10);
        c.m0 = 4.0;
        assert!(c.validate().is_err());
        assert!(compute_psi(&[1.0, 2.0], &[3], &cfg(0.5, 0.5, 10)).is_err());
        assert!(compute_psi(&[1.0], &[30], &cfg(0.5, 0.5, 10)).is_err());
    }

    #[test]
    fn warm_start_uses_midpoint() {
        let w = warm_start(&[10, 5], &cfg(0.55, 0.5, 10)).unwrap();
        assert_eq!(w.w_conc, vec![0.5, 0.5]);
        assert!((w.psi[0] - 0.25).abs() < 1e-15);
        assert!((w.psi[1] - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn standardized_has_zero_mean_unit_std(ks in prop::collection::vec(0.0f64..1e4, 2..60)) {
            let s = standardize_kappas(&ks);
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(var.sqrt() < 1e-9 || (var.sqrt() - 1.0).abs() < 1e-9);
            for i in 0..ks.len() {
                for j in 0..ks.len() {
                    if ks[i] < ks[j] { prop_assert!(s[i] <= s[j]); }
                }
            }
        }

        #[test]
        fn psi_is_bounded_and_pure(
            ks in prop::collection::vec(0.0f64..1e3, 1..30),
            t in 0.01f64..=1.0,
            g in 0.0f64..=1.0,
        ) {
            let pops: Vec<usize> = (0..ks.len()).map(|i| 1 + (i * 37) % 200).collect();
            let k = *pops.iter().max().unwrap();
            let c = cfg(t, g, k);
            let a = compute_psi(&ks, &pops, &c).unwrap();
            let b = compute_psi(&ks, &pops, &c).unwrap();
            prop_assert_eq!(&a, &b);
            for (i, p) in a.psi.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(p));
                if pops[i] > 0 && pops[i] < k {
                    prop_assert!(*p > 0.0 && *p < 1.0);
                }
            }
        }
    }
}
