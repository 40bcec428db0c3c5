//! 1:1 verification metrics from cosine similarities of embedding pairs.
//!
//! A pair is accepted when its similarity is at or above the threshold.
//! Candidate thresholds are `+inf`, midpoints between consecutive distinct
//! similarities, and `-inf`; each gives one ROC point.

use alloc::vec::Vec;

use crate::data::Pair;
use crate::linalg::{dot, row};
use crate::{Error, Result};

pub const DEFAULT_FAR_LEVELS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub far: f64,
    pub tar: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    /// Best accuracy over the threshold sweep.
    pub accuracy: f64,
    /// Threshold achieving `accuracy`, clamped to `[-1, 1]`.
    pub best_threshold: f64,
    /// `(FAR level, TAR)` for every achievable level, in the order given.
    pub tar_at_far: Vec<(f64, f64)>,
    /// Ascending FAR, nondecreasing TAR.
    pub roc: Vec<RocPoint>,
    pub num_pos: usize,
    pub num_neg: usize,
}

impl VerificationReport {
    pub fn tar_at(&self, level: f64) -> Option<f64> {
        self.tar_at_far
            .iter()
            .find(|(l, _)| *l == level)
            .map(|&(_, t)| t)
    }
}

/// Cosine similarity per pair for unit-norm row-major embeddings.
pub fn pair_similarities(embeddings: &[f64], dim: usize, pairs: &[Pair]) -> Result<Vec<f64>> {
    let n = embeddings.len() / dim.max(1);
    pairs
        .iter()
        .map(|p| {
            let hi = p.i.max(p.j);
            if hi >= n {
                return Err(Error::IndexOutOfRange { index: hi, len: n });
            }
            Ok(dot(row(embeddings, dim, p.i), row(embeddings, dim, p.j)))
        })
        .collect()
}

/// Sweep over precomputed similarities with their same-class flags.
pub fn evaluate_scores(scores: &[(f64, bool)], far_levels: &[f64]) -> Result<VerificationReport> {
    let num_pos = scores.iter().filter(|s| s.1).count();
    let num_neg = scores.len() - num_pos;
    if num_pos == 0 || num_neg == 0 {
        return Err(Error::DegeneratePairs);
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let total = scores.len() as f64;
    let (pos, neg) = (num_pos as f64, num_neg as f64);
    let mut roc = Vec::with_capacity(sorted.len() + 1);
    roc.push(RocPoint {
        far: 0.0,
        tar: 0.0,
        threshold: f64::INFINITY,
    });
    let mut best = (neg / total, f64::INFINITY);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < sorted.len() {
        let value = sorted[k].0;
        while k < sorted.len() && sorted[k].0 == value {
            if sorted[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let threshold = match sorted.get(k) {
            Some(next) => 0.5 * (value + next.0),
            None => f64::NEG_INFINITY,
        };
        let acc = (tp + (num_neg - fp)) as f64 / total;
        if acc > best.0 {
            best = (acc, threshold);
        }
        roc.push(RocPoint {
            far: fp as f64 / neg,
            tar: tp as f64 / pos,
            threshold,
        });
    }
    let tar_at_far = far_levels
        .iter()
        .filter(|&&level| level * neg >= 1.0 || level >= 1.0)
        .map(|&level| {
            let tar = roc
                .iter()
                .filter(|p| p.far <= level)
                .map(|p| p.tar)
                .fold(0.0, f64::max);
            (level, tar)
        })
        .collect();
    Ok(VerificationReport {
        accuracy: best.0,
        best_threshold: best.1.clamp(-1.0, 1.0),
        tar_at_far,
        roc,
        num_pos,
        num_neg,
    })
}

/// Verification report for unit embeddings and a labeled pair list.
pub fn evaluate_pairs(
    embeddings: &[f64],
    dim: usize,
    pairs: &[Pair],
    far_levels: &[f64],
) -> Result<VerificationReport> {
    let sims = pair_similarities(embeddings, dim, pairs)?;
    let scores: Vec<(f64, bool)> = sims.into_iter().zip(pairs.iter().map(|p| p.same)).collect();
    evaluate_scores(&scores, far_levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_accuracy(scores: &[(f64, bool)]) -> f64 {
        let mut thresholds: Vec<f64> = scores.iter().map(|s| s.0).collect();
        thresholds.push(f64::INFINITY);
        thresholds
            .iter()
            .map(|&t| {
                let correct = scores.iter().filter(|(s, same)| (*s >= t) == *same).count();
                correct as f64 / scores.len() as f64
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn separable_scores() {
        let mut scores = vec![(0.9, true); 5];
        scores.extend(vec![(-0.9, false); 12]);
        let r = evaluate_scores(&scores, &DEFAULT_FAR_LEVELS).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.best_threshold, 0.0);
        assert_eq!(r.tar_at(1e-1), Some(1.0));
        assert!(r.roc.iter().any(|p| p.far == 0.0 && p.tar == 1.0));
        // Only 12 negatives: 1e-2 and finer are not resolvable.
        assert_eq!(r.tar_at(1e-2), None);
    }

    #[test]
    fn tie_case() {
        let r = evaluate_scores(&[(0.5, true), (0.5, false)], &[]).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.best_threshold, 1.0);
    }

    #[test]
    fn degenerate_pairs() {
        assert_eq!(
            evaluate_scores(&[(0.1, true)], &[]),
            Err(Error::DegeneratePairs)
        );
        assert_eq!(evaluate_scores(&[], &[]), Err(Error::DegeneratePairs));
    }

    #[test]
    fn sweep_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..40 {
            let n = 2 + trial * 25;
            let mut scores: Vec<(f64, bool)> = (0..n)
                .map(|_| {
                    let same = rng.random_bool(0.4);
                    let s: f64 = rng.random_range(-1.0..1.0) + if same { 0.4 } else { 0.0 };
                    // Quantize so ties appear.
                    ((s * 20.0).round() / 20.0, same)
                })
                .collect();
            scores[0].1 = true;
            scores[1].1 = false;
            let r = evaluate_scores(&scores, &DEFAULT_FAR_LEVELS).unwrap();
            assert_eq!(r.accuracy, brute_force_accuracy(&scores), "trial {trial}");
            for w in r.roc.windows(2) {
                assert!(w[0].far <= w[1].far && w[0].tar <= w[1].tar);
            }
            let tars: Vec<f64> = r.tar_at_far.iter().map(|t| t.1).collect();
            assert!(tars.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn random_labels_give_majority_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scores: Vec<(f64, bool)> = (0..20_000)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_bool(0.3)))
            .collect();
        let r = evaluate_scores(&scores, &[]).unwrap();
        let pos_frac = r.num_pos as f64 / scores.len() as f64;
        assert!((r.accuracy - pos_frac.max(1.0 - pos_frac)).abs() < 0.05);
    }

    #[test]
    fn pair_indices_are_checked() {
        let emb = [1.0, 0.0, 0.0, 1.0];
        let pairs = [Pair {
            i: 0,
            j: 2,
            same: true,
        }];
        assert!(matches!(
            evaluate_pairs(&emb, 2, &pairs, &[]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }
}
