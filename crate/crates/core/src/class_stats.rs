//! Per-sample EMA memory buffer and per-class concentration estimates.
//!
//! Every training sample owns one unit row. Rows move towards fresh
//! embeddings by an exponential moving average, are renormalized, and feed
//! running per-class sums so the per-class resultant length costs `O(C d)`
//! at the end of an epoch.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{norm, row, row_mut};
use crate::sphere::{estimate_kappa, sample_uniform_with, UnitVector, NORM_EPSILON};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    dim: usize,
    num_classes: usize,
    alpha: f64,
    vectors: Vec<f64>,
    labels: Vec<usize>,
    class_sums: Vec<f64>,
    class_counts: Vec<usize>,
}

/// Per-class resultant lengths and their concentration estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassConcentrations {
    pub kappa_hat: Vec<f64>,
    pub r_hat: Vec<f64>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            name: "alpha",
            value: alpha,
            reason: "EMA momentum must lie in [0, 1)",
        })
    }
}

fn count_classes(labels: &[usize]) -> Result<Vec<usize>> {
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    if num_classes == 0 {
        return Err(Error::EmptySet);
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    Ok(counts)
}

impl MemoryBuffer {
    /// Seeded buffer of i.i.d. uniform unit rows. The class count is
    /// `max(labels) + 1`, and every class below it must be present.
    pub fn new(labels: &[usize], dim: usize, alpha: f64, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        check_alpha(alpha)?;
        let class_counts = count_classes(labels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Vec::with_capacity(labels.len() * dim);
        for _ in labels {
            vectors.extend_from_slice(sample_uniform_with(dim, &mut rng).as_slice());
        }
        let mut buf = Self {
            dim,
            num_classes: class_counts.len(),
            alpha,
            vectors,
            labels: labels.to_vec(),
            class_sums: vec![0.0; class_counts.len() * dim],
            class_counts,
        };
        buf.refresh_class_sums();
        Ok(buf)
    }

    /// Rebuilds a buffer from stored rows, renormalizing each one.
    pub fn from_rows(rows: Vec<f64>, labels: Vec<usize>, dim: usize, alpha: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        check_alpha(alpha)?;
        if rows.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: rows.len(),
            });
        }
        let class_counts = count_classes(&labels)?;
        let mut vectors = rows;
        for i in 0..labels.len() {
            let r = row_mut(&mut vectors, dim, i);
            let n = norm(r);
            if !(n > NORM_EPSILON) {
                return Err(Error::ZeroVector { norm: n });
            }
            r.iter_mut().for_each(|x| *x /= n);
        }
        let mut buf = Self {
            dim,
            num_classes: class_counts.len(),
            alpha,
            vectors,
            labels,
            class_sums: vec![0.0; class_counts.len() * dim],
            class_counts,
        };
        buf.refresh_class_sums();
        Ok(buf)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Row-major `len() x dim()` buffer rows.
    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        row(&self.vectors, self.dim, i)
    }

    /// Row-major `num_classes() x dim()` running sums.
    pub fn class_sums(&self) -> &[f64] {
        &self.class_sums
    }

    /// Moves row `i` to `normalize(alpha * old + (1 - alpha) * z)`.
    ///
    /// When the combination cancels to (near) zero the old row is kept and
    /// `ZeroVector` is returned; the buffer is unchanged in that case.
    pub fn update_sample(&mut self, i: usize, z: &UnitVector) -> Result<()> {
        if i >= self.labels.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.labels.len(),
            });
        }
        if z.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.dim(),
            });
        }
        let d = self.dim;
        let a = self.alpha;
        let old = row(&self.vectors, d, i);
        let mut new: Vec<f64> = old
            .iter()
            .zip(z.as_slice())
            .map(|(o, x)| a * o + (1.0 - a) * x)
            .collect();
        let n = norm(&new);
        if !(n > NORM_EPSILON) {
            return Err(Error::ZeroVector { norm: n });
        }
        new.iter_mut().for_each(|x| *x /= n);
        let c = self.labels[i];
        let sum = row_mut(&mut self.class_sums, d, c);
        for ((s, nv), ov) in sum.iter_mut().zip(&new).zip(old) {
            *s += nv - ov;
        }
        row_mut(&mut self.vectors, d, i).copy_from_slice(&new);
        Ok(())
    }

    /// Class sums recomputed from the rows, in row order.
    pub fn recomputed_class_sums(&self) -> Vec<f64> {
        let d = self.dim;
        let mut sums = vec![0.0; self.num_classes * d];
        for (i, &c) in self.labels.iter().enumerate() {
            let src = row(&self.vectors, d, i);
            for (s, x) in row_mut(&mut sums, d, c).iter_mut().zip(src) {
                *s += x;
            }
        }
        sums
    }

    /// Replaces the incremental sums by an exact recomputation.
    pub fn refresh_class_sums(&mut self) {
        self.class_sums = self.recomputed_class_sums();
    }

    /// Per-class `r_c = |sum_c| / n_c` and `kappa_c` from the running sums.
    pub fn epoch_concentrations(&self) -> ClassConcentrations {
        let d = self.dim;
        let mut r_hat = Vec::with_capacity(self.num_classes);
        let mut kappa_hat = Vec::with_capacity(self.num_classes);
        for c in 0..self.num_classes {
            let r = (norm(row(&self.class_sums, d, c)) / self.class_counts[c] as f64).min(1.0);
            r_hat.push(r);
            kappa_hat.push(estimate_kappa(r, d).expect("r in [0, 1] and d >= 2"));
        }
        ClassConcentrations { kappa_hat, r_hat }
    }
}
