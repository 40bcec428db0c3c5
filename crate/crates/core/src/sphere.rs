//! Directional statistics on the unit sphere `S^{d-1}`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::linalg::{dot, norm};
use crate::special::ln_bessel_i;
use crate::{Error, Result};

/// Inputs with a norm at or below this are rejected by [`normalize`].
pub const NORM_EPSILON: f64 = 1e-12;
/// Tolerance for the unit-norm invariant of [`UnitVector`].
pub const UNIT_TOLERANCE: f64 = 1e-9;
/// Resultant lengths at or above this are clamped before estimating kappa.
pub const R_BAR_CLAMP: f64 = 1.0 - 1e-9;
/// Upper bound on every concentration estimate.
pub const KAPPA_CAP: f64 = 1e7;

/// A point on the unit sphere of dimension `d >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps coordinates that are already unit norm (within [`UNIT_TOLERANCE`]).
    pub fn from_unit(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidDimension(coords.len()));
        }
        let n = norm(&coords);
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NonUnitInput { row: 0, norm: n });
        }
        Ok(Self(coords))
    }

    /// Standard basis vector `e_axis` in dimension `d`.
    pub fn basis(d: usize, axis: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        if axis >= d {
            return Err(Error::IndexOutOfRange {
                index: axis,
                len: d,
            });
        }
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Parameters of a von Mises-Fisher distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    mean_direction: UnitVector,
    kappa: f64,
}

impl VmfParams {
    pub fn new(mean_direction: UnitVector, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::OutOfDomain {
                name: "kappa",
                value: kappa,
                reason: "must be finite and nonnegative",
            });
        }
        Ok(Self {
            mean_direction,
            kappa: kappa.min(KAPPA_CAP),
        })
    }

    pub fn mean_direction(&self) -> &UnitVector {
        &self.mean_direction
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.mean_direction.dim()
    }
}

/// Scales `v` to unit Euclidean norm.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    if v.len() < 2 {
        return Err(Error::InvalidDimension(v.len()));
    }
    let n = norm(v);
    if !(n > NORM_EPSILON) {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// Mean resultant length `|sum x_i| / n`, in `[0, 1]`.
pub fn resultant_length(samples: &[UnitVector]) -> Result<f64> {
    let first = samples.first().ok_or(Error::EmptySet)?;
    let d = first.dim();
    let mut sum = vec![0.0; d];
    for s in samples {
        if s.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.dim(),
            });
        }
        for (acc, x) in sum.iter_mut().zip(s.as_slice()) {
            *acc += x;
        }
    }
    Ok((norm(&sum) / samples.len() as f64).min(1.0))
}

/// Banerjee et al.'s approximation `r (d - r^2) / (1 - r^2)` to the vMF
/// maximum-likelihood concentration.
///
/// `r_bar` at or above [`R_BAR_CLAMP`] is clamped and the result is capped at
/// [`KAPPA_CAP`].
pub fn estimate_kappa(r_bar: f64, d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    if !(0.0..=1.0).contains(&r_bar) {
        return Err(Error::OutOfDomain {
            name: "r_bar",
            value: r_bar,
            reason: "resultant length must lie in [0, 1]",
        });
    }
    let r = r_bar.min(R_BAR_CLAMP);
    let r2 = r * r;
    Ok((r * (d as f64 - r2) / (1.0 - r2)).min(KAPPA_CAP))
}

/// Log normalizing constant `ln C_d(kappa)` of the vMF density.
pub fn vmf_log_normalizer(d: usize, kappa: f64) -> f64 {
    let half_d = 0.5 * d as f64;
    if kappa == 0.0 {
        // Reciprocal of the surface area 2 pi^{d/2} / Gamma(d/2).
        return libm::lgamma(half_d)
            - core::f64::consts::LN_2
            - half_d * core::f64::consts::PI.ln();
    }
    let order = half_d - 1.0;
    order * kappa.ln() - half_d * (2.0 * core::f64::consts::PI).ln() - ln_bessel_i(order, kappa)
}

/// Log density of `x` under `vMF(mean_direction, kappa)`.
pub fn vmf_log_density(x: &UnitVector, params: &VmfParams) -> Result<f64> {
    let d = params.dim();
    if x.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.dim(),
        });
    }
    Ok(vmf_log_normalizer(d, params.kappa) + params.kappa * x.dot(&params.mean_direction))
}

/// Uniform draw from `S^{d-1}` via normalized Gaussian coordinates.
pub fn sample_uniform_with<R: Rng + ?Sized>(d: usize, rng: &mut R) -> UnitVector {
    loop {
        let v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        if let Ok(u) = normalize(&v) {
            return u;
        }
    }
}

/// `n` i.i.d. vMF draws, deterministic in `seed`.
pub fn sample_vmf(params: &VmfParams, n: usize, seed: u64) -> Result<Vec<UnitVector>> {
    if n == 0 {
        return Err(Error::OutOfDomain {
            name: "n",
            value: 0.0,
            reason: "need at least one sample",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = VmfSampler::new(params);
    Ok((0..n).map(|_| sampler.sample(&mut rng)).collect())
}

/// Wood's (1994) rejection sampler with precomputed envelope constants.
///
/// The axial cosine `w` is drawn by envelope rejection, the tangential part
/// uniformly on `S^{d-2}`, and the result is mapped from `e_1` onto the mean
/// direction with a Householder reflection.
#[derive(Debug, Clone)]
pub struct VmfSampler {
    mean: Vec<f64>,
    kappa: f64,
    b: f64,
    x0: f64,
    c: f64,
    beta: Beta<f64>,
    // Householder vector u = e_1 - mean, or None when mean == e_1.
    reflector: Option<(Vec<f64>, f64)>,
}

impl VmfSampler {
    pub fn new(params: &VmfParams) -> Self {
        let d = params.dim();
        let dm1 = (d - 1) as f64;
        let kappa = params.kappa;
        // b = (-2k + sqrt(4k^2 + (d-1)^2)) / (d-1), rearranged to avoid cancellation.
        let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
        let mean = params.mean_direction.as_slice().to_vec();
        let mut u = mean.iter().map(|m| -m).collect::<Vec<_>>();
        u[0] += 1.0;
        let u_sq = dot(&u, &u);
        let reflector = (u_sq > 1e-30).then_some((u, u_sq));
        Self {
            mean,
            kappa,
            b,
            x0,
            c,
            beta: Beta::new(0.5 * dm1, 0.5 * dm1).expect("shape parameters are positive"),
            reflector,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitVector {
        let d = self.mean.len();
        let dm1 = (d - 1) as f64;
        let w = loop {
            let z: f64 = self.beta.sample(rng);
            let w = (1.0 - (1.0 + self.b) * z) / (1.0 - (1.0 - self.b) * z);
            let u: f64 = rng.random::<f64>();
            if self.kappa * w + dm1 * (1.0 - self.x0 * w).ln() - self.c >= u.ln() {
                break w;
            }
        };
        let tangent = sample_uniform_with(d - 1, rng);
        let radial = (1.0 - w * w).max(0.0).sqrt();
        let mut x = Vec::with_capacity(d);
        x.push(w);
        x.extend(tangent.as_slice().iter().map(|t| radial * t));
        if let Some((u, u_sq)) = &self.reflector {
            let scale = 2.0 * dot(u, &x) / u_sq;
            for (xi, ui) in x.iter_mut().zip(u) {
                *xi -= scale * ui;
            }
        }
        // Renormalize to absorb rounding in the reflection.
        normalize(&x).expect("vMF draw has unit norm before rounding")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize(&[1.0, 0.0, 0.0]).unwrap().as_slice(),
            &[1.0, 0.0, 0.0]
        );
        let u = normalize(&[3.0, 4.0]).unwrap();
        assert!(close(u.as_slice()[0], 0.6, 1e-15) && close(u.as_slice()[1], 0.8, 1e-15));
        assert!(matches!(
            normalize(&[0.0, 0.0, 0.0]),
            Err(Error::ZeroVector { .. })
        ));
        assert!(matches!(normalize(&[1.0]), Err(Error::InvalidDimension(1))));
    }

    #[test]
    fn resultant_length_examples() {
        let e1 = UnitVector::basis(3, 0).unwrap();
        let e2 = UnitVector::basis(3, 1).unwrap();
        let neg = normalize(&[-1.0, 0.0, 0.0]).unwrap();
        assert_eq!(resultant_length(&vec![e1.clone(); 7]).unwrap(), 1.0);
        assert_eq!(resultant_length(&[e1.clone(), neg]).unwrap(), 0.0);
        assert!(close(
            resultant_length(&[e1.clone(), e2]).unwrap(),
            core::f64::consts::FRAC_1_SQRT_2,
            1e-8
        ));
        assert_eq!(resultant_length(&[]), Err(Error::EmptySet));
        let short = UnitVector::basis(2, 0).unwrap();
        assert!(matches!(
            resultant_length(&[e1, short]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn estimate_kappa_examples() {
        assert_eq!(estimate_kappa(0.0, 64).unwrap(), 0.0);
        assert!(close(estimate_kappa(0.5, 3).unwrap(), 1.83333333, 1e-8));
        // 0.9 * (512 - 0.81) / 0.19
        assert!(close(
            estimate_kappa(0.9, 512).unwrap(),
            2421.4263157894,
            1e-9
        ));
        assert!(matches!(
            estimate_kappa(0.5, 1),
            Err(Error::InvalidDimension(1))
        ));
        assert!(estimate_kappa(-0.1, 3).is_err());
        assert!(estimate_kappa(1.1, 3).is_err());
        assert!(estimate_kappa(f64::NAN, 3).is_err());
        assert_eq!(estimate_kappa(1.0, 512).unwrap(), KAPPA_CAP);
    }

    #[test]
    fn estimate_kappa_is_monotone_on_grid() {
        for d in [2usize, 3, 64, 512] {
            let mut prev = -1.0;
            for i in 0..100 {
                let k = estimate_kappa(i as f64 / 100.0, d).unwrap();
                assert!(k > prev, "d={d} i={i}");
                prev = k;
            }
        }
    }

    #[test]
    fn log_density_examples() {
        let mean = UnitVector::basis(3, 2).unwrap();
        let x = normalize(&[0.3, -0.2, 0.5]).unwrap();
        let uniform = VmfParams::new(mean.clone(), 0.0).unwrap();
        assert!(close(
            vmf_log_density(&x, &uniform).unwrap(),
            -2.53102424,
            1e-8
        ));
        let p = VmfParams::new(mean.clone(), 2.0).unwrap();
        let want = (2.0 * 2f64.exp() / (4.0 * PI * 2f64.sinh())).ln();
        assert!(close(vmf_log_density(&mean, &p).unwrap(), want, 1e-12));
        assert!(close(want.exp(), 0.3242487084, 1e-9));
        // Same cosine to the mean, different point.
        let a = normalize(&[0.6, 0.0, 0.8]).unwrap();
        let b = normalize(&[0.0, -0.6, 0.8]).unwrap();
        let la = vmf_log_density(&a, &p).unwrap();
        let lb = vmf_log_density(&b, &p).unwrap();
        assert!(close(la, lb, 1e-14));
        let wrong = UnitVector::basis(4, 0).unwrap();
        assert!(vmf_log_density(&wrong, &p).is_err());
    }

    #[test]
    fn uniform_normalizer_matches_kappa_limit() {
        for d in [2usize, 3, 8, 64] {
            let lim = vmf_log_normalizer(d, 1e-8);
            let zero = vmf_log_normalizer(d, 0.0);
            assert!(close(lim, zero, 1e-6), "d={d}: {lim} vs {zero}");
        }
    }

    #[test]
    fn sampler_is_deterministic_and_unit() {
        let p = VmfParams::new(normalize(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 5.0).unwrap();
        let a = sample_vmf(&p, 50, 9).unwrap();
        let b = sample_vmf(&p, 50, 9).unwrap();
        assert_eq!(a, b);
        for x in &a {
            assert!(close(norm(x.as_slice()), 1.0, 1e-12));
        }
        assert!(sample_vmf(&p, 0, 9).is_err());
    }

    #[test]
    fn sampler_uniform_has_small_resultant() {
        let p = VmfParams::new(UnitVector::basis(8, 3).unwrap(), 0.0).unwrap();
        let xs = sample_vmf(&p, 10_000, 1).unwrap();
        assert!(resultant_length(&xs).unwrap() <= 0.05);
    }

    #[test]
    fn sampler_mean_cosine_in_three_dimensions() {
        let mean = normalize(&[-0.2, 0.4, 0.7]).unwrap();
        let p = VmfParams::new(mean.clone(), 50.0).unwrap();
        let xs = sample_vmf(&p, 10_000, 3).unwrap();
        let m: f64 = xs.iter().map(|x| x.dot(&mean)).sum::<f64>() / xs.len() as f64;
        let want = 1.0 / 50f64.tanh() - 1.0 / 50.0;
        assert!((m - want).abs() / want < 0.02, "{m} vs {want}");
    }

    #[test]
    fn sampler_kappa_round_trip_small_case() {
        let p = VmfParams::new(UnitVector::basis(8, 0).unwrap(), 100.0).unwrap();
        let xs = sample_vmf(&p, 10_000, 5).unwrap();
        let k = estimate_kappa(resultant_length(&xs).unwrap(), 8).unwrap();
        assert!((k - 100.0).abs() / 100.0 < 0.05, "{k}");
    }
}
