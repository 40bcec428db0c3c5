//! Dense row-major helpers shared by the numeric modules.

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Row `i` of a row-major matrix with `cols` columns.
#[inline]
pub fn row(data: &[f64], cols: usize, i: usize) -> &[f64] {
    &data[i * cols..(i + 1) * cols]
}

#[inline]
pub fn row_mut(data: &mut [f64], cols: usize, i: usize) -> &mut [f64] {
    &mut data[i * cols..(i + 1) * cols]
}

/// Backpropagate through `u = v / |v|`: returns `(I - u u^T) g / |v|`.
pub fn normalize_backward(v_norm: f64, unit: &[f64], grad_unit: &[f64]) -> alloc::vec::Vec<f64> {
    let proj = dot(unit, grad_unit);
    unit.iter()
        .zip(grad_unit)
        .map(|(u, g)| (g - proj * u) / v_norm)
        .collect()
}
