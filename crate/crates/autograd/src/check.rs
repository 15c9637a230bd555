//! Central finite differences for gradient verification.

use crate::tensor::Tensor;

/// Relative error with an absolute floor: `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference of `f` with respect to element `index` of `x`.
pub fn central_difference(f: impl Fn(&Tensor) -> f64, x: &Tensor, index: usize, h: f64) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[index] += h;
    let mut minus = x.clone();
    minus.data_mut()[index] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}
