use ndarray::Array2;
use rand::Rng;

use super::{ForwardOperator, Gradient};
use crate::error::Result;
use crate::rng::stream_rng;

/// Inflation applied to the power-iteration estimate so that the returned
/// value is a majorant of the true squared norm.
pub const NORM_SAFETY_FACTOR: f64 = 1.01;

const MAX_ITER: usize = 500;
const REL_TOL: f64 = 1e-6;

/// Largest eigenvalue of a symmetric positive semidefinite map `normal`
/// (typically `MᵀM`) acting on `shape` images, times [`NORM_SAFETY_FACTOR`].
///
/// Power iteration from a fixed pseudo-random start; stops when the Rayleigh
/// quotient changes by less than 1e-6 relative, or after 500 iterations.
pub fn operator_norm_sq<F>(shape: (usize, usize), normal: F) -> Result<f64>
where
    F: Fn(&Array2<f64>) -> Result<Array2<f64>>,
{
    let mut rng = stream_rng(0x5eed, 0);
    let mut v = Array2::from_shape_fn(shape, |_| rng.random::<f64>() - 0.5);
    let n0 = norm(&v);
    v /= n0;
    let mut estimate = 0.0;
    for _ in 0..MAX_ITER {
        let w = normal(&v)?;
        let rayleigh = (&w * &v).sum();
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        let change = (rayleigh - estimate).abs();
        estimate = rayleigh;
        v = w / nw;
        if change <= REL_TOL * estimate.abs() {
            break;
        }
    }
    Ok(NORM_SAFETY_FACTOR * estimate)
}

/// Squared-norm majorant of `M₁ = (D; H; I)`.
pub fn stacked_norm_sq(h: &ForwardOperator) -> Result<f64> {
    let shape = h.input_shape();
    let d = Gradient::new(shape);
    operator_norm_sq(shape, |x| {
        let mut out = d.adjoint(&d.apply(x)?)?;
        out += &h.apply_adjoint(&h.apply(x)?)?;
        out += x;
        Ok(out)
    })
}

fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
