//! Linear forward operators, the discrete gradient, and spectral-norm
//! estimation for the stacked operator `M₁ = (D; H; I)`.

mod blur;
mod gradient;
mod norm;
mod radon;
mod sparse;

pub use blur::{apply_blur, apply_blur_adjoint, make_gaussian_kernel, BlurKernel, BlurOperator};
pub use gradient::{apply_gradient, apply_gradient_adjoint, Gradient, GradientField};
pub use norm::{operator_norm_sq, stacked_norm_sq, NORM_SAFETY_FACTOR};
pub use radon::{build_radon, Beam, RadonGeometry, RadonOperator};
pub use sparse::SparseOperator;

use ndarray::Array2;

use crate::error::Result;

/// The degradation matrix `H`.
#[derive(Debug, Clone)]
pub enum ForwardOperator {
    Identity { shape: (usize, usize) },
    Blur(BlurOperator),
    Sparse(SparseOperator),
}

impl ForwardOperator {
    pub fn input_shape(&self) -> (usize, usize) {
        match self {
            ForwardOperator::Identity { shape } => *shape,
            ForwardOperator::Blur(b) => b.shape(),
            ForwardOperator::Sparse(s) => s.input_shape(),
        }
    }

    pub fn output_shape(&self) -> (usize, usize) {
        match self {
            ForwardOperator::Identity { shape } => *shape,
            ForwardOperator::Blur(b) => b.shape(),
            ForwardOperator::Sparse(s) => s.output_shape(),
        }
    }

    /// True when `HᵀH` is diagonalized by the 2-D DFT on the image grid.
    pub fn is_periodic(&self) -> bool {
        !matches!(self, ForwardOperator::Sparse(_))
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            ForwardOperator::Identity { shape } => {
                check_shape(x, *shape)?;
                Ok(x.clone())
            }
            ForwardOperator::Blur(b) => b.apply(x),
            ForwardOperator::Sparse(s) => s.apply(x),
        }
    }

    pub fn apply_adjoint(&self, r: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            ForwardOperator::Identity { shape } => {
                check_shape(r, *shape)?;
                Ok(r.clone())
            }
            ForwardOperator::Blur(b) => b.apply_adjoint(r),
            ForwardOperator::Sparse(s) => s.apply_adjoint(r),
        }
    }
}

impl From<BlurOperator> for ForwardOperator {
    fn from(b: BlurOperator) -> Self {
        ForwardOperator::Blur(b)
    }
}

impl From<SparseOperator> for ForwardOperator {
    fn from(s: SparseOperator) -> Self {
        ForwardOperator::Sparse(s)
    }
}

impl From<RadonOperator> for ForwardOperator {
    fn from(r: RadonOperator) -> Self {
        ForwardOperator::Sparse(r.into_matrix())
    }
}

fn check_shape(x: &Array2<f64>, shape: (usize, usize)) -> Result<()> {
    if x.dim() != shape {
        return Err(crate::Error::invalid(format!(
            "shape {:?} does not match operator shape {shape:?}",
            x.dim()
        )));
    }
    Ok(())
}
