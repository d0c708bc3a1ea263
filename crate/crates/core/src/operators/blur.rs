//! Space-invariant blur with periodic boundary conditions.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;

/// Normalized, sampled isotropic Gaussian point spread function.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    taps: Array2<f64>,
    band: usize,
    sigma: f64,
}

impl BlurKernel {
    /// Arbitrary odd-sized kernel. Taps must be nonnegative with positive sum;
    /// they are rescaled to sum to one.
    pub fn from_taps(taps: Array2<f64>) -> Result<Self> {
        let (r, c) = taps.dim();
        if r != c || r % 2 == 0 {
            return Err(Error::invalid(format!("kernel must be square with odd side, got {r}x{c}")));
        }
        if taps.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("kernel taps must be finite and nonnegative"));
        }
        let sum = taps.sum();
        if sum <= 0.0 {
            return Err(Error::invalid("kernel taps sum to zero"));
        }
        Ok(Self {
            taps: taps / sum,
            band: r,
            sigma: f64::NAN,
        })
    }

    pub fn taps(&self) -> &Array2<f64> {
        &self.taps
    }

    pub fn band(&self) -> usize {
        self.band
    }

    /// Standard deviation in pixels; NaN for kernels built from raw taps.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn center(&self) -> usize {
        self.band / 2
    }
}

/// `band × band` Gaussian sampled at integer offsets from the center and
/// normalized to unit sum.
pub fn make_gaussian_kernel(band: usize, sigma: f64) -> Result<BlurKernel> {
    if band == 0 || band.is_multiple_of(2) {
        return Err(Error::invalid(format!("band must be a positive odd integer, got {band}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let c = (band / 2) as f64;
    let two_s2 = 2.0 * sigma * sigma;
    let taps = Array2::from_shape_fn((band, band), |(i, j)| {
        let di = i as f64 - c;
        let dj = j as f64 - c;
        (-(di * di + dj * dj) / two_s2).exp()
    });
    let sum = taps.sum();
    Ok(BlurKernel {
        taps: taps / sum,
        band,
        sigma,
    })
}

/// Circular convolution by a fixed kernel on a fixed grid, applied in the
/// Fourier domain.
#[derive(Debug, Clone)]
pub struct BlurOperator {
    shape: (usize, usize),
    kernel: BlurKernel,
    transfer: Vec<Complex64>,
    fft: Fft2,
}

impl BlurOperator {
    pub fn new(kernel: BlurKernel, shape: (usize, usize)) -> Result<Self> {
        let (rows, cols) = shape;
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("image shape must be nonempty"));
        }
        // Kernel taps are wrapped onto the grid so that an impulse at the
        // origin maps to the kernel centered at the origin.
        let mut psf = Array2::<f64>::zeros(shape);
        let c = kernel.center() as isize;
        for ((a, b), &w) in kernel.taps.indexed_iter() {
            let i = (a as isize - c).rem_euclid(rows as isize) as usize;
            let j = (b as isize - c).rem_euclid(cols as isize) as usize;
            psf[[i, j]] += w;
        }
        let fft = Fft2::new(rows, cols);
        let transfer = fft.forward_real(&psf);
        Ok(Self {
            shape,
            kernel,
            transfer,
            fft,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn kernel(&self) -> &BlurKernel {
        &self.kernel
    }

    /// Eigenvalues of the circulant blur matrix in 2-D DFT order.
    pub fn transfer(&self) -> &[Complex64] {
        &self.transfer
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    fn check(&self, x: &Array2<f64>) -> Result<()> {
        if x.dim() != self.shape {
            return Err(Error::invalid(format!(
                "image shape {:?} does not match blur operator shape {:?}",
                x.dim(),
                self.shape
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(x)?;
        let mut f = self.fft.forward_real(x);
        for (v, h) in f.iter_mut().zip(&self.transfer) {
            *v *= h;
        }
        Ok(self.fft.inverse_real(f))
    }

    pub fn apply_adjoint(&self, r: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(r)?;
        let mut f = self.fft.forward_real(r);
        for (v, h) in f.iter_mut().zip(&self.transfer) {
            *v *= h.conj();
        }
        Ok(self.fft.inverse_real(f))
    }
}

pub fn apply_blur(x: &Array2<f64>, k: &BlurKernel) -> Result<Array2<f64>> {
    BlurOperator::new(k.clone(), x.dim())?.apply(x)
}

pub fn apply_blur_adjoint(r: &Array2<f64>, k: &BlurKernel) -> Result<Array2<f64>> {
    BlurOperator::new(k.clone(), r.dim())?.apply_adjoint(r)
}
