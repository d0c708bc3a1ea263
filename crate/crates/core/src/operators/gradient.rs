//! Periodic forward-difference gradient.

use std::f64::consts::PI;
use std::ops::{Add, Sub};

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

/// Horizontal and vertical components of a discrete gradient, one pair per
/// pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub h: Array2<f64>,
    pub v: Array2<f64>,
}

impl GradientField {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            h: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.h.dim()
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        (&self.h * &other.h).sum() + (&self.v * &other.v).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.h.iter().chain(self.v.iter()).map(|v| v * v).sum()
    }

    /// `self + s * other`
    pub fn scaled_add(&self, s: f64, other: &GradientField) -> GradientField {
        GradientField {
            h: Zip::from(&self.h).and(&other.h).map_collect(|a, b| a + s * b),
            v: Zip::from(&self.v).and(&other.v).map_collect(|a, b| a + s * b),
        }
    }

    /// Sum over pixels of the Euclidean length of each pair (isotropic TV).
    pub fn l21_norm(&self) -> f64 {
        Zip::from(&self.h)
            .and(&self.v)
            .fold(0.0, |acc, h, v| acc + (h * h + v * v).sqrt())
    }
}

impl Add for &GradientField {
    type Output = GradientField;
    fn add(self, rhs: &GradientField) -> GradientField {
        GradientField {
            h: &self.h + &rhs.h,
            v: &self.v + &rhs.v,
        }
    }
}

impl Sub for &GradientField {
    type Output = GradientField;
    fn sub(self, rhs: &GradientField) -> GradientField {
        GradientField {
            h: &self.h - &rhs.h,
            v: &self.v - &rhs.v,
        }
    }
}

/// `D = (D_h; D_v)` on an `n1 × n2` grid with periodic wrap:
/// `(D_h x)[i,j] = x[i, j+1] - x[i,j]`, `(D_v x)[i,j] = x[i+1, j] - x[i,j]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gradient {
    shape: (usize, usize),
}

impl Gradient {
    pub fn new(shape: (usize, usize)) -> Self {
        Self { shape }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<GradientField> {
        let mut out = GradientField::zeros(self.shape);
        self.apply_into(x, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, x: &Array2<f64>, out: &mut GradientField) -> Result<()> {
        if x.dim() != self.shape {
            return Err(shape_error(x.dim(), self.shape));
        }
        if out.shape() != self.shape || out.v.dim() != self.shape {
            return Err(shape_error(out.shape(), self.shape));
        }
        let (r, c) = self.shape;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let h = out.h.as_slice_mut().expect("owned field is contiguous");
        let v = out.v.as_slice_mut().expect("owned field is contiguous");
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let below = &xs[((i + 1) % r) * c..((i + 1) % r + 1) * c];
            let hr = &mut h[i * c..(i + 1) * c];
            let vr = &mut v[i * c..(i + 1) * c];
            for j in 0..c - 1 {
                hr[j] = row[j + 1] - row[j];
            }
            hr[c - 1] = row[0] - row[c - 1];
            for j in 0..c {
                vr[j] = below[j] - row[j];
            }
        }
        Ok(())
    }

    pub fn adjoint(&self, t: &GradientField) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(self.shape);
        self.adjoint_into(t, &mut out)?;
        Ok(out)
    }

    pub fn adjoint_into(&self, t: &GradientField, out: &mut Array2<f64>) -> Result<()> {
        if t.h.dim() != self.shape || t.v.dim() != self.shape {
            return Err(shape_error(t.h.dim(), self.shape));
        }
        if out.dim() != self.shape {
            return Err(shape_error(out.dim(), self.shape));
        }
        let (r, c) = self.shape;
        let th = t.h.as_standard_layout();
        let tv = t.v.as_standard_layout();
        let hs = th.as_slice().expect("standard layout");
        let vs = tv.as_slice().expect("standard layout");
        let o = out.as_slice_mut().expect("owned image is contiguous");
        for i in 0..r {
            let im = (i + r - 1) % r;
            let hr = &hs[i * c..(i + 1) * c];
            let vr = &vs[i * c..(i + 1) * c];
            let vu = &vs[im * c..(im + 1) * c];
            let or = &mut o[i * c..(i + 1) * c];
            or[0] = hr[c - 1] - hr[0] + vu[0] - vr[0];
            for j in 1..c {
                or[j] = hr[j - 1] - hr[j] + vu[j] - vr[j];
            }
        }
        Ok(())
    }

    /// Eigenvalues of `DᵀD` in 2-D DFT order:
    /// `4 sin²(πk/n1) + 4 sin²(πl/n2)`.
    pub fn normal_eigenvalues(&self) -> Vec<f64> {
        let (r, c) = self.shape;
        let mut out = Vec::with_capacity(r * c);
        for k in 0..r {
            let sk = (PI * k as f64 / r as f64).sin();
            for l in 0..c {
                let sl = (PI * l as f64 / c as f64).sin();
                out.push(4.0 * sk * sk + 4.0 * sl * sl);
            }
        }
        out
    }
}

fn shape_error(got: (usize, usize), want: (usize, usize)) -> Error {
    Error::invalid(format!("shape {got:?} does not match gradient shape {want:?}"))
}

pub fn apply_gradient(x: &Array2<f64>) -> GradientField {
    Gradient::new(x.dim()).apply(x).expect("shape taken from input")
}

pub fn apply_gradient_adjoint(t: &GradientField) -> Result<Array2<f64>> {
    Gradient::new(t.h.dim()).adjoint(t)
}
