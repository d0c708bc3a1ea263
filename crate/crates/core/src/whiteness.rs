//! Sample normalized autocorrelation and the whiteness measure.

use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;

/// Normalized autocorrelation over all lags `(l, m)` with
/// `|l| < rows`, `|m| < cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrelationMap {
    s: Array2<f64>,
    rows: usize,
    cols: usize,
}

impl AutocorrelationMap {
    /// Shape of the correlated matrix.
    pub fn source_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Value at lag `(l, m)`; `None` outside the lag set.
    pub fn get(&self, l: isize, m: isize) -> Option<f64> {
        let (r, c) = (self.rows as isize, self.cols as isize);
        if l.abs() >= r || m.abs() >= c {
            return None;
        }
        Some(self.s[[(l + r - 1) as usize, (m + c - 1) as usize]])
    }

    /// The `(2 rows − 1) × (2 cols − 1)` map with lag `(0, 0)` at the center.
    pub fn as_array(&self) -> &Array2<f64> {
        &self.s
    }

    pub fn lags(&self) -> impl Iterator<Item = (isize, isize, f64)> + '_ {
        let (r, c) = (self.rows as isize, self.cols as isize);
        self.s
            .indexed_iter()
            .map(move |((i, j), &v)| (i as isize - r + 1, j as isize - c + 1, v))
    }

    /// `Σ s(l, m)²` over every lag.
    pub fn whiteness(&self) -> f64 {
        self.s.iter().map(|v| v * v).sum()
    }

    /// `Σ s(l, m)²` over lags with `max(|l|, |m|) ≤ radius`.
    pub fn whiteness_within(&self, radius: usize) -> f64 {
        let r = radius as isize;
        self.lags()
            .filter(|&(l, m, _)| l.abs() <= r && m.abs() <= r)
            .map(|(_, _, v)| v * v)
            .sum()
    }

    /// CSV with header `lag_l,lag_m,s`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "lag_l,lag_m,s")?;
        for (l, m, v) in self.lags() {
            writeln!(w, "{l},{m},{}", crate::io::format_g17(v))?;
        }
        Ok(())
    }
}

/// Zero-padded (non-periodic) normalized autocorrelation of `z`.
pub fn sample_autocorrelation(z: &Array2<f64>) -> Result<AutocorrelationMap> {
    let (rows, cols) = z.dim();
    let energy: f64 = z.iter().map(|v| v * v).sum();
    if rows == 0 || cols == 0 || !(energy > 0.0) {
        return Err(Error::invalid("autocorrelation needs a non-zero matrix"));
    }
    if !energy.is_finite() {
        return Err(Error::NumericalDomain("non-finite entries in residual".into()));
    }
    let pr = (2 * rows - 1).next_power_of_two();
    let pc = (2 * cols - 1).next_power_of_two();
    let fft = Fft2::new(pr, pc);
    let mut buf = vec![Complex64::new(0.0, 0.0); pr * pc];
    for ((i, j), &v) in z.indexed_iter() {
        buf[i * pc + j].re = v;
    }
    fft.forward(&mut buf);
    for v in buf.iter_mut() {
        *v = Complex64::new(v.norm_sqr(), 0.0);
    }
    fft.inverse(&mut buf);

    let (lr, lc) = (2 * rows - 1, 2 * cols - 1);
    let mut s = Array2::zeros((lr, lc));
    for a in 0..lr {
        let l = a as isize - rows as isize + 1;
        let pi = l.rem_euclid(pr as isize) as usize;
        for b in 0..lc {
            let m = b as isize - cols as isize + 1;
            let pj = m.rem_euclid(pc as isize) as usize;
            s[[a, b]] = buf[pi * pc + pj].re / energy;
        }
    }
    for a in 0..lr {
        for b in 0..lc {
            let (ma, mb) = (lr - 1 - a, lc - 1 - b);
            if (a, b) < (ma, mb) {
                let avg = 0.5 * (s[[a, b]] + s[[ma, mb]]);
                s[[a, b]] = avg;
                s[[ma, mb]] = avg;
            }
        }
    }
    s[[rows - 1, cols - 1]] = 1.0;
    Ok(AutocorrelationMap { s, rows, cols })
}

/// `W(z) = Σ s(l, m)²` over the full lag set.
pub fn whiteness_measure(z: &Array2<f64>) -> Result<f64> {
    Ok(sample_autocorrelation(z)?.whiteness())
}

/// Whiteness restricted to lags within Chebyshev radius `radius`;
/// `None` means the full lag set.
pub fn whiteness_measure_within(z: &Array2<f64>, radius: Option<usize>) -> Result<f64> {
    let map = sample_autocorrelation(z)?;
    Ok(match radius {
        Some(r) => map.whiteness_within(r),
        None => map.whiteness(),
    })
}
