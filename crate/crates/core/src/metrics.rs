//! Reconstruction quality: SNR in decibels and mean SSIM.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

/// `10 log₁₀(‖x̄ − mean(x̄)‖² / ‖x̄ − x̂‖²)`; `+∞` when the images coincide.
pub fn snr(x_hat: &Array2<f64>, x_bar: &Array2<f64>) -> Result<f64> {
    if x_hat.dim() != x_bar.dim() {
        return Err(Error::invalid("snr: image shapes differ"));
    }
    let mean = x_bar.mean().unwrap_or(0.0);
    let signal: f64 = x_bar.iter().map(|v| (v - mean).powi(2)).sum();
    let err: f64 = Zip::from(x_bar).and(x_hat).fold(0.0, |acc, &a, &b| acc + (a - b).powi(2));
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / err).log10())
}

/// SSIM window and stabilizing constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn with_range(dynamic_range: f64) -> Self {
        Self {
            dynamic_range,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub snr: f64,
    pub ssim: f64,
}

pub fn quality(x_hat: &Array2<f64>, x_bar: &Array2<f64>, cfg: &SsimConfig) -> Result<QualityReport> {
    Ok(QualityReport {
        snr: snr(x_hat, x_bar)?,
        ssim: ssim(x_hat, x_bar, cfg)?,
    })
}

/// Mean local SSIM with a Gaussian window and half-sample symmetric borders.
pub fn ssim(x_hat: &Array2<f64>, x_bar: &Array2<f64>, cfg: &SsimConfig) -> Result<f64> {
    if x_hat.dim() != x_bar.dim() {
        return Err(Error::invalid("ssim: image shapes differ"));
    }
    let (r, c) = x_bar.dim();
    if cfg.window.is_multiple_of(2) || cfg.window == 0 {
        return Err(Error::invalid("ssim window must be odd"));
    }
    if r < cfg.window || c < cfg.window {
        return Err(Error::invalid(format!(
            "image {r}x{c} is smaller than the {}x{} SSIM window",
            cfg.window, cfg.window
        )));
    }
    if !(cfg.sigma > 0.0) || !(cfg.dynamic_range > 0.0) {
        return Err(Error::invalid("ssim sigma and dynamic range must be positive"));
    }
    let w = gaussian_window(cfg.window, cfg.sigma);
    let mu_x = filter(x_hat, &w);
    let mu_y = filter(x_bar, &w);
    let xx = filter(&(x_hat * x_hat), &w);
    let yy = filter(&(x_bar * x_bar), &w);
    let xy = filter(&(x_hat * x_bar), &w);
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let mut total = 0.0;
    for i in 0..r {
        for j in 0..c {
            let (mx, my) = (mu_x[[i, j]], mu_y[[i, j]]);
            let sxx = xx[[i, j]] - mx * mx;
            let syy = yy[[i, j]] - my * my;
            let sxy = xy[[i, j]] - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
        }
    }
    Ok(total / (r * c) as f64)
}

fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n / 2) as f64;
    let w: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = if i < 0 { -i - 1 } else if i >= n { 2 * n - 1 - i } else { i };
    m as usize
}

/// Separable filtering with the 1-D window along both axes.
fn filter(a: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let (r, c) = a.dim();
    let h = (w.len() / 2) as isize;
    let rows = Array2::from_shape_fn((r, c), |(i, j)| {
        w.iter()
            .enumerate()
            .map(|(k, &wk)| wk * a[[i, mirror(j as isize + k as isize - h, c)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((r, c), |(i, j)| {
        w.iter()
            .enumerate()
            .map(|(k, &wk)| wk * rows[[mirror(i as isize + k as isize - h, r), j]])
            .sum::<f64>()
    })
}
