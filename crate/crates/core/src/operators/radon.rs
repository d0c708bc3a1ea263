//! Discrete Radon transform by exact ray/pixel intersection (Siddon).
//!
//! The image is centered on the rotation axis. Pixel `(i, j)` covers
//! `x ∈ [xmin + j·p, xmin + (j+1)·p]` and `y ∈ [ymax − (i+1)·p, ymax − i·p]`,
//! so row 0 is the top of the image. At angle θ the detector axis is
//! `u = (cos θ, sin θ)` and rays travel along `d = (−sin θ, cos θ)`.
//! Sinogram rows are angles, columns are detector cells.

use std::f64::consts::PI;
use std::fmt;

use super::sparse::SparseOperator;
use crate::error::{Error, Result};

const AXIS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Beam {
    Parallel,
    /// Point source with a flat detector.
    Fan,
}

impl fmt::Display for Beam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Beam::Parallel => "parallel",
            Beam::Fan => "fan",
        })
    }
}

/// Acquisition geometry. Lengths are in millimetres, angles in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct RadonGeometry {
    pub angles: Vec<f64>,
    pub n_detectors: usize,
    pub detector_pixel_size: f64,
    pub image_pixel_size: f64,
    /// Fan beam only.
    pub source_to_center: f64,
    /// Fan beam only.
    pub center_to_detector: f64,
    pub beam: Beam,
}

impl RadonGeometry {
    /// `n_angles` equally spaced angles over `[0, π)`.
    pub fn parallel(
        n_angles: usize,
        n_detectors: usize,
        detector_pixel_size: f64,
        image_pixel_size: f64,
    ) -> Result<Self> {
        let g = Self {
            angles: equispaced(n_angles, PI),
            n_detectors,
            detector_pixel_size,
            image_pixel_size,
            source_to_center: f64::INFINITY,
            center_to_detector: f64::INFINITY,
            beam: Beam::Parallel,
        };
        g.validate()?;
        Ok(g)
    }

    /// `n_angles` equally spaced angles over `[0, 2π)` with a flat detector.
    pub fn fan(
        n_angles: usize,
        n_detectors: usize,
        detector_pixel_size: f64,
        image_pixel_size: f64,
        source_to_center: f64,
        center_to_detector: f64,
    ) -> Result<Self> {
        let g = Self {
            angles: equispaced(n_angles, 2.0 * PI),
            n_detectors,
            detector_pixel_size,
            image_pixel_size,
            source_to_center,
            center_to_detector,
            beam: Beam::Fan,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    /// Detector curvature recorded in run metadata. Only flat detectors are
    /// modeled.
    pub fn detector_kind(&self) -> &'static str {
        "flat"
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.is_empty() || self.n_detectors == 0 {
            return Err(Error::invalid("geometry needs at least one angle and one detector"));
        }
        if self.angles.iter().any(|a| !(0.0..2.0 * PI).contains(a)) {
            return Err(Error::invalid("angles must lie in [0, 2π)"));
        }
        if self.angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("angles must be strictly increasing"));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.detector_pixel_size) || !positive(self.image_pixel_size) {
            return Err(Error::invalid("pixel sizes must be positive"));
        }
        if self.beam == Beam::Fan && (!positive(self.source_to_center) || !positive(self.center_to_detector)) {
            return Err(Error::invalid("fan beam distances must be positive"));
        }
        Ok(())
    }
}

fn equispaced(n: usize, span: f64) -> Vec<f64> {
    (0..n).map(|k| span * k as f64 / n as f64).collect()
}

/// Radon matrix plus the geometry it was built from.
#[derive(Debug, Clone)]
pub struct RadonOperator {
    geometry: RadonGeometry,
    matrix: SparseOperator,
    empty_rays: usize,
}

impl RadonOperator {
    pub fn geometry(&self) -> &RadonGeometry {
        &self.geometry
    }

    pub fn matrix(&self) -> &SparseOperator {
        &self.matrix
    }

    pub fn into_matrix(self) -> SparseOperator {
        self.matrix
    }

    /// Number of rays that miss the image (all-zero rows).
    pub fn empty_rays(&self) -> usize {
        self.empty_rays
    }
}

/// Assemble the `(n_angles·n_detectors) × (n1·n2)` intersection-length matrix.
pub fn build_radon(geom: &RadonGeometry, image_shape: (usize, usize)) -> Result<RadonOperator> {
    geom.validate()?;
    let (n1, n2) = image_shape;
    if n1 == 0 || n2 == 0 {
        return Err(Error::invalid("image shape must be nonempty"));
    }
    let grid = Grid::new(n1, n2, geom.image_pixel_size);
    if geom.beam == Beam::Fan && grid.half_diagonal() >= geom.source_to_center {
        return Err(Error::invalid("source lies inside the image support"));
    }
    let nd = geom.n_detectors;
    let det_center = (nd as f64 - 1.0) / 2.0;
    let mut rows = Vec::with_capacity(geom.n_angles() * nd);
    let mut empty = 0;
    for &theta in &geom.angles {
        let (s, c) = theta.sin_cos();
        let u = (c, s);
        let d = (-s, c);
        for k in 0..nd {
            let offset = (k as f64 - det_center) * geom.detector_pixel_size;
            let (p0, dir) = match geom.beam {
                Beam::Parallel => ((offset * u.0, offset * u.1), d),
                Beam::Fan => {
                    let src = (-geom.source_to_center * d.0, -geom.source_to_center * d.1);
                    let det = (
                        geom.center_to_detector * d.0 + offset * u.0,
                        geom.center_to_detector * d.1 + offset * u.1,
                    );
                    let (dx, dy) = (det.0 - src.0, det.1 - src.1);
                    let len = dx.hypot(dy);
                    (src, (dx / len, dy / len))
                }
            };
            let row = grid.trace(p0, dir);
            if row.is_empty() {
                empty += 1;
            }
            rows.push(row);
        }
    }
    let matrix = SparseOperator::from_rows(image_shape, (geom.n_angles(), nd), rows)?;
    Ok(RadonOperator {
        geometry: geom.clone(),
        matrix,
        empty_rays: empty,
    })
}

#[derive(Debug, Clone, Copy)]
struct Grid {
    n1: usize,
    n2: usize,
    p: f64,
    xmin: f64,
    ymin: f64,
}

impl Grid {
    fn new(n1: usize, n2: usize, p: f64) -> Self {
        Self {
            n1,
            n2,
            p,
            xmin: -(n2 as f64) * p / 2.0,
            ymin: -(n1 as f64) * p / 2.0,
        }
    }

    fn xmax(&self) -> f64 {
        self.xmin + self.n2 as f64 * self.p
    }

    fn ymax(&self) -> f64 {
        self.ymin + self.n1 as f64 * self.p
    }

    fn half_diagonal(&self) -> f64 {
        self.xmax().hypot(self.ymax())
    }

    /// Intersection lengths of the line `p0 + α·dir` (unit `dir`) with every
    /// pixel it crosses, as `(pixel index, length)`.
    fn trace(&self, p0: (f64, f64), dir: (f64, f64)) -> Vec<(usize, f64)> {
        let Some((x_lo, x_hi)) = slab(p0.0, dir.0, self.xmin, self.xmax()) else {
            return Vec::new();
        };
        let Some((y_lo, y_hi)) = slab(p0.1, dir.1, self.ymin, self.ymax()) else {
            return Vec::new();
        };
        let a0 = x_lo.max(y_lo);
        let a1 = x_hi.min(y_hi);
        if !(a1 > a0) {
            return Vec::new();
        }
        let mut alphas = vec![a0, a1];
        if dir.0.abs() > AXIS_EPS {
            for k in 0..=self.n2 {
                let a = (self.xmin + k as f64 * self.p - p0.0) / dir.0;
                if a > a0 && a < a1 {
                    alphas.push(a);
                }
            }
        }
        if dir.1.abs() > AXIS_EPS {
            for k in 0..=self.n1 {
                let a = (self.ymin + k as f64 * self.p - p0.1) / dir.1;
                if a > a0 && a < a1 {
                    alphas.push(a);
                }
            }
        }
        alphas.sort_by(f64::total_cmp);
        let min_len = 1e-12 * self.p;
        let mut out = Vec::with_capacity(alphas.len());
        for w in alphas.windows(2) {
            let len = w[1] - w[0];
            if len <= min_len {
                continue;
            }
            let mid = 0.5 * (w[0] + w[1]);
            let mx = p0.0 + mid * dir.0;
            let my = p0.1 + mid * dir.1;
            let j = (((mx - self.xmin) / self.p).floor() as isize).clamp(0, self.n2 as isize - 1) as usize;
            let ib = (((my - self.ymin) / self.p).floor() as isize).clamp(0, self.n1 as isize - 1) as usize;
            let i = self.n1 - 1 - ib;
            out.push((i * self.n2 + j, len));
        }
        out
    }
}

/// Parameter interval where `origin + α·dir` lies strictly inside `(lo, hi)`.
fn slab(origin: f64, dir: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if dir.abs() <= AXIS_EPS {
        if origin > lo && origin < hi {
            Some((f64::NEG_INFINITY, f64::INFINITY))
        } else {
            None
        }
    } else {
        let a = (lo - origin) / dir;
        let b = (hi - origin) / dir;
        Some((a.min(b), a.max(b)))
    }
}
