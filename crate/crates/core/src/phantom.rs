//! Procedural test images with values in `[0, 1]`.

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Phantom {
    /// Sparse bright structure on a black background.
    SatelliteLike,
    /// Piecewise-constant elliptical blobs on a dim background.
    CellsLike,
    /// Modified Shepp–Logan head.
    SheppLogan,
    /// A PGM file scaled to `[0, 1]` by its maxval.
    File(PathBuf),
}

impl fmt::Display for Phantom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phantom::SatelliteLike => f.write_str("satellite-like"),
            Phantom::CellsLike => f.write_str("cells-like"),
            Phantom::SheppLogan => f.write_str("shepp-logan"),
            Phantom::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl std::str::FromStr for Phantom {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "satellite-like" | "satellite" => Phantom::SatelliteLike,
            "cells-like" | "cells" => Phantom::CellsLike,
            "shepp-logan" => Phantom::SheppLogan,
            "" => return Err(Error::invalid("empty phantom name")),
            path => Phantom::File(PathBuf::from(path)),
        })
    }
}

impl Phantom {
    /// Renders at `shape`; files are loaded at their own size and must match.
    pub fn render(&self, shape: (usize, usize)) -> Result<Array2<f64>> {
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::invalid("phantom shape must be nonempty"));
        }
        match self {
            Phantom::SatelliteLike => Ok(satellite(shape)),
            Phantom::CellsLike => Ok(cells(shape)),
            Phantom::SheppLogan => Ok(shepp_logan(shape)),
            Phantom::File(p) => load(p, shape),
        }
    }
}

fn load(path: &Path, shape: (usize, usize)) -> Result<Array2<f64>> {
    let img = crate::io::load_pgm(path)?;
    if img.dim() != shape {
        return Err(Error::Config(format!(
            "phantom {} is {:?}, configured shape is {:?}",
            path.display(),
            img.dim(),
            shape
        )));
    }
    Ok(img)
}

/// `(value, cx, cy, a, b, angle in degrees)` in normalized `[-1, 1]²`
/// coordinates with `y` pointing up. Values add where ellipses overlap.
type Ellipse = (f64, f64, f64, f64, f64, f64);

fn paint(shape: (usize, usize), ellipses: &[Ellipse], additive: bool) -> Array2<f64> {
    let (r, c) = shape;
    Array2::from_shape_fn(shape, |(i, j)| {
        let x = (2.0 * j as f64 + 1.0) / c as f64 - 1.0;
        let y = 1.0 - (2.0 * i as f64 + 1.0) / r as f64;
        let mut v = 0.0;
        for &(val, cx, cy, a, b, deg) in ellipses {
            let (s, co) = deg.to_radians().sin_cos();
            let (dx, dy) = (x - cx, y - cy);
            let u = dx * co + dy * s;
            let w = -dx * s + dy * co;
            if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                if additive {
                    v += val;
                } else {
                    v = val;
                }
            }
        }
        v
    })
}

pub fn shepp_logan(shape: (usize, usize)) -> Array2<f64> {
    const E: [Ellipse; 10] = [
        (1.0, 0.0, 0.0, 0.69, 0.92, 0.0),
        (-0.8, 0.0, -0.0184, 0.6624, 0.874, 0.0),
        (-0.2, 0.22, 0.0, 0.11, 0.31, -18.0),
        (-0.2, -0.22, 0.0, 0.16, 0.41, 18.0),
        (0.1, 0.0, 0.35, 0.21, 0.25, 0.0),
        (0.1, 0.0, 0.1, 0.046, 0.046, 0.0),
        (0.1, 0.0, -0.1, 0.046, 0.046, 0.0),
        (0.1, -0.08, -0.605, 0.046, 0.023, 0.0),
        (0.1, 0.0, -0.606, 0.023, 0.023, 0.0),
        (0.1, 0.06, -0.605, 0.023, 0.046, 0.0),
    ];
    paint(shape, &E, true).mapv(|v| v.clamp(0.0, 1.0))
}

pub fn cells(shape: (usize, usize)) -> Array2<f64> {
    const E: [Ellipse; 12] = [
        (0.15, 0.0, 0.0, 0.95, 0.95, 0.0),
        (0.8, -0.55, 0.5, 0.28, 0.2, 30.0),
        (0.5, 0.1, 0.6, 0.22, 0.3, -15.0),
        (1.0, 0.6, 0.45, 0.18, 0.18, 0.0),
        (0.65, -0.5, -0.15, 0.2, 0.32, 70.0),
        (0.35, 0.15, 0.05, 0.3, 0.2, 10.0),
        (0.9, 0.62, -0.2, 0.22, 0.14, -40.0),
        (0.45, -0.2, -0.62, 0.26, 0.18, 0.0),
        (0.75, 0.35, -0.65, 0.16, 0.2, 25.0),
        (1.0, 0.15, 0.05, 0.1, 0.08, 10.0),
        (0.3, -0.62, 0.5, 0.1, 0.07, 30.0),
        (0.2, 0.6, 0.45, 0.07, 0.07, 0.0),
    ];
    paint(shape, &E, false)
}

pub fn satellite(shape: (usize, usize)) -> Array2<f64> {
    let (r, c) = shape;
    let boxes: [(f64, f64, f64, f64, f64); 9] = [
        // value, x0, x1, y0, y1 in [-1, 1]² with y up
        (0.85, -0.14, 0.14, -0.28, 0.28),
        (0.55, -0.8, -0.22, -0.12, 0.12),
        (0.55, 0.22, 0.8, -0.12, 0.12),
        (0.3, -0.22, -0.14, -0.02, 0.02),
        (0.3, 0.14, 0.22, -0.02, 0.02),
        (1.0, -0.04, 0.04, 0.28, 0.5),
        (0.7, -0.06, 0.06, -0.45, -0.28),
        (0.4, -0.51, -0.49, -0.12, 0.12),
        (0.4, 0.49, 0.51, -0.12, 0.12),
    ];
    let mut img = Array2::from_shape_fn(shape, |(i, j)| {
        let x = (2.0 * j as f64 + 1.0) / c as f64 - 1.0;
        let y = 1.0 - (2.0 * i as f64 + 1.0) / r as f64;
        let mut v = 0.0;
        for &(val, x0, x1, y0, y1) in &boxes {
            if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
                v = val;
            }
        }
        v
    });
    let dish = paint(shape, &[(1.0, 0.0, 0.62, 0.16, 0.06, 0.0)], false);
    img.zip_mut_with(&dish, |a, &b| *a = a.max(b));
    img
}
