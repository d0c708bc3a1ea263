//! Poisson observation model: expected counts, sampling, the generalized
//! Kullback–Leibler divergence, and residual standardization.

use std::fmt;

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::operators::ForwardOperator;
use crate::rng::{stream_rng, StreamRng};

/// Pointwise map `g` applied to `Hx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    /// `g(h) = h` (restoration).
    Identity,
    /// `g(h) = I₀·exp(−h)` (transmission tomography).
    BeerLambert { i0: f64 },
}

impl Nonlinearity {
    #[inline]
    pub fn eval(&self, h: f64) -> f64 {
        match *self {
            Nonlinearity::Identity => h,
            Nonlinearity::BeerLambert { i0 } => i0 * (-h).exp(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Nonlinearity::Identity => ModelKind::Identity,
            Nonlinearity::BeerLambert { .. } => ModelKind::BeerLambert,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Identity,
    BeerLambert,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Identity => "identity",
            ModelKind::BeerLambert => "beer_lambert",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(ModelKind::Identity),
            "beer_lambert" => Ok(ModelKind::BeerLambert),
            other => Err(Error::invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

/// `λ = g(Hx) + b`.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    operator: ForwardOperator,
    nonlinearity: Nonlinearity,
    background: Array2<f64>,
}

impl ForwardModel {
    pub fn new(operator: ForwardOperator, nonlinearity: Nonlinearity, background: Array2<f64>) -> Result<Self> {
        if background.dim() != operator.output_shape() {
            return Err(Error::invalid(format!(
                "background shape {:?} does not match measurement shape {:?}",
                background.dim(),
                operator.output_shape()
            )));
        }
        if background.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(Error::invalid("background must be finite and nonnegative"));
        }
        if let Nonlinearity::BeerLambert { i0 } = nonlinearity {
            if !(i0 > 0.0) || !i0.is_finite() {
                return Err(Error::invalid(format!("I0 must be positive, got {i0}")));
            }
            if background.iter().any(|&b| b != 0.0) {
                return Err(Error::Unsupported(
                    "Beer-Lambert model requires zero background".into(),
                ));
            }
        }
        Ok(Self {
            operator,
            nonlinearity,
            background,
        })
    }

    pub fn with_constant_background(operator: ForwardOperator, nonlinearity: Nonlinearity, b: f64) -> Result<Self> {
        let bg = Array2::from_elem(operator.output_shape(), b);
        Self::new(operator, nonlinearity, bg)
    }

    pub fn operator(&self) -> &ForwardOperator {
        &self.operator
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn background(&self) -> &Array2<f64> {
        &self.background
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.operator.input_shape()
    }

    pub fn measurement_shape(&self) -> (usize, usize) {
        self.operator.output_shape()
    }

    /// `g(h) + b` for an already computed `h = Hx`.
    pub fn lambda_from_projection(&self, hx: &Array2<f64>) -> Array2<f64> {
        let g = self.nonlinearity;
        Zip::from(hx).and(&self.background).map_collect(|&h, &b| g.eval(h) + b)
    }

    /// `λ = g(Hx) + b`; `x` must be entrywise nonnegative.
    pub fn lambda(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if let Some(i) = x.iter().position(|&v| !(v >= 0.0)) {
            return Err(Error::invalid(format!("image entry {i} is negative or NaN")));
        }
        let hx = self.operator.apply(x)?;
        Ok(self.lambda_from_projection(&hx))
    }
}

pub fn forward_lambda(x: &Array2<f64>, model: &ForwardModel) -> Result<Array2<f64>> {
    model.lambda(x)
}

/// What generated an observation, as recorded in the observation file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub kind: ModelKind,
    /// κ for restoration, I₀ for tomography.
    pub counts: f64,
    pub background: f64,
}

/// Integer count image together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub counts: Array2<u64>,
    pub model: ModelSummary,
    pub seed: u64,
}

const INVERSION_LIMIT: f64 = 30.0;

/// Independent Poisson draws with means `lambda`, reproducible from `seed`.
pub fn sample_poisson(lambda: ArrayView2<'_, f64>, seed: u64) -> Result<Array2<u64>> {
    sample_poisson_stream(lambda, seed, crate::rng::OBSERVATION_STREAM)
}

pub fn sample_poisson_stream(lambda: ArrayView2<'_, f64>, seed: u64, stream: u64) -> Result<Array2<u64>> {
    check_positive(lambda)?;
    let mut rng = stream_rng(seed, stream);
    Ok(lambda.map(|&l| poisson_draw(&mut rng, l)))
}

/// One Poisson(λ) variate: sequential-search inversion below λ = 30,
/// Hörmann's transformed rejection (PTRS) above.
pub fn poisson_draw(rng: &mut StreamRng, lambda: f64) -> u64 {
    if lambda < INVERSION_LIMIT {
        poisson_inversion(rng, lambda)
    } else {
        poisson_ptrs(rng, lambda)
    }
}

fn poisson_inversion(rng: &mut StreamRng, lambda: f64) -> u64 {
    let u: f64 = rng.random();
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let mut k = 0u64;
    // The tail beyond 1000 is far below double precision for λ < 30.
    while u > cdf && k < 1000 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

fn poisson_ptrs(rng: &mut StreamRng, lambda: f64) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln() <= -lambda + k * loglam - ln_gamma(k + 1.0) {
            return k as u64;
        }
    }
}

fn check_positive(lambda: ArrayView2<'_, f64>) -> Result<()> {
    if let Some((index, &value)) = lambda.iter().enumerate().find(|(_, &l)| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::DegenerateLambda { index, value });
    }
    Ok(())
}

/// `Σ λᵢ − yᵢ ln λᵢ + yᵢ ln yᵢ − yᵢ` with `0 ln 0 = 0`.
pub fn kl_divergence(lambda: ArrayView2<'_, f64>, y: ArrayView2<'_, u64>) -> Result<f64> {
    if lambda.dim() != y.dim() {
        return Err(Error::invalid("lambda and y shapes differ"));
    }
    check_positive(lambda)?;
    Ok(Zip::from(lambda).and(y).fold(0.0, |acc, &l, &yi| acc + kl_term(l, yi as f64)))
}

#[inline]
pub(crate) fn kl_term(lambda: f64, y: f64) -> f64 {
    if y == 0.0 {
        lambda
    } else {
        lambda - y + y * (y / lambda).ln()
    }
}

/// Standardized residual `z = (y − λ)/√λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedResidual {
    z: Array2<f64>,
}

impl StandardizedResidual {
    pub fn values(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.z
    }
}

pub fn standardize(y: ArrayView2<'_, u64>, lambda: ArrayView2<'_, f64>) -> Result<StandardizedResidual> {
    if lambda.dim() != y.dim() {
        return Err(Error::invalid("lambda and y shapes differ"));
    }
    check_positive(lambda)?;
    let z = Zip::from(y).and(lambda).map_collect(|&yi, &l| (yi as f64 - l) / l.sqrt());
    Ok(StandardizedResidual { z })
}

/// Inverse of [`standardize`]: `y = √λ·z + λ`.
pub fn destandardize(z: ArrayView2<'_, f64>, lambda: ArrayView2<'_, f64>) -> Array2<f64> {
    Zip::from(z).and(lambda).map_collect(|&zi, &l| l.sqrt() * zi + l)
}

/// Monte-Carlo estimate of `E[KL(λ; Y)]` for `Y ~ Poisson(λ)`, averaged over
/// `n_samples` independent draws from stream `(seed, stream)`.
pub fn mc_expected_kl(lambda: ArrayView2<'_, f64>, n_samples: usize, seed: u64, stream: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    check_positive(lambda)?;
    let mut rng = stream_rng(seed, stream);
    let mut total = 0.0;
    for _ in 0..n_samples {
        let mut kl = 0.0;
        for &l in lambda.iter() {
            let y = poisson_draw(&mut rng, l) as f64;
            kl += kl_term(l, y);
        }
        total += kl;
    }
    Ok(total / n_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use proptest::prelude::*;

    fn row(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    fn urow(v: &[u64]) -> Array2<u64> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn lambda_examples() {
        let id = ForwardOperator::Identity { shape: (3, 3) };
        let m = ForwardModel::with_constant_background(id.clone(), Nonlinearity::Identity, 0.002).unwrap();
        let l = m.lambda(&Array2::zeros((3, 3))).unwrap();
        assert!(l.iter().all(|&v| v == 0.002));

        let m = ForwardModel::with_constant_background(id.clone(), Nonlinearity::BeerLambert { i0: 10.0 }, 0.0).unwrap();
        let l = m.lambda(&Array2::zeros((3, 3))).unwrap();
        assert!(l.iter().all(|&v| v == 10.0));

        let m = ForwardModel::with_constant_background(
            ForwardOperator::Identity { shape: (1, 1) },
            Nonlinearity::BeerLambert { i0: 1000.0 },
            0.0,
        )
        .unwrap();
        let l = m.lambda(&arr2(&[[2f64.ln()]])).unwrap();
        assert!((l[[0, 0]] - 500.0).abs() < 1e-10);

        assert!(m.lambda(&arr2(&[[-1.0]])).is_err());
    }

    #[test]
    fn model_validation() {
        let id = ForwardOperator::Identity { shape: (2, 2) };
        assert!(matches!(
            ForwardModel::with_constant_background(id.clone(), Nonlinearity::BeerLambert { i0: 5.0 }, 0.1),
            Err(Error::Unsupported(_))
        ));
        assert!(ForwardModel::with_constant_background(id.clone(), Nonlinearity::BeerLambert { i0: 0.0 }, 0.0).is_err());
        assert!(ForwardModel::with_constant_background(id.clone(), Nonlinearity::Identity, -0.1).is_err());
        assert!(ForwardModel::new(id, Nonlinearity::Identity, Array2::zeros((3, 2))).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(row(&[1.0, 3.0, 7.0]).view(), urow(&[1, 3, 7]).view()).unwrap(), 0.0);
        let v = kl_divergence(row(&[2.0]).view(), urow(&[1]).view()).unwrap();
        assert!((v - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert_eq!(kl_divergence(row(&[1.0]).view(), urow(&[0]).view()).unwrap(), 1.0);
        assert!(matches!(
            kl_divergence(row(&[1.0, 0.0]).view(), urow(&[0, 0]).view()),
            Err(Error::DegenerateLambda { index: 1, .. })
        ));
    }

    #[test]
    fn standardize_examples() {
        let z = standardize(urow(&[6]).view(), row(&[4.0]).view()).unwrap();
        assert_eq!(z.values()[[0, 0]], 1.0);
        let z = standardize(urow(&[2, 5]).view(), row(&[2.0, 5.0]).view()).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        assert!(matches!(
            standardize(urow(&[2, 5]).view(), row(&[2.0, -1.0]).view()),
            Err(Error::DegenerateLambda { index: 1, .. })
        ));
    }

    #[test]
    fn sampler_is_deterministic() {
        let l = Array2::from_elem((16, 16), 3.7);
        assert_eq!(sample_poisson(l.view(), 5).unwrap(), sample_poisson(l.view(), 5).unwrap());
        assert_ne!(sample_poisson(l.view(), 5).unwrap(), sample_poisson(l.view(), 6).unwrap());
        assert!(sample_poisson(row(&[1.0, 0.0]).view(), 1).is_err());
    }

    fn moments(lambda: f64, n: usize, seed: u64) -> (f64, f64) {
        let l = Array2::from_elem((1, n), lambda);
        let s = sample_poisson(l.view(), seed).unwrap();
        let mean = s.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = s.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (mean, var)
    }

    #[test]
    fn sampler_moments() {
        let (m, _) = moments(1e-12, 1_000_000, 1);
        assert!(m < 1e-5);
        let (m, v) = moments(4.0, 1_000_000, 2);
        assert!((3.99..=4.01).contains(&m), "mean {m}");
        assert!((3.96..=4.04).contains(&v), "var {v}");
        // rejection branch
        let (m, v) = moments(1000.0, 400_000, 3);
        assert!((m - 1000.0).abs() < 0.3, "mean {m}");
        assert!((v / 1000.0 - 1.0).abs() < 0.01, "var {v}");
        let (m, v) = moments(30.0, 400_000, 4);
        assert!((m - 30.0).abs() < 0.05, "mean {m}");
        assert!((v / 30.0 - 1.0).abs() < 0.01, "var {v}");
    }

    #[test]
    fn rejection_branch_matches_pmf() {
        // Empirical frequencies against the exact pmf at λ = 40.
        let lambda = 40.0;
        let n = 400_000;
        let l = Array2::from_elem((1, n), lambda);
        let s = sample_poisson(l.view(), 9).unwrap();
        let mut hist = vec![0usize; 200];
        for &v in s.iter() {
            hist[v as usize] += 1;
        }
        for k in 25..60usize {
            let pmf = (k as f64 * lambda.ln() - lambda - ln_gamma(k as f64 + 1.0)).exp();
            let freq = hist[k] as f64 / n as f64;
            let se = (pmf * (1.0 - pmf) / n as f64).sqrt();
            assert!((freq - pmf).abs() < 5.0 * se, "k={k}: {freq} vs {pmf}");
        }
    }

    #[test]
    fn standardized_sample_has_unit_moments() {
        let lambda = Array2::from_elem((256, 256), 10.0);
        let y = sample_poisson(lambda.view(), 77).unwrap();
        let z = standardize(y.view(), lambda.view()).unwrap();
        let n = z.values().len() as f64;
        let mean = z.values().sum() / n;
        let var = z.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.02, "{mean}");
        assert!((0.97..=1.03).contains(&var), "{var}");
    }

    #[test]
    fn mc_expected_kl_examples() {
        let m = 400;
        let big = Array2::from_elem((20, 20), 1e4);
        let e = mc_expected_kl(big.view(), 200, 1, 1).unwrap();
        assert!((e / (m as f64 / 2.0) - 1.0).abs() < 0.02, "{e}");

        let l = Array2::from_elem((4, 4), 2.5);
        let one = mc_expected_kl(l.view(), 1, 42, 3).unwrap();
        let mut rng = stream_rng(42, 3);
        let y = l.map(|&v| poisson_draw(&mut rng, v));
        assert_eq!(one, kl_divergence(l.view(), y.view()).unwrap());

        let small = Array2::from_elem((100, 100), 0.1);
        let e = mc_expected_kl(small.view(), 20, 3, 1).unwrap();
        // Large-sample reference for E[KL] at λ = 0.1 per pixel.
        let per_pixel = mc_expected_kl(Array2::from_elem((1, 200_000), 0.1).view(), 5, 4, 1).unwrap() / 200_000.0;
        assert!((e / 10_000.0 - per_pixel).abs() < 0.01);
        assert!(e < 0.9 * 5000.0, "{e}");

        assert!(mc_expected_kl(l.view(), 0, 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_iff_equal(ys in proptest::collection::vec(0u64..50, 1..20), shift in 0.01f64..3.0) {
            let y = urow(&ys);
            let same = y.map(|&v| if v == 0 { 1e-300 } else { v as f64 });
            let kl_same = kl_divergence(same.view(), y.view()).unwrap();
            prop_assert!(kl_same.abs() < 1e-12);
            let other = y.map(|&v| v as f64 + shift);
            prop_assert!(kl_divergence(other.view(), y.view()).unwrap() > 0.0);
        }

        #[test]
        fn kl_convex_along_segments(
            ys in proptest::collection::vec(0u64..30, 5),
            a in proptest::collection::vec(0.05f64..40.0, 5),
            b in proptest::collection::vec(0.05f64..40.0, 5),
            alpha in 0.0f64..1.0,
        ) {
            let y = urow(&ys);
            let la = row(&a);
            let lb = row(&b);
            let mix = &la * alpha + &lb * (1.0 - alpha);
            let f = |l: &Array2<f64>| kl_divergence(l.view(), y.view()).unwrap();
            prop_assert!(f(&mix) <= alpha * f(&la) + (1.0 - alpha) * f(&lb) + 1e-10);
        }

        #[test]
        fn standardization_is_invertible(ys in proptest::collection::vec(0u64..500, 1..30), ls in proptest::collection::vec(0.01f64..300.0, 30)) {
            let y = urow(&ys);
            let l = row(&ls[..ys.len()]);
            let z = standardize(y.view(), l.view()).unwrap();
            let back = destandardize(z.values().view(), l.view());
            for (a, b) in back.iter().zip(y.iter()) {
                prop_assert!((a - *b as f64).abs() < 1e-12 * (1.0 + *b as f64));
            }
        }
    }
}
