//! Oracle checks run by `pwp selftest`. Each compares a fast kernel with a
//! slow direct computation.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;

use crate::admm::{AdmmSolver, SolverConfig, SolverState, Stacked, XUpdate};
use crate::error::Result;
use crate::operators::{make_gaussian_kernel, BlurOperator, ForwardOperator, GradientField};
use crate::poisson::{sample_poisson, standardize, ForwardModel, Nonlinearity};
use crate::prox::{lambert_w0, prox_kl_exponential, prox_kl_identity, prox_tv_pair};
use crate::rng::stream_rng;
use crate::whiteness::sample_autocorrelation;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    Check { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Runs every check with `draws` random prox instances.
pub fn run(seed: u64, draws: usize) -> Vec<Check> {
    vec![
        timed("autocorrelation", || autocorrelation(seed)),
        timed("prox_tv", || prox_tv_check(seed, draws)),
        timed("prox_kl_identity", || prox_identity_check(seed, draws)),
        timed("prox_kl_exponential", || prox_exponential_check(seed, draws)),
        timed("lambert_w", lambert_panel),
        timed("exact_x_update", || exact_update(seed)),
        timed("whiteness_of_truth", || white_truth(seed)),
    ]
}

fn direct_acf(z: &Array2<f64>, l: isize, m: isize) -> f64 {
    let (r, c) = z.dim();
    let mut acc = 0.0;
    for i in 0..r as isize {
        for j in 0..c as isize {
            let (a, b) = (i + l, j + m);
            if a >= 0 && b >= 0 && (a as usize) < r && (b as usize) < c {
                acc += z[[i as usize, j as usize]] * z[[a as usize, b as usize]];
            }
        }
    }
    acc / z.iter().map(|v| v * v).sum::<f64>()
}

fn autocorrelation(seed: u64) -> Result<(bool, String)> {
    let mut rng = stream_rng(seed, 101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let shape = (rng.random_range(1..=16), rng.random_range(1..=16));
        let z = Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0));
        let map = sample_autocorrelation(&z)?;
        for (l, m, s) in map.lags() {
            // the fast path averages the two mirror lags
            let want = 0.5 * (direct_acf(&z, l, m) + direct_acf(&z, -l, -m));
            worst = worst.max((s - want).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max abs error {worst:.2e}")))
}

/// Root of an increasing function on `[lo, hi]`.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn prox_tv_check(seed: u64, draws: usize) -> Result<(bool, String)> {
    let mut rng = stream_rng(seed, 102);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let (qa, qb) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let beta = 10f64.powf(rng.random_range(-1.5..1.5));
        let (a, b) = prox_tv_pair(qa, qb, beta);
        let nq = (qa * qa + qb * qb).sqrt();
        // along the ray t = s·q the objective has slope |q|/β − (1 − s)|q|²
        let slope = |s: f64| nq / beta - (1.0 - s) * nq * nq;
        let s = if slope(0.0) >= 0.0 { 0.0 } else { bisect(0.0, 1.0, slope) };
        worst = worst.max((a - s * qa).abs()).max((b - s * qb).abs());
    }
    Ok((worst <= 1e-7, format!("max abs error {worst:.2e}")))
}

fn prox_identity_check(seed: u64, draws: usize) -> Result<(bool, String)> {
    let mut rng = stream_rng(seed, 103);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let q = rng.random_range(-5.0..10.0);
        let y = rng.random_range(0..20) as f64;
        let b = rng.random_range(0.0..1.0);
        let tau = 10f64.powf(rng.random_range(-2.0..1.0));
        let t = prox_kl_identity(q, y, b, tau)?;
        let want = if y == 0.0 {
            (q - tau).max(-b)
        } else {
            let lo = -b + 1e-300;
            let hi = q.abs() + tau * y + 10.0;
            bisect(lo, hi, |t| tau * (1.0 - y / (t + b)) + t - q)
        };
        worst = worst.max((t - want).abs() / want.abs().max(1.0));
    }
    Ok((worst <= 1e-7, format!("max rel error {worst:.2e}")))
}

fn prox_exponential_check(seed: u64, draws: usize) -> Result<(bool, String)> {
    let mut rng = stream_rng(seed, 104);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let q = rng.random_range(-2.0..6.0);
        let i0 = 10f64.powf(rng.random_range(0.0..4.0));
        let y = rng.random_range(0.0..i0).floor();
        let tau = 10f64.powf(rng.random_range(-3.0..0.0));
        let t = prox_kl_exponential(q, y, i0, tau)?.t;
        let grad = |t: f64| tau * (y - i0 * (-t).exp()) + t - q;
        let mut lo = q - tau * y - 1.0;
        while grad(lo) > 0.0 {
            lo -= 1.0;
        }
        let want = bisect(lo, q + tau * i0 + 1.0, grad);
        worst = worst.max((t - want).abs() / want.abs().max(1.0));
    }
    Ok((worst <= 1e-7, format!("max rel error {worst:.2e}")))
}

fn lambert_panel() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for x in [0.0, 1e-10, 0.1, 1.0, std::f64::consts::E, 100.0, 1e10] {
        let w = lambert_w0(x)?;
        worst = worst.max((w * w.exp() - x).abs() / x.max(1.0));
    }
    Ok((worst <= 1e-12, format!("max scaled residual {worst:.2e}")))
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).expect("nonempty");
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (b[i] - (i + 1..n).map(|j| a[i][j] * x[j]).sum::<f64>()) / a[i][i];
    }
    x
}

fn exact_update(seed: u64) -> Result<(bool, String)> {
    let shape = (8, 8);
    let k = make_gaussian_kernel(5, 1.0)?;
    let h: ForwardOperator = BlurOperator::new(k, shape)?.into();
    let model = ForwardModel::with_constant_background(h, Nonlinearity::Identity, 0.002)?;
    let mut rng = stream_rng(seed, 105);
    let y = Array2::from_shape_fn(shape, |_| rng.random_range(0..6u64));
    let beta = 0.5;
    let s = AdmmSolver::new(&model, &y, SolverConfig::new(1.0, beta, XUpdate::ExactFft))?;
    let mut rand_img = || Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0));
    let t = Stacked { grad: GradientField { h: rand_img(), v: rand_img() }, data: rand_img(), ident: rand_img() };
    let rho = Stacked { grad: GradientField { h: rand_img(), v: rand_img() }, data: rand_img(), ident: rand_img() };
    let v = t.combine(1.0, &rho, -1.0 / beta);
    let state = SolverState { x: Array2::zeros(shape), t, rho, iter: 0, delta_x: f64::INFINITY };
    let x = s.x_update_exact(&state)?;
    let n = shape.0 * shape.1;
    let mut a = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut e = Array2::zeros(shape);
        e.as_slice_mut().expect("standard layout")[j] = 1.0;
        for (i, val) in s.apply_m1_adjoint(&s.apply_m1(&e)).iter().enumerate() {
            a[i][j] = *val;
        }
    }
    let want = solve_dense(a, s.apply_m1_adjoint(&v).iter().cloned().collect());
    let num: f64 = x.iter().zip(&want).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let den: f64 = want.iter().map(|q| q * q).sum::<f64>().sqrt();
    let rel = num / den;
    Ok((rel <= 1e-9, format!("relative error {rel:.2e}")))
}

fn white_truth(seed: u64) -> Result<(bool, String)> {
    let shape = (256, 256);
    let lambda = Array2::from_elem(shape, 5.0);
    let y = sample_poisson(lambda.view(), seed)?;
    let z = standardize(y.view(), lambda.view())?;
    let map = sample_autocorrelation(z.values())?;
    let m = (shape.0 * shape.1) as f64;
    let band = 4.0 / m.sqrt();
    let (mut inside, mut total) = (0usize, 0usize);
    for (l, k, s) in map.lags() {
        if l == 0 && k == 0 {
            continue;
        }
        total += 1;
        if s.abs() <= band {
            inside += 1;
        }
    }
    let s00 = map.get(0, 0).unwrap_or(f64::NAN);
    let frac = inside as f64 / total as f64;
    Ok((s00 == 1.0 && frac >= 0.99, format!("s(0,0) = {s00}, {:.2}% of lags within 4/sqrt(m)", 100.0 * frac)))
}
