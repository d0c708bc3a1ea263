//! Closed-form proximal maps for the three auxiliary blocks, and the
//! principal branch of the Lambert W function.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::operators::GradientField;

/// Penalty `β`, `τ = μ/β`, and `I₀` for the exponential model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxParams {
    pub beta: f64,
    pub tau: f64,
    pub i0: Option<f64>,
}

impl ProxParams {
    pub fn new(mu: f64, beta: f64, i0: Option<f64>) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("beta must be positive, got {beta}")));
        }
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::invalid(format!("mu must be nonnegative, got {mu}")));
        }
        if let Some(i0) = i0 {
            if !(i0 > 0.0) {
                return Err(Error::invalid(format!("I0 must be positive, got {i0}")));
            }
        }
        Ok(Self {
            beta,
            tau: mu / beta,
            i0,
        })
    }
}

/// Shrinks `(a, b)` toward zero by `1/β` in Euclidean norm.
#[inline]
pub fn prox_tv_pair(a: f64, b: f64, beta: f64) -> (f64, f64) {
    let norm = (a * a + b * b).sqrt();
    let thresh = 1.0 / beta;
    if norm <= thresh {
        (0.0, 0.0)
    } else {
        let s = (norm - thresh) / norm;
        (s * a, s * b)
    }
}

/// Pixelwise [`prox_tv_pair`] on a gradient field.
pub fn prox_tv(q: &GradientField, beta: f64) -> GradientField {
    let mut out = GradientField::zeros(q.shape());
    Zip::from(&mut out.h)
        .and(&mut out.v)
        .and(&q.h)
        .and(&q.v)
        .for_each(|th, tv, &a, &b| {
            let (x, y) = prox_tv_pair(a, b, beta);
            *th = x;
            *tv = y;
        });
    out
}

/// Minimizer of `τ(t + b − y ln(t + b)) + ½(t − q)²`.
pub fn prox_kl_identity(q: f64, y: f64, b: f64, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) || !(b >= 0.0) || !(y >= 0.0) {
        return Err(Error::invalid(format!("prox_kl_identity: tau={tau}, b={b}, y={y}")));
    }
    let t = kl_identity_root(q, y, b, tau);
    if !t.is_finite() {
        return Err(Error::NumericalDomain(format!(
            "prox_kl_identity produced {t} at q={q}, y={y}, b={b}, tau={tau}"
        )));
    }
    debug_assert!(t + b >= -1e-14, "t = {t} below -b = {}", -b);
    Ok(t)
}

/// Positive root of `t² + Bt − C` with `B = τ + b − q`, `C = qb + τ(y − b)`.
#[inline]
pub(crate) fn kl_identity_root(q: f64, y: f64, b: f64, tau: f64) -> f64 {
    let big_b = tau + b - q;
    let shifted = q + b - tau;
    let disc = shifted * shifted + 4.0 * tau * y;
    let root = disc.sqrt();
    if big_b > 0.0 {
        let c = q * b + tau * (y - b);
        2.0 * c / (big_b + root)
    } else {
        0.5 * (root - big_b)
    }
}

const LAMBERT_MAX_ITER: usize = 20;

/// Principal branch `W₀(x)` for `x ≥ 0`, by Halley iteration.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::invalid(format!("lambert_w0 needs x >= 0, got {x}")));
    }
    if x.is_infinite() {
        return Err(Error::NumericalDomain("lambert_w0 of infinity".into()));
    }
    Ok(lambert_w0_unchecked(x))
}

#[inline]
pub(crate) fn lambert_w0_unchecked(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let l = x.ln_1p();
    let mut w = l * (1.0 - (1.0 + l).ln() / (2.0 + l));
    for _ in 0..LAMBERT_MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    w
}

/// Solves `w + ln w = u` for large `u`, i.e. `W(eᵘ)` without forming `eᵘ`.
fn lambert_w0_exp(u: f64) -> f64 {
    let mut w = u - u.ln();
    for _ in 0..LAMBERT_MAX_ITER {
        let f = w + w.ln() - u;
        let step = f / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= 4.0 * f64::EPSILON * w {
            break;
        }
    }
    w
}

const EXP_LIMIT: f64 = 700.0;

/// Result of the exponential-model prox.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpProx {
    pub t: f64,
    /// The Lambert argument would overflow and was handled in log space.
    pub overflow: bool,
}

/// Minimizer of `τ(I₀e^{−t} + y t) + ½(t − q)²`.
pub fn prox_kl_exponential(q: f64, y: f64, i0: f64, tau: f64) -> Result<ExpProx> {
    if !(i0 > 0.0) || !(tau >= 0.0) || !(y >= 0.0) {
        return Err(Error::invalid(format!("prox_kl_exponential: I0={i0}, tau={tau}, y={y}")));
    }
    let r = kl_exponential_root(q, y, i0, tau);
    if !r.t.is_finite() {
        return Err(Error::NumericalDomain(format!(
            "prox_kl_exponential produced {} at q={q}, y={y}, I0={i0}, tau={tau}",
            r.t
        )));
    }
    Ok(r)
}

#[inline]
pub(crate) fn kl_exponential_root(q: f64, y: f64, i0: f64, tau: f64) -> ExpProx {
    if tau == 0.0 {
        return ExpProx { t: q, overflow: false };
    }
    let e = tau * y - q;
    let u = (tau * i0).ln() + e;
    if e > EXP_LIMIT || u > EXP_LIMIT {
        ExpProx {
            t: -e + lambert_w0_exp(u),
            overflow: true,
        }
    } else {
        ExpProx {
            t: -e + lambert_w0_unchecked(u.exp()),
            overflow: false,
        }
    }
}

/// Entrywise `max(q, 0)`.
pub fn project_nonneg(q: &Array2<f64>) -> Array2<f64> {
    q.mapv(|v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    /// Root of a nondecreasing function by bisection; `g(lo) ≤ 0 ≤ g(hi)`.
    fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        for _ in 0..200 {
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - r * (b - a);
            d = a + r * (b - a);
        }
        0.5 * (a + b)
    }

    /// Minimizer of `‖t‖ + (β/2)‖t − q‖²` by nested bisection on the
    /// partial subgradients.
    fn tv_oracle(q: (f64, f64), beta: f64) -> (f64, f64) {
        let span = q.0.abs() + q.1.abs() + 1.0;
        // ∂/∂t_y with t_x fixed; at the origin the subgradient interval
        // [β(−q_y) − 1, β(−q_y) + 1] is collapsed to its value nearest zero.
        let inner = |tx: f64| {
            bisect(
                |ty| {
                    let n = tx.hypot(ty);
                    let smooth = beta * (ty - q.1);
                    if n == 0.0 {
                        if smooth.abs() <= 1.0 { 0.0 } else { smooth - smooth.signum() }
                    } else {
                        ty / n + smooth
                    }
                },
                -span,
                span,
            )
        };
        let tx = bisect(
            |tx| {
                let ty = inner(tx);
                let n = tx.hypot(ty);
                let smooth = beta * (tx - q.0);
                if n == 0.0 {
                    if smooth.abs() <= 1.0 { 0.0 } else { smooth - smooth.signum() }
                } else {
                    tx / n + smooth
                }
            },
            -span,
            span,
        );
        (tx, inner(tx))
    }

    #[test]
    fn tv_examples() {
        assert_eq!(prox_tv_pair(0.3, -0.4, 2.0), (0.0, 0.0));
        let (a, b) = prox_tv_pair(3.0, 4.0, 1.0);
        assert!((a - 2.4).abs() < 1e-15 && (b - 3.2).abs() < 1e-15);
        assert_eq!(prox_tv_pair(0.0, 0.0, 1.0), (0.0, 0.0));
    }

    #[test]
    fn tv_matches_grid_search() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..20 {
            let q = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let beta = rng.random_range(0.5..5.0);
            let f = |t: (f64, f64)| t.0.hypot(t.1) + 0.5 * beta * ((t.0 - q.0).powi(2) + (t.1 - q.1).powi(2));
            let h = 0.01;
            let mut best = (f64::INFINITY, (0.0, 0.0));
            for i in -250..=250 {
                for j in -250..=250 {
                    let t = (i as f64 * h, j as f64 * h);
                    let v = f(t);
                    if v < best.0 {
                        best = (v, t);
                    }
                }
            }
            let got = prox_tv_pair(q.0, q.1, beta);
            assert!((got.0 - best.1 .0).abs() <= h && (got.1 - best.1 .1).abs() <= h);
            assert!(f(got) <= best.0 + 1e-12);
        }
    }

    #[test]
    fn tv_matches_oracle() {
        let mut rng = stream_rng(4, 0);
        for _ in 0..1000 {
            let q = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let beta = rng.random_range(0.1..10.0);
            let got = prox_tv_pair(q.0, q.1, beta);
            let want = tv_oracle(q, beta);
            assert!((got.0 - want.0).abs() <= 1e-7 && (got.1 - want.1).abs() <= 1e-7, "{q:?} {beta}: {got:?} vs {want:?}");
        }
    }

    fn kl_id_oracle(q: f64, y: f64, b: f64, tau: f64) -> f64 {
        let g = |t: f64| {
            let s = t + b;
            if s <= 0.0 {
                if y > 0.0 { -f64::INFINITY } else { tau + t - q }
            } else {
                tau * (1.0 - y / s) + t - q
            }
        };
        let hi = q.abs() + tau * (1.0 + y) + b + 10.0;
        bisect(g, -b, hi)
    }

    #[test]
    fn kl_identity_examples() {
        assert_eq!(prox_kl_identity(-1.0, 0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(kl_id_oracle(-1.0, 0.0, 0.0, 1.0).abs() < 1e-12);
        let t = prox_kl_identity(0.0, 1.0, 0.0, 1.0).unwrap();
        assert!((t - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        assert!((t - kl_id_oracle(0.0, 1.0, 0.0, 1.0)).abs() < 1e-9);
        let t = prox_kl_identity(50.0, 50.0, 0.0, 1e-12).unwrap();
        assert!((t - 50.0).abs() < 1e-9);
        assert!(prox_kl_identity(0.0, 1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn kl_identity_matches_oracle() {
        let mut rng = stream_rng(5, 0);
        for _ in 0..1000 {
            let q = rng.random_range(-20.0..40.0);
            let y = rng.random_range(0..60u32) as f64;
            let b = if rng.random::<bool>() { 0.0 } else { rng.random_range(0.0..2.0) };
            let tau = 10f64.powf(rng.random_range(-3.0..2.0));
            let got = prox_kl_identity(q, y, b, tau).unwrap();
            let want = kl_id_oracle(q, y, b, tau);
            assert!((got - want).abs() <= 1e-7, "q={q} y={y} b={b} tau={tau}: {got} vs {want}");
            assert!(got > -b - 1e-14);
        }
    }

    #[test]
    fn lambert_examples() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        let want = bisect(|w| w * w.exp() - 1.0, 0.0, 1.0);
        assert!((lambert_w0(1.0).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.5671432904).abs() < 1e-10);
        assert!(lambert_w0(-0.1).is_err());
    }

    #[test]
    fn lambert_residual_panel() {
        for x in [0.0, 1e-8, 1.0, std::f64::consts::E, 10.0, 1e8, 1e15] {
            let w = lambert_w0(x).unwrap();
            let res = (w * w.exp() - x).abs();
            assert!(res <= 1e-12 * x.max(1.0), "x={x}: residual {res}");
        }
    }

    #[test]
    fn lambert_log_space_agrees() {
        for u in [5.0, 50.0, 300.0, 690.0] {
            let direct = lambert_w0_unchecked(f64::exp(u));
            assert!((lambert_w0_exp(u) - direct).abs() <= 1e-13 * direct);
        }
    }

    fn kl_exp_oracle(q: f64, y: f64, i0: f64, tau: f64) -> f64 {
        let f = |t: f64| tau * (i0 * (-t).exp() + y * t) + 0.5 * (t - q).powi(2);
        let g = |t: f64| -tau * i0 * (-t).exp() + tau * y + t - q;
        // bracket: g is increasing, g(q − τy) < 0, g(q − τy + τI₀e^{−(q−τy)}) ≥ 0
        let lo = q - tau * y;
        let hi = lo + (tau * i0 * (-lo).exp()).min(1e6) + 1.0;
        let root = bisect(g, lo, hi);
        // golden section as an independent cross-check on a narrow bracket
        let gs = golden(f, root - 1e-3, root + 1e-3);
        assert!((gs - root).abs() < 1e-6);
        root
    }

    #[test]
    fn kl_exponential_examples() {
        let r = prox_kl_exponential(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!((r.t - 0.5671432904097838).abs() < 1e-12);
        assert!(!r.overflow);
        let r = prox_kl_exponential(2.5, 3.0, 100.0, 1e-12).unwrap();
        assert!((r.t - 2.5).abs() < 1e-9);
        assert_eq!(prox_kl_exponential(2.5, 3.0, 100.0, 0.0).unwrap().t, 2.5);
        assert!(prox_kl_exponential(0.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn kl_exponential_matches_oracle() {
        let mut rng = stream_rng(6, 0);
        for _ in 0..1000 {
            let q = rng.random_range(-3.0..8.0);
            let i0 = 10f64.powf(rng.random_range(0.0..4.0));
            let y = rng.random_range(0.0..i0 * 1.2).floor();
            let tau = 10f64.powf(rng.random_range(-4.0..1.0));
            let got = prox_kl_exponential(q, y, i0, tau).unwrap().t;
            let want = kl_exp_oracle(q, y, i0, tau);
            assert!((got - want).abs() <= 1e-7, "q={q} y={y} I0={i0} tau={tau}: {got} vs {want}");
        }
    }

    #[test]
    fn kl_exponential_overflow_branch() {
        // τy − q ≈ 1000 would overflow e^{τy−q}
        let (q, y, i0, tau) = (-990.0, 10.0, 50.0, 1.0);
        let r = prox_kl_exponential(q, y, i0, tau).unwrap();
        assert!(r.overflow);
        let g = -tau * i0 * (-r.t).exp() + tau * y + r.t - q;
        assert!(g.abs() <= 1e-9 * (r.t.abs() + q.abs()), "{g}");
    }

    #[test]
    fn projection() {
        use ndarray::arr2;
        assert_eq!(project_nonneg(&arr2(&[[-1.0, -2.0]])), arr2(&[[0.0, 0.0]]));
        assert_eq!(project_nonneg(&arr2(&[[1.0, 2.0]])), arr2(&[[1.0, 2.0]]));
        assert_eq!(project_nonneg(&arr2(&[[-1.0, 2.0]])), arr2(&[[0.0, 2.0]]));
    }

    #[test]
    fn nonexpansive() {
        let mut rng = stream_rng(8, 0);
        for _ in 0..1000 {
            let beta = rng.random_range(0.1..5.0);
            let a = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let b = (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let pa = prox_tv_pair(a.0, a.1, beta);
            let pb = prox_tv_pair(b.0, b.1, beta);
            assert!((pa.0 - pb.0).hypot(pa.1 - pb.1) <= (a.0 - b.0).hypot(a.1 - b.1) + 1e-12);

            let (y, bg, tau) = (rng.random_range(0..20u32) as f64, rng.random_range(0.0..1.0), rng.random_range(0.01..5.0));
            let (qa, qb) = (rng.random_range(-10.0..30.0), rng.random_range(-10.0..30.0));
            let d = (prox_kl_identity(qa, y, bg, tau).unwrap() - prox_kl_identity(qb, y, bg, tau).unwrap()).abs();
            assert!(d <= (qa - qb).abs() + 1e-12);

            let i0 = rng.random_range(1.0..1000.0);
            let d = (prox_kl_exponential(qa, y, i0, tau).unwrap().t - prox_kl_exponential(qb, y, i0, tau).unwrap().t).abs();
            assert!(d <= (qa - qb).abs() + 1e-12);

            let d = (qa.max(0.0) - qb.max(0.0)).abs();
            assert!(d <= (qa - qb).abs());
        }
    }

    proptest! {
        #[test]
        fn tv_first_order(a in -10.0f64..10.0, b in -10.0f64..10.0, beta in 0.05f64..20.0) {
            let (x, y) = prox_tv_pair(a, b, beta);
            let n = x.hypot(y);
            if n == 0.0 {
                prop_assert!(beta * a.hypot(b) <= 1.0 + 1e-12);
            } else {
                prop_assert!((x / n + beta * (x - a)).abs() <= 1e-8);
                prop_assert!((y / n + beta * (y - b)).abs() <= 1e-8);
            }
        }

        #[test]
        fn kl_identity_first_order(q in -50.0f64..50.0, y in 0u32..100, b in 0.0f64..3.0, tau in 1e-3f64..50.0) {
            let y = y as f64;
            let t = prox_kl_identity(q, y, b, tau).unwrap();
            prop_assert!(t + b > -1e-14);
            if t + b > 1e-9 {
                let g = tau * (1.0 - y / (t + b)) + t - q;
                prop_assert!(g.abs() <= 1e-8 * (1.0 + q.abs() + tau * (1.0 + y / (t + b))), "g = {}", g);
            } else {
                prop_assert!(y == 0.0);
            }
        }

        #[test]
        fn kl_exponential_first_order(q in -20.0f64..20.0, y in 0u32..2000, i0 in 1.0f64..1e4, tau in 1e-4f64..10.0) {
            let y = y as f64;
            let t = prox_kl_exponential(q, y, i0, tau).unwrap().t;
            let e = tau * i0 * (-t).exp();
            let g = -e + tau * y + t - q;
            prop_assert!(g.abs() <= 1e-8 * (1.0 + q.abs() + e + tau * y), "g = {}", g);
        }
    }
}
