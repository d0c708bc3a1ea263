//! ADMM for `min TV(x) + μ·KL(g(Hx) + b; y)` over `x ≥ 0`, split as
//! `t₁ = Dx`, `t₂ = Hx`, `t₃ = x`, i.e. `t = M₁x` with `M₁ = (D; H; I)`.

use std::fmt;
use std::io::Write;

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::operators::{stacked_norm_sq, ForwardOperator, Gradient, GradientField};
use crate::poisson::{kl_term, ForwardModel, ModelKind, Nonlinearity};
use crate::prox::{kl_exponential_root, kl_identity_root, prox_tv_pair};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 3000;
pub const DEFAULT_MAX_ITER_LINEARIZED: usize = 20000;

/// Window length of the divergence detector.
const DIVERGENCE_WINDOW: usize = 50;
const DIVERGENCE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XUpdate {
    /// Fourier-domain solve of the normal equations; periodic `H` only.
    ExactFft,
    /// One gradient step on the quadratic majorant with curvature `η`.
    Linearized,
}

impl fmt::Display for XUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            XUpdate::ExactFft => "exact_fft",
            XUpdate::Linearized => "linearized",
        })
    }
}

impl std::str::FromStr for XUpdate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_fft" | "exact" => Ok(XUpdate::ExactFft),
            "linearized" => Ok(XUpdate::Linearized),
            other => Err(Error::invalid(format!("unknown x-update `{other}`"))),
        }
    }
}

/// Default penalty: `2·√μ` for restoration, `√(μ·I₀)` for tomography.
pub fn default_beta(nonlinearity: Nonlinearity, mu: f64) -> f64 {
    match nonlinearity {
        Nonlinearity::Identity => 2.0 * mu.sqrt(),
        Nonlinearity::BeerLambert { i0 } => (mu * i0).sqrt(),
    }
}

/// Default iteration cap: [`DEFAULT_MAX_ITER`] for restoration,
/// [`DEFAULT_MAX_ITER_LINEARIZED`] for tomography.
pub fn default_max_iter(kind: ModelKind) -> usize {
    match kind {
        ModelKind::Identity => DEFAULT_MAX_ITER,
        ModelKind::BeerLambert => DEFAULT_MAX_ITER_LINEARIZED,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mu: f64,
    pub beta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub x_update: XUpdate,
    /// Majorant curvature; estimated from `‖M₁‖²` when `None`.
    pub eta: Option<f64>,
    pub record_trace: bool,
}

impl SolverConfig {
    pub fn new(mu: f64, beta: f64, x_update: XUpdate) -> Self {
        Self {
            mu,
            beta,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            x_update,
            eta: None,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::invalid(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::invalid(format!("eta must be positive, got {eta}")));
            }
        }
        Ok(())
    }
}

/// An element of the range of `M₁`: `(t₁, t₂, t₃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stacked {
    pub grad: GradientField,
    pub data: Array2<f64>,
    pub ident: Array2<f64>,
}

impl Stacked {
    pub fn zeros(image: (usize, usize), measurement: (usize, usize)) -> Self {
        Self {
            grad: GradientField::zeros(image),
            data: Array2::zeros(measurement),
            ident: Array2::zeros(image),
        }
    }

    pub fn dot(&self, other: &Stacked) -> f64 {
        self.grad.dot(&other.grad) + dot(&self.data, &other.data) + dot(&self.ident, &other.ident)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Stacked, b: f64) -> Stacked {
        let lin = |x: &Array2<f64>, y: &Array2<f64>| Zip::from(x).and(y).map_collect(|&u, &v| a * u + b * v);
        Stacked {
            grad: GradientField {
                h: lin(&self.grad.h, &other.grad.h),
                v: lin(&self.grad.v, &other.grad.v),
            },
            data: lin(&self.data, &other.data),
            ident: lin(&self.ident, &other.ident),
        }
    }
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, &u, &v| acc + u * v)
}

fn norm(a: &Array2<f64>) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Array2<f64>,
    pub t: Stacked,
    pub rho: Stacked,
    pub iter: usize,
    pub delta_x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub delta_x: f64,
    pub primal_residual: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// `t₃` at exit: the nonnegative reconstruction.
    pub x_star: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta_x: f64,
    /// `‖M₁x − t‖ / ‖t‖`.
    pub final_constraint_residual: f64,
    pub trace: Vec<IterationRecord>,
    /// Exponential-prox evaluations that took the log-space branch.
    pub overflow_count: usize,
    pub beta: f64,
    pub eta: Option<f64>,
}

#[derive(Debug, Default, Clone, Copy)]
struct StepNorms {
    gap_sq: f64,
    t_sq: f64,
    overflow: usize,
}

/// CSV with header `iter,delta_x,primal_residual,objective`.
pub fn write_trace_csv<W: Write>(trace: &[IterationRecord], mut w: W) -> std::io::Result<()> {
    use crate::io::format_g17 as g;
    writeln!(w, "iter,delta_x,primal_residual,objective")?;
    for r in trace {
        writeln!(w, "{},{},{},{}", r.iter, g(r.delta_x), g(r.primal_residual), g(r.objective))?;
    }
    Ok(())
}

/// `x − ∇/η`.
pub fn linearized_step(x: &Array2<f64>, gradient: &Array2<f64>, eta: f64) -> Array2<f64> {
    Zip::from(x).and(gradient).map_collect(|&a, &g| a - g / eta)
}

struct Spectral {
    fft: Fft2,
    h_hat: Option<Vec<Complex64>>,
    denom: Vec<f64>,
    neg: Vec<usize>,
}

/// One TV–KL problem `(model, y, μ)` ready to iterate.
pub struct AdmmSolver<'a> {
    model: &'a ForwardModel,
    y: Array2<f64>,
    grad: Gradient,
    config: SolverConfig,
    eta: Option<f64>,
    spectral: Option<Spectral>,
}

impl<'a> AdmmSolver<'a> {
    pub fn new(model: &'a ForwardModel, y: &Array2<u64>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        if y.dim() != model.measurement_shape() {
            return Err(Error::invalid(format!(
                "observation shape {:?} does not match measurement shape {:?}",
                y.dim(),
                model.measurement_shape()
            )));
        }
        let shape = model.image_shape();
        let grad = Gradient::new(shape);
        let (eta, spectral) = match config.x_update {
            XUpdate::ExactFft => {
                let h_hat = match model.operator() {
                    ForwardOperator::Identity { .. } => None,
                    ForwardOperator::Blur(b) => Some(b.transfer().to_vec()),
                    ForwardOperator::Sparse(_) => {
                        return Err(Error::Unsupported(
                            "exact FFT x-update needs a periodic forward operator".into(),
                        ))
                    }
                };
                let denom = grad
                    .normal_eigenvalues()
                    .into_iter()
                    .enumerate()
                    .map(|(k, d)| d + h_hat.as_ref().map_or(1.0, |h| h[k].norm_sqr()) + 1.0)
                    .collect();
                let fft = Fft2::new(shape.0, shape.1);
                let neg = fft.negated_index();
                let spectral = Spectral { fft, h_hat, denom, neg };
                (None, Some(spectral))
            }
            XUpdate::Linearized => {
                let eta = match config.eta {
                    Some(e) => e,
                    None => stacked_norm_sq(model.operator())?,
                };
                (Some(eta), None)
            }
        };
        Ok(Self {
            model,
            y: y.mapv(|v| v as f64),
            grad,
            config,
            eta,
            spectral,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn eta(&self) -> Option<f64> {
        self.eta
    }

    fn h(&self, x: &Array2<f64>) -> Array2<f64> {
        self.model.operator().apply(x).expect("image shape checked at construction")
    }

    fn ht(&self, r: &Array2<f64>) -> Array2<f64> {
        self.model.operator().apply_adjoint(r).expect("measurement shape checked at construction")
    }

    fn d(&self, x: &Array2<f64>) -> GradientField {
        self.grad.apply(x).expect("image shape checked at construction")
    }

    fn dt(&self, t: &GradientField) -> Array2<f64> {
        self.grad.adjoint(t).expect("image shape checked at construction")
    }

    pub fn apply_m1(&self, x: &Array2<f64>) -> Stacked {
        Stacked {
            grad: self.d(x),
            data: self.h(x),
            ident: x.clone(),
        }
    }

    pub fn apply_m1_adjoint(&self, s: &Stacked) -> Array2<f64> {
        let mut out = self.dt(&s.grad);
        out += &self.ht(&s.data);
        out += &s.ident;
        out
    }

    /// `x⁰`, `t⁰ = M₁x⁰`, `ρ⁰ = 0`.
    pub fn initial_state(&self) -> SolverState {
        let shape = self.model.image_shape();
        let x = match self.model.nonlinearity() {
            Nonlinearity::Identity => {
                let back = self.ht(&self.y).mapv(|v| v.max(0.0));
                let target = self.y.mean().unwrap_or(0.0);
                let have = back.mean().unwrap_or(0.0);
                if have > 0.0 {
                    back * (target / have)
                } else {
                    Array2::from_elem(shape, target.max(0.0))
                }
            }
            Nonlinearity::BeerLambert { i0 } => {
                let line: f64 = self.y.iter().map(|&c| (i0 / c.max(0.5)).ln()).sum();
                let path: f64 = self.h(&Array2::ones(shape)).sum();
                let level = if path > 0.0 { (line / path).max(0.0) } else { 0.0 };
                Array2::from_elem(shape, level)
            }
        };
        let t = self.apply_m1(&x);
        SolverState {
            x,
            rho: Stacked::zeros(shape, self.model.measurement_shape()),
            t,
            iter: 0,
            delta_x: f64::INFINITY,
        }
    }

    fn v_of(&self, state: &SolverState) -> Stacked {
        state.t.combine(1.0, &state.rho, -1.0 / self.config.beta)
    }

    /// Solves `(DᵀD + HᵀH + I)x = M₁ᵀv`, `v = t − ρ/β`.
    pub fn x_update_exact(&self, state: &SolverState) -> Result<Array2<f64>> {
        Ok(self.exact_solve(&self.v_of(state))?.0)
    }

    /// Returns `x` and `Hx`. With a blur, the two real right-hand sides
    /// share one complex transform, as do the two real outputs.
    fn exact_solve(&self, v: &Stacked) -> Result<(Array2<f64>, Array2<f64>)> {
        let sp = self
            .spectral
            .as_ref()
            .ok_or_else(|| Error::Unsupported("solver was configured for the linearized x-update".into()))?;
        let shape = self.model.image_shape();
        let mut rhs = self.dt(&v.grad);
        rhs += &v.ident;
        match &sp.h_hat {
            None => {
                rhs += &v.data;
                let mut f = sp.fft.forward_real(&rhs);
                for (a, &d) in f.iter_mut().zip(&sp.denom) {
                    *a /= d;
                }
                let x = sp.fft.inverse_real(f);
                Ok((x.clone(), x))
            }
            Some(h) => {
                let mut z: Vec<Complex64> = Zip::from(&rhs)
                    .and(&v.data)
                    .map_collect(|&a, &b| Complex64::new(a, b))
                    .into_iter()
                    .collect();
                sp.fft.forward(&mut z);
                let half = Complex64::new(0.5, 0.0);
                let half_i = Complex64::new(0.0, -0.5);
                let mut out = vec![Complex64::new(0.0, 0.0); z.len()];
                for (k, o) in out.iter_mut().enumerate() {
                    let zc = z[sp.neg[k]].conj();
                    let a = (z[k] + zc) * half;
                    let b = (z[k] - zc) * half_i;
                    let f = (a + h[k].conj() * b) / sp.denom[k];
                    *o = f + Complex64::new(0.0, 1.0) * (h[k] * f);
                }
                sp.fft.inverse(&mut out);
                let x = Array2::from_shape_vec(shape, out.iter().map(|c| c.re).collect()).expect("grid size");
                let hx = Array2::from_shape_vec(shape, out.iter().map(|c| c.im).collect()).expect("grid size");
                Ok((x, hx))
            }
        }
    }

    /// `x − (1/η)·M₁ᵀ(M₁x − v)`.
    pub fn x_update_linearized(&self, state: &SolverState) -> Result<Array2<f64>> {
        let m1x = self.apply_m1(&state.x);
        self.linearized_from(&state.x, &m1x, &self.v_of(state))
    }

    fn linearized_from(&self, x: &Array2<f64>, m1x: &Stacked, v: &Stacked) -> Result<Array2<f64>> {
        let eta = match self.eta {
            Some(e) => e,
            None => stacked_norm_sq(self.model.operator())?,
        };
        let g = self.apply_m1_adjoint(&m1x.combine(1.0, v, -1.0));
        Ok(linearized_step(x, &g, eta))
    }

    /// Proximal step for every block given `M₁x⁺` and `ρ`. Returns the new
    /// `t` and the number of log-space Lambert evaluations.
    pub fn t_update(&self, m1x: &Stacked, rho: &Stacked) -> (Stacked, usize) {
        let mut t = m1x.clone();
        let mut scratch = rho.clone();
        let step = self.t_dual_step(m1x, &mut scratch, &mut t);
        (t, step.overflow)
    }

    /// `ρ + β(M₁x⁺ − t⁺)`.
    pub fn dual_update(&self, rho: &Stacked, m1x: &Stacked, t: &Stacked) -> Stacked {
        let b = self.config.beta;
        let gap = m1x.combine(1.0, t, -1.0);
        rho.combine(1.0, &gap, b)
    }

    /// Fused t- and dual update in one pass over every block.
    fn t_dual_step(&self, m1x: &Stacked, rho: &mut Stacked, t: &mut Stacked) -> StepNorms {
        let beta = self.config.beta;
        let ib = 1.0 / beta;
        let tau = self.config.mu / beta;
        let mut n = StepNorms::default();
        Zip::from(&mut t.grad.h)
            .and(&mut t.grad.v)
            .and(&mut rho.grad.h)
            .and(&mut rho.grad.v)
            .and(&m1x.grad.h)
            .and(&m1x.grad.v)
            .for_each(|th, tv, rh, rv, &dh, &dv| {
                let (a, b) = prox_tv_pair(dh + *rh * ib, dv + *rv * ib, beta);
                let (gh, gv) = (dh - a, dv - b);
                *th = a;
                *tv = b;
                *rh += beta * gh;
                *rv += beta * gv;
                n.gap_sq += gh * gh + gv * gv;
                n.t_sq += a * a + b * b;
            });
        match self.model.nonlinearity() {
            Nonlinearity::Identity => Zip::from(&mut t.data)
                .and(&mut rho.data)
                .and(&m1x.data)
                .and(&self.y)
                .and(self.model.background())
                .for_each(|ti, ri, &hx, &yi, &bi| {
                    let v = kl_identity_root(hx + *ri * ib, yi, bi, tau);
                    let g = hx - v;
                    *ti = v;
                    *ri += beta * g;
                    n.gap_sq += g * g;
                    n.t_sq += v * v;
                }),
            Nonlinearity::BeerLambert { i0 } => Zip::from(&mut t.data)
                .and(&mut rho.data)
                .and(&m1x.data)
                .and(&self.y)
                .for_each(|ti, ri, &hx, &yi| {
                    let r = kl_exponential_root(hx + *ri * ib, yi, i0, tau);
                    n.overflow += r.overflow as usize;
                    let g = hx - r.t;
                    *ti = r.t;
                    *ri += beta * g;
                    n.gap_sq += g * g;
                    n.t_sq += r.t * r.t;
                }),
        }
        Zip::from(&mut t.ident)
            .and(&mut rho.ident)
            .and(&m1x.ident)
            .for_each(|ti, ri, &x| {
                let v = (x + *ri * ib).max(0.0);
                let g = x - v;
                *ti = v;
                *ri += beta * g;
                n.gap_sq += g * g;
                n.t_sq += v * v;
            });
        n
    }

    /// `TV(x) + μ·KL(g(Hx) + b; y)`.
    pub fn objective(&self, x: &Array2<f64>) -> f64 {
        let tv = self.d(x).l21_norm();
        let lambda = self.model.lambda_from_projection(&self.h(x));
        let kl = Zip::from(&lambda).and(&self.y).fold(0.0, |acc, &l, &y| acc + kl_term(l, y));
        tv + self.config.mu * kl
    }

    pub fn solve(&self) -> Result<SolveResult> {
        self.solve_from(self.initial_state())
    }

    #[doc(hidden)]
    pub fn solve_from(&self, mut state: SolverState) -> Result<SolveResult> {
        let cfg = &self.config;
        let mut m1x = self.apply_m1(&state.x);
        let mut deltas: Vec<f64> = Vec::with_capacity(cfg.max_iter.min(1 << 16));
        let mut trace = Vec::new();
        let mut overflow_count = 0;
        let mut residual = f64::NAN;
        let mut converged = false;
        if cfg.record_trace {
            trace.push(IterationRecord {
                iter: 0,
                delta_x: f64::NAN,
                primal_residual: 0.0,
                objective: self.objective(&state.t.ident),
            });
        }
        while state.iter < cfg.max_iter {
            let v = self.v_of(&state);
            let (x_new, hx_new) = match cfg.x_update {
                XUpdate::ExactFft => self.exact_solve(&v)?,
                XUpdate::Linearized => {
                    let x = self.linearized_from(&state.x, &m1x, &v)?;
                    let hx = self.h(&x);
                    (x, hx)
                }
            };
            drop(v);
            let prev = norm(&state.x);
            let step = Zip::from(&x_new).and(&state.x).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b)).sqrt();
            let delta = if prev > 0.0 { step / prev } else if step == 0.0 { 0.0 } else { f64::INFINITY };

            self.grad.apply_into(&x_new, &mut m1x.grad).expect("image shape checked at construction");
            m1x.data = hx_new;
            m1x.ident.assign(&x_new);
            let norms = self.t_dual_step(&m1x, &mut state.rho, &mut state.t);
            overflow_count += norms.overflow;
            let tn = norms.t_sq.sqrt();
            let gap = norms.gap_sq.sqrt();
            residual = if tn > 0.0 { gap / tn } else { gap };

            state.x = x_new;
            state.iter += 1;
            state.delta_x = delta;

            if cfg.record_trace {
                trace.push(IterationRecord {
                    iter: state.iter,
                    delta_x: delta,
                    primal_residual: residual,
                    objective: self.objective(&state.t.ident),
                });
            }
            if !delta.is_finite() && prev > 0.0 || delta.is_nan() || !residual.is_finite() {
                return Err(Error::Diverged { beta: cfg.beta });
            }
            deltas.push(delta);
            if diverging(&deltas) {
                return Err(Error::Diverged { beta: cfg.beta });
            }
            // the first x-step only reproduces x⁰ since t⁰ = M₁x⁰ and ρ⁰ = 0
            if state.iter > 1 && delta < cfg.tol {
                converged = true;
                break;
            }
        }
        Ok(SolveResult {
            x_star: state.t.ident,
            iterations: state.iter,
            converged,
            final_delta_x: state.delta_x,
            final_constraint_residual: residual,
            trace,
            overflow_count,
            beta: cfg.beta,
            eta: self.eta,
        })
    }
}

/// Sustained growth: the median `δ` of each of the last two windows exceeds
/// ten times the median of the window before it. A one-off jump in `δ` (an
/// active-set switch) lifts only one window.
fn diverging(deltas: &[f64]) -> bool {
    let n = deltas.len();
    if n < 3 * DIVERGENCE_WINDOW {
        return false;
    }
    let median = |k: usize| {
        let mut w = deltas[n - k * DIVERGENCE_WINDOW..n - (k - 1) * DIVERGENCE_WINDOW].to_vec();
        w.sort_by(f64::total_cmp);
        w[DIVERGENCE_WINDOW / 2]
    };
    let (m1, m2, m3) = (median(1), median(2), median(3));
    m1 > DIVERGENCE_FACTOR * m2 && m2 > DIVERGENCE_FACTOR * m3
}

/// Runs ADMM from the default initialization.
pub fn solve(model: &ForwardModel, y: &Array2<u64>, config: SolverConfig) -> Result<SolveResult> {
    AdmmSolver::new(model, y, config)?.solve()
}
