//! C ABI over `pwp-core`.
//!
//! Every entry point returns a [`PwpStatus`]. On failure the message is kept
//! per thread and read back with [`pwp_last_error`]. Handles are opaque and
//! released with the matching `*_free` function; passing null to a free
//! function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ndarray::Array2;
use pwp_core::admm::solve;
use pwp_core::experiment::{sweep_observation, ExperimentConfig, SeedSweep};
use pwp_core::poisson::{sample_poisson, ForwardModel};
use pwp_core::selection::Strategy;
use pwp_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PwpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Numerical = 4,
    Unsupported = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PwpStrategy {
    Pwp = 0,
    Adp = 1,
    Mcdp = 2,
}

impl From<PwpStrategy> for Strategy {
    fn from(s: PwpStrategy) -> Self {
        match s {
            PwpStrategy::Pwp => Strategy::Pwp,
            PwpStrategy::Adp => Strategy::Adp,
            PwpStrategy::Mcdp => Strategy::Mcdp,
        }
    }
}

/// Solver diagnostics for one μ.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PwpSolveInfo {
    pub iterations: usize,
    pub converged: bool,
    pub final_delta_x: f64,
    pub residual: f64,
    pub beta: f64,
}

/// One grid point of a sweep. `snr` and `ssim` are NaN without a truth.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PwpRecord {
    pub mu: f64,
    pub whiteness: f64,
    pub discrepancy: f64,
    pub mc_delta: f64,
    pub snr: f64,
    pub ssim: f64,
    pub iterations: usize,
    pub converged: bool,
    pub beta: f64,
}

/// Experiment configuration.
pub struct PwpConfig {
    inner: ExperimentConfig,
}

/// A forward model, its phantom and one observation.
pub struct PwpProblem {
    model: ForwardModel,
    truth: Array2<f64>,
    counts: Array2<u64>,
    seed: u64,
}

/// Result of solving over a μ grid.
pub struct PwpSweep {
    inner: SeedSweep,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PwpStatus {
    match e {
        Error::InvalidArgument(_) => PwpStatus::InvalidArgument,
        Error::Config(_) => PwpStatus::InvalidConfig,
        Error::Unsupported(_) => PwpStatus::Unsupported,
        Error::DegenerateLambda { .. } | Error::NumericalDomain(_) | Error::Diverged { .. } => PwpStatus::Numerical,
        Error::Io { .. } | Error::Parse { .. } => PwpStatus::Io,
    }
}

struct Fail(PwpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type FfiResult = Result<(), Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> PwpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PwpStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PwpStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(PwpStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn as_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(PwpStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> FfiResult {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_into(src: &[f64], dst: *mut f64, len: usize) -> FfiResult {
    if dst.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err(Fail(PwpStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pwp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn pwp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses `key = value` text. An empty string yields the defaults.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pwp_config_parse(text: *const c_char, out: *mut *mut PwpConfig) -> PwpStatus {
    guard(|| {
        let inner = ExperimentConfig::parse(as_str(text, "text")?)?;
        write_out(out, PwpConfig { inner })
    })
}

/// Overrides one key.
///
/// # Safety
/// `config` must come from [`pwp_config_parse`]; `key` and `value` must be
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pwp_config_set(config: *mut PwpConfig, key: *const c_char, value: *const c_char) -> PwpStatus {
    guard(|| {
        let cfg = borrow_mut(config, "config")?;
        cfg.inner = cfg.inner.with(as_str(key, "key")?, as_str(value, "value")?)?;
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`pwp_config_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pwp_config_free(config: *mut PwpConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Builds the model and phantom described by `config` and draws one
/// observation with `seed`.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pwp_problem_simulate(config: *const PwpConfig, seed: u64, out: *mut *mut PwpProblem) -> PwpStatus {
    guard(|| {
        let cfg = &borrow(config, "config")?.inner;
        let model = cfg.build_model()?;
        let truth = cfg.truth()?;
        let lambda = model.lambda(&(&truth * cfg.scale()))?;
        let counts = sample_poisson(lambda.view(), seed)?;
        write_out(out, PwpProblem { model, truth, counts, seed })
    })
}

/// Builds the model described by `config` around caller-supplied counts in
/// row-major order. `seed` keys the Monte-Carlo streams.
///
/// # Safety
/// `counts` must point to `rows * cols` values.
#[no_mangle]
pub unsafe extern "C" fn pwp_problem_from_counts(
    config: *const PwpConfig,
    counts: *const u64,
    rows: usize,
    cols: usize,
    seed: u64,
    out: *mut *mut PwpProblem,
) -> PwpStatus {
    guard(|| {
        let cfg = &borrow(config, "config")?.inner;
        if counts.is_null() {
            return Err(null("counts"));
        }
        let model = cfg.build_model()?;
        let (mr, mc) = model.measurement_shape();
        if (rows, cols) != (mr, mc) {
            return Err(Fail(
                PwpStatus::InvalidArgument,
                format!("counts are {rows}x{cols}, model measures {mr}x{mc}"),
            ));
        }
        let data = std::slice::from_raw_parts(counts, rows * cols).to_vec();
        let counts = Array2::from_shape_vec((rows, cols), data).map_err(|e| Fail(PwpStatus::InvalidArgument, e.to_string()))?;
        let truth = cfg.truth()?;
        write_out(out, PwpProblem { model, truth, counts, seed })
    })
}

/// # Safety
/// `problem` must come from a `pwp_problem_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn pwp_problem_free(problem: *mut PwpProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pwp_problem_image_shape(problem: *const PwpProblem, rows: *mut usize, cols: *mut usize) -> PwpStatus {
    guard(|| {
        let p = borrow(problem, "problem")?;
        let (r, c) = p.model.image_shape();
        *borrow_mut(rows, "rows")? = r;
        *borrow_mut(cols, "cols")? = c;
        Ok(())
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pwp_problem_measurement_shape(
    problem: *const PwpProblem,
    rows: *mut usize,
    cols: *mut usize,
) -> PwpStatus {
    guard(|| {
        let p = borrow(problem, "problem")?;
        let (r, c) = p.model.measurement_shape();
        *borrow_mut(rows, "rows")? = r;
        *borrow_mut(cols, "cols")? = c;
        Ok(())
    })
}

/// Copies the observed counts, row-major.
///
/// # Safety
/// `buffer` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pwp_problem_counts(problem: *const PwpProblem, buffer: *mut u64, len: usize) -> PwpStatus {
    guard(|| {
        let p = borrow(problem, "problem")?;
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        let n = p.counts.len();
        if len < n {
            return Err(Fail(PwpStatus::BufferTooSmall, format!("buffer holds {len} values, need {n}")));
        }
        for (i, v) in p.counts.iter().enumerate() {
            *buffer.add(i) = *v;
        }
        Ok(())
    })
}

/// Solves at one `mu` with the solver settings of `config` and writes the
/// reconstruction, row-major. `info` may be null.
///
/// # Safety
/// `x_out` must hold `len` values; `info` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn pwp_solve(
    problem: *const PwpProblem,
    config: *const PwpConfig,
    mu: f64,
    x_out: *mut f64,
    len: usize,
    info: *mut PwpSolveInfo,
) -> PwpStatus {
    guard(|| {
        let p = borrow(problem, "problem")?;
        let cfg = &borrow(config, "config")?.inner;
        let settings = cfg.eval_settings(p.seed);
        let res = solve(&p.model, &p.counts, settings.solver_config(&p.model, mu))?;
        copy_into(&flat(&res.x_star), x_out, len)?;
        if let Some(info) = info.as_mut() {
            *info = PwpSolveInfo {
                iterations: res.iterations,
                converged: res.converged,
                final_delta_x: res.final_delta_x,
                residual: res.final_constraint_residual,
                beta: res.beta,
            };
        }
        Ok(())
    })
}

/// Solves over the grid of `config` and applies every selector. Set
/// `parallel` to spread grid points over threads.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pwp_sweep_run(
    problem: *const PwpProblem,
    config: *const PwpConfig,
    parallel: bool,
    out: *mut *mut PwpSweep,
) -> PwpStatus {
    guard(|| {
        let p = borrow(problem, "problem")?;
        let cfg = &borrow(config, "config")?.inner;
        let inner = sweep_observation(cfg, &p.model, &p.truth, p.seed, &p.counts, parallel)?;
        write_out(out, PwpSweep { inner })
    })
}

/// # Safety
/// `sweep` must come from [`pwp_sweep_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pwp_sweep_free(sweep: *mut PwpSweep) {
    if !sweep.is_null() {
        drop(Box::from_raw(sweep));
    }
}

/// Number of grid points, or 0 for a null handle.
///
/// # Safety
/// `sweep` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn pwp_sweep_len(sweep: *const PwpSweep) -> usize {
    sweep.as_ref().map_or(0, |s| s.inner.records.len())
}

unsafe fn record_at<'a>(sweep: *const PwpSweep, index: usize) -> Result<&'a pwp_core::selection::SelectionRecord, Fail> {
    let s = borrow(sweep, "sweep")?;
    s.inner.records.get(index).ok_or_else(|| {
        Fail(PwpStatus::InvalidArgument, format!("index {index} out of range for {} records", s.inner.records.len()))
    })
}

/// # Safety
/// `sweep` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pwp_sweep_record(sweep: *const PwpSweep, index: usize, out: *mut PwpRecord) -> PwpStatus {
    guard(|| {
        let r = record_at(sweep, index)?;
        *borrow_mut(out, "out")? = PwpRecord {
            mu: r.mu,
            whiteness: r.w,
            discrepancy: r.d,
            mc_delta: r.mc_delta,
            snr: r.snr.unwrap_or(f64::NAN),
            ssim: r.ssim.unwrap_or(f64::NAN),
            iterations: r.iterations,
            converged: r.converged,
            beta: r.beta,
        };
        Ok(())
    })
}

/// Copies the reconstruction at grid point `index`, row-major.
///
/// # Safety
/// `buffer` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn pwp_sweep_image(sweep: *const PwpSweep, index: usize, buffer: *mut f64, len: usize) -> PwpStatus {
    guard(|| copy_into(&flat(&record_at(sweep, index)?.x_star), buffer, len))
}

/// Grid index chosen by `strategy`.
///
/// # Safety
/// `sweep` must be live and `index` valid.
#[no_mangle]
pub unsafe extern "C" fn pwp_sweep_selected(sweep: *const PwpSweep, strategy: PwpStrategy, index: *mut usize) -> PwpStatus {
    guard(|| {
        let s = borrow(sweep, "sweep")?;
        let st: Strategy = strategy.into();
        let sel = s
            .inner
            .selections
            .iter()
            .find(|x| x.strategy == st)
            .ok_or_else(|| Fail(PwpStatus::InvalidArgument, format!("no selection for {st}")))?;
        *borrow_mut(index, "index")? = sel.index;
        Ok(())
    })
}
