//! μ-grid evaluation and the PWP, ADP and Monte-Carlo discrepancy selectors.

use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;

use crate::admm::{default_beta, default_max_iter, solve, SolverConfig, XUpdate, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::metrics::{snr, ssim, SsimConfig};
use crate::poisson::{kl_divergence, mc_expected_kl, standardize, ForwardModel};
use crate::rng::mc_stream;
use crate::whiteness::whiteness_measure_within;

pub const DEFAULT_GRID_POINTS: usize = 30;
pub const DEFAULT_MC_SAMPLES: usize = 100;
/// Floor applied to nonpositive entries of `λ*(μ)`.
pub const LAMBDA_FLOOR: f64 = 1e-12;
/// Relative μ tolerance of the ADP bisection refinement.
pub const ADP_REFINE_TOL: f64 = 1e-2;

/// Strictly increasing positive μ values.
#[derive(Debug, Clone, PartialEq)]
pub struct MuGrid {
    values: Vec<f64>,
}

impl MuGrid {
    /// Sorts the values; duplicates and nonpositive entries are rejected.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("mu grid is empty"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("mu values must be positive and finite, got {v}")));
        }
        values.sort_by(f64::total_cmp);
        if values.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("mu grid has duplicate values"));
        }
        Ok(Self { values })
    }

    /// `count` log-spaced values from `min` to `max` inclusive.
    pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("grid count must be at least 1"));
        }
        if !(min > 0.0) || !(max >= min) || !max.is_finite() {
            return Err(Error::invalid(format!("bad grid range [{min}, {max}]")));
        }
        if count == 1 {
            return Self::new(vec![min]);
        }
        if max == min {
            return Err(Error::invalid("grid range is a single point but count > 1"));
        }
        let (a, b) = (min.ln(), max.ln());
        let step = (b - a) / (count - 1) as f64;
        let mut values: Vec<f64> = (0..count).map(|i| (a + step * i as f64).exp()).collect();
        values[0] = min;
        values[count - 1] = max;
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Solver and scoring settings shared by every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    /// Fixed penalty; `None` uses [`default_beta`].
    pub beta: Option<f64>,
    pub tol: f64,
    /// `None` uses [`default_max_iter`].
    pub max_iter: Option<usize>,
    pub x_update: XUpdate,
    pub mc_samples: usize,
    /// Seed of the Monte-Carlo streams.
    pub seed: u64,
    /// Lag radius for `W`; `None` uses every lag.
    pub whiteness_radius: Option<usize>,
    pub ssim: SsimConfig,
}

impl EvalSettings {
    pub fn new(x_update: XUpdate, seed: u64) -> Self {
        Self {
            beta: None,
            tol: DEFAULT_TOL,
            max_iter: None,
            x_update,
            mc_samples: DEFAULT_MC_SAMPLES,
            seed,
            whiteness_radius: None,
            ssim: SsimConfig::default(),
        }
    }

    pub fn beta_for(&self, model: &ForwardModel, mu: f64) -> f64 {
        self.beta.unwrap_or_else(|| default_beta(model.nonlinearity(), mu))
    }

    pub fn solver_config(&self, model: &ForwardModel, mu: f64) -> SolverConfig {
        let mut cfg = SolverConfig::new(mu, self.beta_for(model, mu), self.x_update);
        cfg.tol = self.tol;
        cfg.max_iter = self.max_iter.unwrap_or_else(|| default_max_iter(model.nonlinearity().kind()));
        cfg
    }
}

/// Ground truth for quality scores. The reconstruction is divided by
/// `scale` before comparison.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub image: &'a Array2<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRecord {
    pub mu: f64,
    /// Position in the sorted grid; keys the Monte-Carlo stream.
    pub index: usize,
    pub x_star: Array2<f64>,
    pub w: f64,
    pub d: f64,
    pub mc_delta: f64,
    pub snr: Option<f64>,
    pub ssim: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta_x: f64,
    pub residual: f64,
    pub beta: f64,
    /// Entries of `λ*` raised to [`LAMBDA_FLOOR`].
    pub clamped: usize,
    pub overflow_count: usize,
}

/// Solves at `mu` and scores the result.
pub fn evaluate_mu(
    index: usize,
    mu: f64,
    model: &ForwardModel,
    y: &Array2<u64>,
    settings: &EvalSettings,
    truth: Option<Truth<'_>>,
) -> Result<SelectionRecord> {
    let cfg = settings.solver_config(model, mu);
    let res = solve(model, y, cfg)?;
    let mut rec = score_point(index, mu, res.x_star, model, y, settings, truth)?;
    rec.iterations = res.iterations;
    rec.converged = res.converged;
    rec.final_delta_x = res.final_delta_x;
    rec.residual = res.final_constraint_residual;
    rec.beta = res.beta;
    rec.overflow_count = res.overflow_count;
    Ok(rec)
}

/// Scores a given reconstruction without running the solver. Solver
/// diagnostics are left at their neutral values.
pub fn score_point(
    index: usize,
    mu: f64,
    x_star: Array2<f64>,
    model: &ForwardModel,
    y: &Array2<u64>,
    settings: &EvalSettings,
    truth: Option<Truth<'_>>,
) -> Result<SelectionRecord> {
    let mut lambda = model.lambda(&x_star)?;
    let mut clamped = 0;
    lambda.mapv_inplace(|l| {
        if l > 0.0 {
            l
        } else {
            clamped += 1;
            LAMBDA_FLOOR
        }
    });
    let z = standardize(y.view(), lambda.view())?;
    let w = whiteness_measure_within(z.values(), settings.whiteness_radius)?;
    let d = kl_divergence(lambda.view(), y.view())?;
    let mc_delta = mc_expected_kl(lambda.view(), settings.mc_samples, settings.seed, mc_stream(index))?;
    let (snr_v, ssim_v) = match truth {
        Some(t) => {
            let scaled = x_star.mapv(|v| v / t.scale);
            (Some(snr(&scaled, t.image)?), Some(ssim(&scaled, t.image, &settings.ssim)?))
        }
        None => (None, None),
    };
    Ok(SelectionRecord {
        mu,
        index,
        x_star,
        w,
        d,
        mc_delta,
        snr: snr_v,
        ssim: ssim_v,
        iterations: 0,
        converged: true,
        final_delta_x: 0.0,
        residual: 0.0,
        beta: settings.beta_for(model, mu),
        clamped,
        overflow_count: 0,
    })
}

/// Evaluates every grid point. Records come back in grid order regardless
/// of `parallel`.
pub fn sweep_grid(
    grid: &MuGrid,
    model: &ForwardModel,
    y: &Array2<u64>,
    settings: &EvalSettings,
    truth: Option<Truth<'_>>,
    parallel: bool,
) -> Result<Vec<SelectionRecord>> {
    let eval = |(i, &mu): (usize, &f64)| evaluate_mu(i, mu, model, y, settings, truth);
    if parallel {
        grid.values().par_iter().enumerate().map(eval).collect()
    } else {
        grid.values().iter().enumerate().map(eval).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Pwp,
    Adp,
    Mcdp,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Pwp, Strategy::Adp, Strategy::Mcdp];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Pwp => "pwp",
            Strategy::Adp => "adp",
            Strategy::Mcdp => "mcdp",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pwp" => Ok(Strategy::Pwp),
            "adp" => Ok(Strategy::Adp),
            "mcdp" => Ok(Strategy::Mcdp),
            other => Err(Error::invalid(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionWarning {
    /// The discrepancy never crosses its target on the grid.
    NoCrossing,
    /// The whiteness minimum sits on a grid endpoint.
    EndpointMinimum,
}

impl fmt::Display for SelectionWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionWarning::NoCrossing => "discrepancy does not cross its target on the grid",
            SelectionWarning::EndpointMinimum => "whiteness minimum at a grid endpoint; widen the grid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub strategy: Strategy,
    pub mu: f64,
    /// Index into the records the selection was made from.
    pub index: usize,
    pub warning: Option<SelectionWarning>,
}

fn ascending(records: &[SelectionRecord]) -> Result<Vec<usize>> {
    if records.is_empty() {
        return Err(Error::invalid("no grid records to select from"));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].mu.total_cmp(&records[b].mu));
    Ok(order)
}

/// Argmin of `score` over μ; ties go to the larger μ.
fn argmin_by(records: &[SelectionRecord], order: &[usize], score: impl Fn(&SelectionRecord) -> f64) -> usize {
    let mut best = order[0];
    for &i in order {
        if score(&records[i]) <= score(&records[best]) {
            best = i;
        }
    }
    best
}

/// μ minimizing the whiteness measure.
pub fn select_pwp(records: &[SelectionRecord]) -> Result<Selection> {
    let order = ascending(records)?;
    let best = argmin_by(records, &order, |r| r.w);
    let at_end = order.len() > 1 && (best == order[0] || best == order[order.len() - 1]);
    Ok(Selection {
        strategy: Strategy::Pwp,
        mu: records[best].mu,
        index: best,
        warning: at_end.then_some(SelectionWarning::EndpointMinimum),
    })
}

fn select_target(
    records: &[SelectionRecord],
    strategy: Strategy,
    gap: impl Fn(&SelectionRecord) -> f64,
) -> Result<Selection> {
    let order = ascending(records)?;
    let best = argmin_by(records, &order, |r| gap(r).abs());
    let crosses = order.iter().any(|&i| gap(&records[i]) >= 0.0) && order.iter().any(|&i| gap(&records[i]) <= 0.0);
    Ok(Selection {
        strategy,
        mu: records[best].mu,
        index: best,
        warning: (!crosses).then_some(SelectionWarning::NoCrossing),
    })
}

/// μ minimizing `|D(μ) − m/2|`, `m` the number of measurements.
pub fn select_adp(records: &[SelectionRecord], m: usize) -> Result<Selection> {
    let target = m as f64 / 2.0;
    select_target(records, Strategy::Adp, |r| r.d - target)
}

/// μ minimizing `|D(μ) − E[KL(λ*(μ); Y)]|`.
pub fn select_mcdp(records: &[SelectionRecord]) -> Result<Selection> {
    select_target(records, Strategy::Mcdp, |r| r.d - r.mc_delta)
}

/// The three selectors in [`Strategy::ALL`] order.
pub fn select_all(records: &[SelectionRecord], m: usize) -> Result<Vec<Selection>> {
    Ok(vec![select_pwp(records)?, select_adp(records, m)?, select_mcdp(records)?])
}

/// Bisection in `ln μ` on the ADP crossing between the selected grid point
/// and its neighbour on the other side of `m/2`, to relative width
/// [`ADP_REFINE_TOL`]. Returns `None` when the grid has no crossing next to
/// the selection.
pub fn refine_adp(
    records: &[SelectionRecord],
    selection: &Selection,
    model: &ForwardModel,
    y: &Array2<u64>,
    settings: &EvalSettings,
    truth: Option<Truth<'_>>,
) -> Result<Option<SelectionRecord>> {
    let target = model.measurement_shape().0 as f64 * model.measurement_shape().1 as f64 / 2.0;
    let order = ascending(records)?;
    let pos = order
        .iter()
        .position(|&i| i == selection.index)
        .ok_or_else(|| Error::invalid("selection does not belong to these records"))?;
    let sign = |r: &SelectionRecord| (r.d - target).signum();
    let here = &records[order[pos]];
    if here.d == target {
        return Ok(Some(here.clone()));
    }
    let neighbour = [pos.checked_sub(1), Some(pos + 1)]
        .into_iter()
        .flatten()
        .filter_map(|p| order.get(p))
        .map(|&i| &records[i])
        .find(|r| sign(r) != sign(here));
    let Some(other) = neighbour else {
        return Ok(None);
    };
    let (mut lo, mut hi) = if here.mu < other.mu { (here.clone(), other.clone()) } else { (other.clone(), here.clone()) };
    let index = selection.index;
    while hi.mu / lo.mu > 1.0 + ADP_REFINE_TOL {
        let mid = (lo.mu * hi.mu).sqrt();
        let rec = evaluate_mu(index, mid, model, y, settings, truth)?;
        if rec.d == target {
            return Ok(Some(rec));
        }
        if sign(&rec) == sign(&lo) {
            lo = rec;
        } else {
            hi = rec;
        }
    }
    Ok(Some(if (lo.d - target).abs() <= (hi.d - target).abs() { lo } else { hi }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{make_gaussian_kernel, BlurOperator, ForwardOperator};
    use crate::phantom::Phantom;
    use crate::poisson::{sample_poisson, sample_poisson_stream, Nonlinearity};
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};

    fn rec(mu: f64, w: f64, d: f64, mc: f64) -> SelectionRecord {
        SelectionRecord {
            mu,
            index: 0,
            x_star: Array2::zeros((1, 1)),
            w,
            d,
            mc_delta: mc,
            snr: None,
            ssim: None,
            iterations: 1,
            converged: true,
            final_delta_x: 0.0,
            residual: 0.0,
            beta: 1.0,
            clamped: 0,
            overflow_count: 0,
        }
    }

    fn blur_model(n: usize, b: f64) -> ForwardModel {
        let k = make_gaussian_kernel(5, 1.0).unwrap();
        let h: ForwardOperator = BlurOperator::new(k, (n, n)).unwrap().into();
        ForwardModel::with_constant_background(h, Nonlinearity::Identity, b).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(MuGrid::new(vec![]).is_err());
        assert!(MuGrid::new(vec![1.0, 0.0]).is_err());
        assert!(MuGrid::new(vec![1.0, -2.0]).is_err());
        assert!(MuGrid::new(vec![1.0, f64::NAN]).is_err());
        assert!(MuGrid::new(vec![1.0, 1.0]).is_err());
        assert_eq!(MuGrid::new(vec![3.0, 1.0, 2.0]).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert!(MuGrid::log_spaced(0.0, 1.0, 3).is_err());
        assert!(MuGrid::log_spaced(2.0, 1.0, 3).is_err());
        assert!(MuGrid::log_spaced(1.0, 1.0, 3).is_err());
        assert_eq!(MuGrid::log_spaced(5.0, 5.0, 1).unwrap().values(), &[5.0]);
    }

    #[test]
    fn log_spacing() {
        let g = MuGrid::log_spaced(1e-3, 1e3, 7).unwrap();
        assert_eq!(g.len(), 7);
        assert_eq!(g.values()[0], 1e-3);
        assert_eq!(g.values()[6], 1e3);
        for (i, w) in g.values().windows(2).enumerate() {
            assert!((w[1] / w[0] - 10.0).abs() < 1e-12, "{i}");
        }
    }

    #[test]
    fn pwp_examples() {
        assert!(select_pwp(&[]).is_err());
        let one = [rec(0.7, 3.0, 0.0, 0.0)];
        let s = select_pwp(&one).unwrap();
        assert_eq!((s.mu, s.index, s.warning), (0.7, 0, None));

        let ws = [9.0, 4.0, 2.5, 1.5, 2.0, 6.0];
        let rs: Vec<_> = ws.iter().enumerate().map(|(i, &w)| rec(i as f64 + 1.0, w, 0.0, 0.0)).collect();
        let s = select_pwp(&rs).unwrap();
        assert_eq!((s.index, s.warning), (3, None));

        let tie: Vec<_> = [3.0, 1.0, 1.0, 2.0].iter().enumerate().map(|(i, &w)| rec(i as f64 + 1.0, w, 0.0, 0.0)).collect();
        assert_eq!(select_pwp(&tie).unwrap().mu, 3.0);

        let edge: Vec<_> = [1.0, 2.0, 3.0].iter().enumerate().map(|(i, &w)| rec(i as f64 + 1.0, w, 0.0, 0.0)).collect();
        assert_eq!(select_pwp(&edge).unwrap().warning, Some(SelectionWarning::EndpointMinimum));
    }

    #[test]
    fn adp_examples() {
        let m = 100;
        let ds = [200.0, 120.0, 50.0, 20.0];
        let rs: Vec<_> = ds.iter().enumerate().map(|(i, &d)| rec(10f64.powi(i as i32), 2.0, d, 0.0)).collect();
        let s = select_adp(&rs, m).unwrap();
        assert_eq!((s.mu, s.warning), (100.0, None));

        let ds = [200.0, 80.0, 45.0, 20.0];
        let rs: Vec<_> = ds.iter().enumerate().map(|(i, &d)| rec(10f64.powi(i as i32), 2.0, d, 0.0)).collect();
        assert_eq!(select_adp(&rs, m).unwrap().mu, 100.0);

        let ds = [200.0, 55.0, 10.0, 5.0];
        let rs: Vec<_> = ds.iter().enumerate().map(|(i, &d)| rec(10f64.powi(i as i32), 2.0, d, 0.0)).collect();
        assert_eq!(select_adp(&rs, m).unwrap().mu, 10.0);

        let above: Vec<_> = [300.0, 200.0, 90.0].iter().enumerate().map(|(i, &d)| rec(i as f64 + 1.0, 2.0, d, 0.0)).collect();
        let s = select_adp(&above, m).unwrap();
        assert_eq!((s.mu, s.warning), (3.0, Some(SelectionWarning::NoCrossing)));
        let below: Vec<_> = [40.0, 30.0, 20.0].iter().enumerate().map(|(i, &d)| rec(i as f64 + 1.0, 2.0, d, 0.0)).collect();
        let s = select_adp(&below, m).unwrap();
        assert_eq!((s.mu, s.warning), (1.0, Some(SelectionWarning::NoCrossing)));
    }

    #[test]
    fn mcdp_examples() {
        let one = [rec(4.0, 2.0, 10.0, 3.0)];
        let s = select_mcdp(&one).unwrap();
        assert_eq!((s.mu, s.warning), (4.0, Some(SelectionWarning::NoCrossing)));

        // monotone D crossing both a target of m/2 and a lower MC target
        let m = 100;
        let ds = [400.0, 200.0, 100.0, 60.0, 45.0, 40.0];
        let rs: Vec<_> = ds.iter().enumerate().map(|(i, &d)| rec(2f64.powi(i as i32), 2.0, d, 42.0)).collect();
        let adp = select_adp(&rs, m).unwrap();
        let mcdp = select_mcdp(&rs).unwrap();
        assert!(mcdp.mu > adp.mu);

        let all = select_all(&rs, m).unwrap();
        assert_eq!(all.iter().map(|s| s.strategy).collect::<Vec<_>>(), Strategy::ALL.to_vec());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!("whiteness".parse::<Strategy>().is_err());
    }

    proptest! {
        #[test]
        fn pwp_invariant_to_monotone_rescaling(
            ws in prop::collection::vec(1.0f64..50.0, 1..20),
            a in 0.1f64..10.0,
            c in -5.0f64..5.0,
        ) {
            let rs: Vec<_> = ws.iter().enumerate().map(|(i, &w)| rec(i as f64 + 1.0, w, 0.0, 0.0)).collect();
            let scaled: Vec<_> = ws.iter().enumerate().map(|(i, &w)| rec(i as f64 + 1.0, (a * w + c).exp(), 0.0, 0.0)).collect();
            prop_assert_eq!(select_pwp(&rs).unwrap().mu, select_pwp(&scaled).unwrap().mu);
        }

        #[test]
        fn selections_ignore_record_order(
            vals in prop::collection::vec((1.0f64..50.0, 0.0f64..400.0, 0.0f64..200.0), 1..15),
            perm_seed in any::<u64>(),
        ) {
            let rs: Vec<_> = vals.iter().enumerate().map(|(i, &(w, d, mc))| rec(i as f64 + 1.0, w, d, mc)).collect();
            let mut shuffled = rs.clone();
            let mut state = perm_seed;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            let a = select_all(&rs, 100).unwrap();
            let b = select_all(&shuffled, 100).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.mu, y.mu);
                prop_assert_eq!(x.warning, y.warning);
            }
            for s in &a {
                prop_assert!(rs.iter().any(|r| r.mu == s.mu));
            }
        }
    }

    #[test]
    fn truth_oracle_is_white_and_on_discrepancy() {
        let n = 64;
        let kappa = 10.0;
        let model = blur_model(n, 0.002);
        let xbar = Phantom::CellsLike.render((n, n)).unwrap();
        let x = &xbar * kappa;
        let lambda = model.lambda(&x).unwrap();
        let y = sample_poisson(lambda.view(), 7).unwrap();
        let settings = EvalSettings::new(XUpdate::ExactFft, 7);
        let truth = Truth { image: &xbar, scale: kappa };
        let r = score_point(0, 1.0, x.clone(), &model, &y, &settings, Some(truth)).unwrap();
        assert!(r.snr.unwrap().is_infinite());
        assert_eq!(r.ssim.unwrap(), 1.0);
        assert_eq!(r.clamped, 0);

        let trials = 50;
        let mut c = 0.0;
        let mut ds = Vec::new();
        for t in 0..trials {
            let yt = sample_poisson_stream(lambda.view(), 1000 + t, 0).unwrap();
            let z = standardize(yt.view(), lambda.view()).unwrap();
            c += whiteness_measure_within(z.values(), None).unwrap() - 1.0;
            ds.push(kl_divergence(lambda.view(), yt.view()).unwrap());
        }
        c /= trials as f64;
        assert!(r.w >= 1.0 + 0.5 * c && r.w <= 1.0 + 2.0 * c, "W = {}, c = {c}", r.w);

        let mean = ds.iter().sum::<f64>() / trials as f64;
        let sd = (ds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt();
        assert!((r.d - r.mc_delta).abs() <= 3.0 * sd, "D = {}, E = {}, sd = {sd}", r.d, r.mc_delta);
    }

    #[test]
    fn evaluation_is_deterministic_and_order_free() {
        let n = 16;
        let model = blur_model(n, 0.002);
        let xbar = Phantom::CellsLike.render((n, n)).unwrap();
        let lambda = model.lambda(&(&xbar * 5.0)).unwrap();
        let y = sample_poisson(lambda.view(), 3).unwrap();
        let mut settings = EvalSettings::new(XUpdate::ExactFft, 3);
        settings.max_iter = Some(400);
        let truth = Some(Truth { image: &xbar, scale: 5.0 });
        let grid = MuGrid::log_spaced(0.5, 50.0, 5).unwrap();
        let serial = sweep_grid(&grid, &model, &y, &settings, truth, false).unwrap();
        let parallel = sweep_grid(&grid, &model, &y, &settings, truth, true).unwrap();
        assert_eq!(serial, parallel);
        let again = evaluate_mu(2, grid.values()[2], &model, &y, &settings, truth).unwrap();
        assert_eq!(again, serial[2]);

        let mut reversed = grid.values().to_vec();
        reversed.reverse();
        let regrid = MuGrid::new(reversed).unwrap();
        let other = sweep_grid(&regrid, &model, &y, &settings, truth, true).unwrap();
        assert_eq!(select_all(&serial, n * n).unwrap(), select_all(&other, n * n).unwrap());
        for (i, r) in serial.iter().enumerate() {
            assert_eq!(r.index, i);
            assert!(r.w >= 1.0 && r.d >= 0.0);
        }
    }

    #[test]
    fn adp_refinement_narrows_the_bracket() {
        let n = 16;
        let model = blur_model(n, 0.002);
        let xbar = Phantom::CellsLike.render((n, n)).unwrap();
        let lambda = model.lambda(&(&xbar * 10.0)).unwrap();
        let y = sample_poisson(lambda.view(), 11).unwrap();
        let mut settings = EvalSettings::new(XUpdate::ExactFft, 11);
        settings.max_iter = Some(500);
        let grid = MuGrid::log_spaced(0.05, 50.0, 4).unwrap();
        let rs = sweep_grid(&grid, &model, &y, &settings, None, false).unwrap();
        let target = (n * n) as f64 / 2.0;
        let sel = select_adp(&rs, n * n).unwrap();
        assert_eq!(sel.warning, None, "{:?}", rs.iter().map(|r| r.d).collect::<Vec<_>>());
        let refined = refine_adp(&rs, &sel, &model, &y, &settings, None).unwrap().unwrap();
        assert!((refined.d - target).abs() <= (rs[sel.index].d - target).abs());
        let lo = rs.iter().filter(|r| r.mu <= refined.mu).map(|r| r.mu).fold(0.0, f64::max);
        let hi = rs.iter().filter(|r| r.mu >= refined.mu).map(|r| r.mu).fold(f64::INFINITY, f64::min);
        assert!(lo > 0.0 && hi.is_finite());
    }
}
