//! Experiment driver: configuration, data generation, μ sweeps and reports.
//!
//! An output directory holds `config.txt`, `manifest.txt`, the ground truth,
//! and one `seed-<s>/` directory per seed with the observation and, after a
//! sweep, `sweep.csv`, the curve files and the selected reconstructions.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use crate::admm::{default_max_iter, XUpdate, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::io::{format_g17, load_observation, load_text, save_observation, save_pgm16, save_raw_f64, save_text};
use crate::operators::{build_radon, make_gaussian_kernel, Beam, BlurOperator, ForwardOperator, RadonGeometry};
use crate::phantom::Phantom;
use crate::poisson::{sample_poisson, standardize, ForwardModel, ModelSummary, Nonlinearity, Observation};
use crate::rng::GENERATOR_NAME;
use crate::selection::{
    refine_adp, select_all, sweep_grid, EvalSettings, MuGrid, Selection, SelectionRecord, SelectionWarning, Strategy,
    Truth, DEFAULT_GRID_POINTS, DEFAULT_MC_SAMPLES,
};
use crate::whiteness::sample_autocorrelation;

pub const SWEEP_CSV_MAGIC: &str = "# pwp sweep v1";
pub const SWEEP_COLUMNS: &str = "mu,W,D,mc_delta,snr,ssim,iterations,converged,final_delta_x,residual,beta,clamped";
const SELECTIONS_MARKER: &str = "# selections";
const SELECTION_COLUMNS: &str = "strategy,mu,index,warning";

pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SWEEP_MANIFEST_FILE: &str = "sweep_manifest.txt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const REPORT_FILE: &str = "report.md";

pub const DEFAULT_BACKGROUND: f64 = 2e-3;
pub const DEFAULT_IMAGE_PIXEL_MM: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Deblurring with a periodic Gaussian blur.
    Ir,
    /// Transmission tomography with the Beer–Lambert model.
    Ct,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Ir => "ir",
            Task::Ct => "ct",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ir" => Ok(Task::Ir),
            "ct" => Ok(Task::Ct),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// `count` log-spaced μ values on `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Ir => GridSpec { min: 0.05, max: 200.0, count: DEFAULT_GRID_POINTS },
            Task::Ct => GridSpec { min: 1e-3, max: 10.0, count: DEFAULT_GRID_POINTS },
        }
    }

    pub fn build(&self) -> Result<MuGrid> {
        MuGrid::log_spaced(self.min, self.max, self.count).map_err(|e| Error::Config(format!("grid: {e}")))
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", format_g17(self.min), format_g17(self.max), self.count)
    }
}

impl FromStr for GridSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::Config(format!("grid must be `min,max,count`, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(GridSpec {
            min: parts[0].parse().map_err(|_| bad())?,
            max: parts[1].parse().map_err(|_| bad())?,
            count: parts[2].parse().map_err(|_| bad())?,
        })
    }
}

/// Every configuration key, in the order they are written.
pub const CONFIG_KEYS: &[&str] = &[
    "task",
    "phantom",
    "size",
    "counts",
    "background",
    "blur_band",
    "blur_sigma",
    "beam",
    "angles",
    "detectors",
    "detector_size",
    "pixel_size",
    "source_to_center",
    "center_to_detector",
    "grid",
    "beta",
    "tol",
    "max_iter",
    "x_update",
    "mc_samples",
    "whiteness_radius",
    "adp_refine",
    "seeds",
    "out",
];

/// Keys a sweep may override without regenerating data.
pub const SWEEP_KEYS: &[&str] =
    &["grid", "beta", "tol", "max_iter", "x_update", "mc_samples", "whiteness_radius", "adp_refine"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub phantom: Phantom,
    pub shape: (usize, usize),
    /// κ for restoration, I₀ for tomography.
    pub counts: f64,
    pub background: f64,
    pub blur_band: usize,
    pub blur_sigma: f64,
    pub beam: Beam,
    pub angles: usize,
    pub detectors: usize,
    pub detector_size: f64,
    pub pixel_size: f64,
    pub source_to_center: f64,
    pub center_to_detector: f64,
    pub grid: GridSpec,
    pub beta: Option<f64>,
    pub tol: f64,
    pub max_iter: Option<usize>,
    pub x_update: Option<XUpdate>,
    pub mc_samples: usize,
    pub whiteness_radius: Option<usize>,
    pub adp_refine: bool,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

fn cfg_err(key: &str, value: &str) -> Error {
    Error::Config(format!("bad value `{value}` for `{key}`"))
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| cfg_err(key, value))
}

fn auto_or<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_as(key, value).map(Some)
    }
}

fn parse_shape(value: &str) -> Result<(usize, usize)> {
    let (r, c) = match value.split_once('x') {
        Some((r, c)) => (parse_as("size", r)?, parse_as("size", c)?),
        None => {
            let n = parse_as("size", value)?;
            (n, n)
        }
    };
    if r == 0 || c == 0 {
        return Err(cfg_err("size", value));
    }
    Ok((r, c))
}

/// Parses `key = value` lines; `#` starts a comment. Unknown or repeated
/// keys are errors.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        if !CONFIG_KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", n + 1)));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(map)
}

impl ExperimentConfig {
    /// Builds a configuration from `key → value` pairs; missing keys take
    /// task-dependent defaults.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = pairs.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        let get = |k: &str| pairs.get(k).map(String::as_str);
        let task: Task = get("task").unwrap_or("ir").parse()?;
        let default_phantom = match task {
            Task::Ir => "cells-like",
            Task::Ct => "shepp-logan",
        };
        let phantom: Phantom = get("phantom").unwrap_or(default_phantom).parse().map_err(|_| cfg_err("phantom", ""))?;
        let shape = parse_shape(get("size").unwrap_or("64"))?;
        let default_counts = match task {
            Task::Ir => "10",
            Task::Ct => "1000",
        };
        let counts: f64 = parse_as("counts", get("counts").unwrap_or(default_counts))?;
        let background = match get("background") {
            Some(v) => parse_as("background", v)?,
            None if task == Task::Ir => DEFAULT_BACKGROUND,
            None => 0.0,
        };
        let pixel_size = match get("pixel_size") {
            Some(v) => parse_as("pixel_size", v)?,
            None => DEFAULT_IMAGE_PIXEL_MM,
        };
        let beam = match get("beam").unwrap_or("parallel") {
            "parallel" => Beam::Parallel,
            "fan" => Beam::Fan,
            other => return Err(cfg_err("beam", other)),
        };
        let detectors: usize = match get("detectors") {
            Some(v) => parse_as("detectors", v)?,
            None => ((1.48 * shape.0.max(shape.1) as f64).ceil() as usize) | 1,
        };
        let cfg = ExperimentConfig {
            task,
            phantom,
            shape,
            counts,
            background,
            blur_band: parse_as("blur_band", get("blur_band").unwrap_or("5"))?,
            blur_sigma: parse_as("blur_sigma", get("blur_sigma").unwrap_or("1"))?,
            beam,
            angles: parse_as("angles", get("angles").unwrap_or("60"))?,
            detectors,
            detector_size: match get("detector_size") {
                Some(v) => parse_as("detector_size", v)?,
                None => pixel_size,
            },
            pixel_size,
            source_to_center: parse_as("source_to_center", get("source_to_center").unwrap_or("500"))?,
            center_to_detector: parse_as("center_to_detector", get("center_to_detector").unwrap_or("500"))?,
            grid: match get("grid") {
                Some(v) => v.parse()?,
                None => GridSpec::default_for(task),
            },
            beta: auto_or("beta", get("beta").unwrap_or("auto"))?,
            tol: parse_as("tol", get("tol").unwrap_or(&DEFAULT_TOL.to_string()))?,
            max_iter: auto_or("max_iter", get("max_iter").unwrap_or("auto"))?,
            x_update: auto_or("x_update", get("x_update").unwrap_or("auto"))?,
            mc_samples: parse_as("mc_samples", get("mc_samples").unwrap_or(&DEFAULT_MC_SAMPLES.to_string()))?,
            whiteness_radius: match get("whiteness_radius").unwrap_or("all") {
                "all" => None,
                v => Some(parse_as("whiteness_radius", v)?),
            },
            adp_refine: parse_as("adp_refine", get("adp_refine").unwrap_or("false"))?,
            seeds: get("seeds")
                .unwrap_or("1")
                .split(',')
                .map(|s| parse_as::<u64>("seeds", s))
                .collect::<Result<_>>()?,
            out: PathBuf::from(get("out").unwrap_or("pwp-out")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_config_text(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&load_text(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.task {
            Task::Ir if !(self.counts >= 0.0) || !self.counts.is_finite() => {
                return bad(format!("counts must be nonnegative, got {}", self.counts))
            }
            Task::Ct if !(self.counts > 0.0) || !self.counts.is_finite() => {
                return bad(format!("I0 must be positive, got {}", self.counts))
            }
            _ => {}
        }
        if !(self.background >= 0.0) || !self.background.is_finite() {
            return bad(format!("background must be nonnegative, got {}", self.background));
        }
        if self.task == Task::Ct && self.background != 0.0 {
            return bad("tomography requires background = 0".into());
        }
        if self.task == Task::Ir && self.counts == 0.0 && self.background == 0.0 {
            return bad("counts = 0 needs a positive background".into());
        }
        if self.task == Task::Ct && self.x_update == Some(XUpdate::ExactFft) {
            return bad("tomography needs x_update = linearized".into());
        }
        if self.blur_band == 0 || self.blur_band.is_multiple_of(2) || !(self.blur_sigma > 0.0) {
            return bad("blur_band must be odd and blur_sigma positive".into());
        }
        self.grid.build()?;
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1".into());
        }
        if !(self.tol > 0.0) || self.beta.is_some_and(|b| !(b > 0.0)) || self.max_iter == Some(0) {
            return bad("tol, beta and max_iter must be positive".into());
        }
        if self.task == Task::Ct {
            self.geometry()?;
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<RadonGeometry> {
        let g = match self.beam {
            Beam::Parallel => RadonGeometry::parallel(self.angles, self.detectors, self.detector_size, self.pixel_size),
            Beam::Fan => RadonGeometry::fan(
                self.angles,
                self.detectors,
                self.detector_size,
                self.pixel_size,
                self.source_to_center,
                self.center_to_detector,
            ),
        };
        g.map_err(|e| Error::Config(format!("geometry: {e}")))
    }

    pub fn x_update_resolved(&self) -> XUpdate {
        self.x_update.unwrap_or(match self.task {
            Task::Ir => XUpdate::ExactFft,
            Task::Ct => XUpdate::Linearized,
        })
    }

    pub fn build_model(&self) -> Result<ForwardModel> {
        match self.task {
            Task::Ir => {
                let k = make_gaussian_kernel(self.blur_band, self.blur_sigma)?;
                let h: ForwardOperator = BlurOperator::new(k, self.shape)?.into();
                ForwardModel::with_constant_background(h, Nonlinearity::Identity, self.background)
            }
            Task::Ct => {
                let h: ForwardOperator = build_radon(&self.geometry()?, self.shape)?.into();
                ForwardModel::with_constant_background(h, Nonlinearity::BeerLambert { i0: self.counts }, 0.0)
            }
        }
    }

    /// The phantom in `[0, 1]`.
    pub fn truth(&self) -> Result<Array2<f64>> {
        self.phantom.render(self.shape).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(format!("phantom: {m}")),
            other => other,
        })
    }

    /// Factor between the phantom and the image the model acts on.
    pub fn scale(&self) -> f64 {
        match self.task {
            Task::Ir => self.counts,
            Task::Ct => 1.0,
        }
    }

    pub fn eval_settings(&self, seed: u64) -> EvalSettings {
        let mut s = EvalSettings::new(self.x_update_resolved(), seed);
        s.beta = self.beta;
        s.tol = self.tol;
        s.max_iter = self.max_iter;
        s.mc_samples = self.mc_samples;
        s.whiteness_radius = self.whiteness_radius;
        s
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    /// Every key with its resolved value, in [`CONFIG_KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let g = format_g17;
        let opt = |v: Option<String>, none: &str| v.unwrap_or_else(|| none.to_string());
        vec![
            ("task", self.task.to_string()),
            ("phantom", self.phantom.to_string()),
            ("size", format!("{}x{}", self.shape.0, self.shape.1)),
            ("counts", g(self.counts)),
            ("background", g(self.background)),
            ("blur_band", self.blur_band.to_string()),
            ("blur_sigma", g(self.blur_sigma)),
            ("beam", self.beam.to_string()),
            ("angles", self.angles.to_string()),
            ("detectors", self.detectors.to_string()),
            ("detector_size", g(self.detector_size)),
            ("pixel_size", g(self.pixel_size)),
            ("source_to_center", g(self.source_to_center)),
            ("center_to_detector", g(self.center_to_detector)),
            ("grid", self.grid.to_string()),
            ("beta", opt(self.beta.map(g), "auto")),
            ("tol", g(self.tol)),
            ("max_iter", opt(self.max_iter.map(|v| v.to_string()), "auto")),
            ("x_update", opt(self.x_update.map(|v| v.to_string()), "auto")),
            ("mc_samples", self.mc_samples.to_string()),
            ("whiteness_radius", opt(self.whiteness_radius.map(|v| v.to_string()), "all")),
            ("adp_refine", self.adp_refine.to_string()),
            ("seeds", self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")),
            ("out", self.out.display().to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Replaces `key`; the result is revalidated.
    pub fn with(&self, key: &str, value: &str) -> Result<Self> {
        let mut pairs: BTreeMap<String, String> = self.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        pairs.insert(key.to_string(), value.to_string());
        Self::from_pairs(&pairs)
    }
}

fn manifest_text(cfg: &ExperimentConfig, extra: &[(String, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "pwp_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "rng = {GENERATOR_NAME}");
    for (k, v) in cfg.pairs() {
        let _ = writeln!(s, "{k} = {v}");
    }
    for (k, v) in extra {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

/// What [`generate`] produced.
#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub observations: Vec<(u64, Observation)>,
    pub lambda: Array2<f64>,
}

/// Writes the ground truth, `λ̄`, one observation per seed, the resolved
/// configuration and a manifest.
pub fn generate(cfg: &ExperimentConfig) -> Result<GenerateOutcome> {
    let start = Instant::now();
    let model = cfg.build_model()?;
    let truth = cfg.truth()?;
    let lambda = model.lambda(&(&truth * cfg.scale()))?;
    let mut observations = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let counts = sample_poisson(lambda.view(), seed)?;
        let obs = Observation {
            counts,
            model: ModelSummary {
                kind: model.nonlinearity().kind(),
                counts: cfg.counts,
                background: cfg.background,
            },
            seed,
        };
        let dir = cfg.seed_dir(seed);
        save_observation(&dir.join("observation.txt"), &obs)?;
        save_pgm16(&dir.join("observation.pgm"), &obs.counts.mapv(|c| c as f64), None)?;
        observations.push((seed, obs));
    }
    save_pgm16(&cfg.out.join("truth.pgm"), &truth, Some(1.0))?;
    save_raw_f64(&cfg.out.join("truth.f64"), &truth)?;
    save_raw_f64(&cfg.out.join("lambda.f64"), &lambda)?;
    save_text(&cfg.out.join(CONFIG_FILE), &cfg.to_text())?;
    let (mr, mc) = model.measurement_shape();
    let extra = vec![
        ("measurement_shape".to_string(), format!("{mr}x{mc}")),
        ("x_update_resolved".to_string(), cfg.x_update_resolved().to_string()),
        ("max_iter_resolved".to_string(), cfg.max_iter.unwrap_or_else(|| default_max_iter(model.nonlinearity().kind())).to_string()),
        ("beta_rule".to_string(), beta_rule(cfg)),
        ("detector_kind".to_string(), "flat".to_string()),
        ("generate_seconds".to_string(), format!("{:.3}", start.elapsed().as_secs_f64())),
    ];
    save_text(&cfg.out.join(MANIFEST_FILE), &manifest_text(cfg, &extra))?;
    Ok(GenerateOutcome { observations, lambda })
}

fn beta_rule(cfg: &ExperimentConfig) -> String {
    match (cfg.beta, cfg.task) {
        (Some(b), _) => format_g17(b),
        (None, Task::Ir) => "2*sqrt(mu)".into(),
        (None, Task::Ct) => "sqrt(mu*I0)".into(),
    }
}

/// One seed's sweep.
#[derive(Debug, Clone)]
pub struct SeedSweep {
    pub seed: u64,
    pub records: Vec<SelectionRecord>,
    pub selections: Vec<Selection>,
    pub adp_refined: Option<SelectionRecord>,
    pub seconds: f64,
}

impl SeedSweep {
    pub fn selected(&self, strategy: Strategy) -> &SelectionRecord {
        let s = self.selections.iter().find(|s| s.strategy == strategy).expect("all strategies selected");
        &self.records[s.index]
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w: Vec<String> = self
            .selections
            .iter()
            .filter_map(|s| s.warning.map(|w| format!("seed {}: {}: {w}", self.seed, s.strategy)))
            .collect();
        let unconverged = self.records.iter().filter(|r| !r.converged).count();
        if unconverged > 0 {
            w.push(format!("seed {}: {unconverged} grid point(s) hit max_iter", self.seed));
        }
        let clamped: usize = self.records.iter().map(|r| r.clamped).sum();
        if clamped > 0 {
            w.push(format!("seed {}: {clamped} lambda entries clamped to 1e-12", self.seed));
        }
        w
    }
}

/// Runs the sweep for one observation without touching the filesystem.
pub fn sweep_observation(
    cfg: &ExperimentConfig,
    model: &ForwardModel,
    truth: &Array2<f64>,
    seed: u64,
    counts: &Array2<u64>,
    parallel: bool,
) -> Result<SeedSweep> {
    let start = Instant::now();
    let grid = cfg.grid.build()?;
    let settings = cfg.eval_settings(seed);
    let t = (cfg.scale() > 0.0).then_some(Truth { image: truth, scale: cfg.scale() });
    let records = sweep_grid(&grid, model, counts, &settings, t, parallel)?;
    let (mr, mc) = model.measurement_shape();
    let selections = select_all(&records, mr * mc)?;
    let adp_refined = if cfg.adp_refine {
        refine_adp(&records, &selections[1], model, counts, &settings, t)?
    } else {
        None
    };
    Ok(SeedSweep { seed, records, selections, adp_refined, seconds: start.elapsed().as_secs_f64() })
}

fn opt_g(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), format_g17)
}

/// The versioned sweep table followed by the selections footer.
pub fn sweep_csv(s: &SeedSweep) -> String {
    let g = format_g17;
    let mut out = String::new();
    let _ = writeln!(out, "{SWEEP_CSV_MAGIC}");
    let _ = writeln!(out, "{SWEEP_COLUMNS}");
    for r in &s.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            g(r.mu),
            g(r.w),
            g(r.d),
            g(r.mc_delta),
            opt_g(r.snr),
            opt_g(r.ssim),
            r.iterations,
            r.converged,
            g(r.final_delta_x),
            g(r.residual),
            g(r.beta),
            r.clamped
        );
    }
    let _ = writeln!(out, "{SELECTIONS_MARKER}");
    let _ = writeln!(out, "{SELECTION_COLUMNS}");
    for sel in &s.selections {
        let warn = sel.warning.map_or(String::new(), warning_tag);
        let _ = writeln!(out, "{},{},{},{}", sel.strategy, g(sel.mu), sel.index, warn);
    }
    if let Some(r) = &s.adp_refined {
        let _ = writeln!(out, "adp_refined,{},{},", g(r.mu), s.selections[1].index);
    }
    out
}

fn warning_tag(w: SelectionWarning) -> String {
    match w {
        SelectionWarning::NoCrossing => "no_crossing".into(),
        SelectionWarning::EndpointMinimum => "endpoint_minimum".into(),
    }
}

fn write_seed_outputs(cfg: &ExperimentConfig, model: &ForwardModel, counts: &Array2<u64>, s: &SeedSweep) -> Result<()> {
    let dir = cfg.seed_dir(s.seed);
    save_text(&dir.join(SWEEP_FILE), &sweep_csv(s))?;
    let g = format_g17;
    let mut w = String::from("mu,W\n");
    let mut d = String::from("mu,D,mc_delta,target\n");
    let (mr, mc) = model.measurement_shape();
    let target = (mr * mc) as f64 / 2.0;
    for r in &s.records {
        let _ = writeln!(w, "{},{}", g(r.mu), g(r.w));
        let _ = writeln!(d, "{},{},{},{}", g(r.mu), g(r.d), g(r.mc_delta), g(target));
    }
    save_text(&dir.join("whiteness_curve.csv"), &w)?;
    save_text(&dir.join("discrepancy_curve.csv"), &d)?;
    let scale = cfg.scale();
    for strategy in Strategy::ALL {
        let x = &s.selected(strategy).x_star;
        let shown = if scale > 0.0 { x / scale } else { x.clone() };
        save_pgm16(&dir.join(format!("x_{strategy}.pgm")), &shown, Some(1.0))?;
        save_raw_f64(&dir.join(format!("x_{strategy}.f64")), x)?;
    }
    let pwp = s.selected(Strategy::Pwp);
    let mut lambda = model.lambda(&pwp.x_star)?;
    lambda.mapv_inplace(|l| l.max(crate::selection::LAMBDA_FLOOR));
    let z = standardize(counts.view(), lambda.view())?;
    let mut acf = Vec::new();
    sample_autocorrelation(z.values())?.write_csv(&mut acf).map_err(|e| Error::io(dir.join("acf_pwp.csv"), e))?;
    save_text(&dir.join("acf_pwp.csv"), &String::from_utf8(acf).expect("ascii csv"))
}

/// Loads the observations in `cfg.out`, sweeps each seed and writes the
/// per-seed outputs. Seeds and grid points run on the rayon pool when
/// `parallel`; files are written afterwards in seed order.
pub fn sweep(cfg: &ExperimentConfig, parallel: bool) -> Result<Vec<SeedSweep>> {
    let start = Instant::now();
    let model = cfg.build_model()?;
    let truth = cfg.truth()?;
    let mut observations = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let obs = load_observation(&cfg.seed_dir(seed).join("observation.txt"))?;
        if obs.counts.dim() != model.measurement_shape() {
            return Err(Error::Config(format!("seed {seed}: observation shape does not match the configuration")));
        }
        observations.push((seed, obs.counts));
    }
    let run = |(seed, counts): &(u64, Array2<u64>)| sweep_observation(cfg, &model, &truth, *seed, counts, parallel);
    let sweeps: Vec<SeedSweep> = if parallel {
        observations.par_iter().map(run).collect::<Result<_>>()?
    } else {
        observations.iter().map(run).collect::<Result<_>>()?
    };
    for ((_, counts), s) in observations.iter().zip(&sweeps) {
        write_seed_outputs(cfg, &model, counts, s)?;
    }
    let mut extra = vec![
        ("x_update_resolved".to_string(), cfg.x_update_resolved().to_string()),
        ("beta_rule".to_string(), beta_rule(cfg)),
        ("max_iter_resolved".to_string(), cfg.max_iter.unwrap_or_else(|| default_max_iter(model.nonlinearity().kind())).to_string()),
        ("eta".to_string(), linearized_eta(cfg, &model)?),
    ];
    for s in &sweeps {
        extra.push((format!("seed_{}_seconds", s.seed), format!("{:.3}", s.seconds)));
    }
    extra.push(("sweep_seconds".to_string(), format!("{:.3}", start.elapsed().as_secs_f64())));
    save_text(&cfg.out.join(SWEEP_MANIFEST_FILE), &manifest_text(cfg, &extra))?;
    Ok(sweeps)
}

fn linearized_eta(cfg: &ExperimentConfig, model: &ForwardModel) -> Result<String> {
    Ok(match cfg.x_update_resolved() {
        XUpdate::Linearized => format_g17(crate::operators::stacked_norm_sq(model.operator())?),
        XUpdate::ExactFft => "none".to_string(),
    })
}

/// One parsed row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mu: f64,
    pub w: f64,
    pub d: f64,
    pub mc_delta: f64,
    pub snr: f64,
    pub ssim: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_delta_x: f64,
    pub residual: f64,
    pub beta: f64,
    pub clamped: usize,
}

/// `sweep.csv` as written by [`sweep_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// `(strategy, μ*, row index, warning tag)`.
    pub selections: Vec<(Strategy, f64, usize, String)>,
    pub adp_refined: Option<f64>,
}

impl SweepTable {
    pub fn selected(&self, strategy: Strategy) -> Option<&SweepRow> {
        self.selections.iter().find(|s| s.0 == strategy).map(|s| &self.rows[s.2])
    }
}

pub fn parse_sweep_csv(text: &str, path: &Path) -> Result<SweepTable> {
    let perr = |msg: String| Error::Parse { path: path.to_path_buf(), msg };
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_CSV_MAGIC) {
        return Err(perr("missing sweep header".into()));
    }
    if lines.next() != Some(SWEEP_COLUMNS) {
        return Err(perr("unexpected sweep columns".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("bad number `{s}`")));
    let int = |s: &str| s.parse::<usize>().map_err(|_| perr(format!("bad integer `{s}`")));
    let mut rows = Vec::new();
    loop {
        let line = lines.next().ok_or_else(|| perr("missing selections block".into()))?;
        if line == SELECTIONS_MARKER {
            break;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(perr(format!("row has {} fields", f.len())));
        }
        rows.push(SweepRow {
            mu: num(f[0])?,
            w: num(f[1])?,
            d: num(f[2])?,
            mc_delta: num(f[3])?,
            snr: num(f[4])?,
            ssim: num(f[5])?,
            iterations: int(f[6])?,
            converged: f[7].parse().map_err(|_| perr(format!("bad flag `{}`", f[7])))?,
            final_delta_x: num(f[8])?,
            residual: num(f[9])?,
            beta: num(f[10])?,
            clamped: int(f[11])?,
        });
    }
    if lines.next() != Some(SELECTION_COLUMNS) {
        return Err(perr("unexpected selection columns".into()));
    }
    let mut selections = Vec::new();
    let mut adp_refined = None;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(perr(format!("selection has {} fields", f.len())));
        }
        if f[0] == "adp_refined" {
            adp_refined = Some(num(f[1])?);
            continue;
        }
        let strategy: Strategy = f[0].parse().map_err(|_| perr(format!("unknown strategy `{}`", f[0])))?;
        let index = int(f[2])?;
        if index >= rows.len() {
            return Err(perr(format!("selection index {index} out of range")));
        }
        selections.push((strategy, num(f[1])?, index, f[3].to_string()));
    }
    Ok(SweepTable { rows, selections, adp_refined })
}

pub fn load_sweep_csv(path: &Path) -> Result<SweepTable> {
    parse_sweep_csv(&load_text(path)?, path)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cell(v: f64, best: f64) -> String {
    let s = format!("{v:.3}");
    if !v.is_nan() && v == best {
        format!("**{s}**")
    } else {
        s
    }
}

fn bold_row(label: &str, mus: [f64; 3], snrs: [f64; 3], ssims: [f64; 3]) -> String {
    let best_snr = snrs.iter().cloned().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    let best_ssim = ssims.iter().cloned().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    let mut s = format!("| {label} |");
    for k in 0..3 {
        let _ = write!(s, " {} | {} | {} |", short(mus[k]), cell(snrs[k], best_snr), cell(ssims[k], best_ssim));
    }
    s
}

fn short(v: f64) -> String {
    format!("{v:.4e}")
}

/// Per-seed table of each strategy's μ*, SNR and SSIM plus a median row;
/// the best SNR and SSIM of every row are bold, ties included.
pub fn render_report(cfg: &ExperimentConfig, tables: &[(u64, SweepTable)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# {} {} {}x{}, counts = {}\n",
        cfg.task,
        cfg.phantom,
        cfg.shape.0,
        cfg.shape.1,
        format_g17(cfg.counts)
    );
    let mut header = String::from("| seed |");
    let mut rule = String::from("|---|");
    for st in Strategy::ALL {
        let _ = write!(header, " {st} μ | {st} SNR | {st} SSIM |");
        rule.push_str("---|---|---|");
    }
    let _ = writeln!(s, "{header}\n{rule}");
    let mut cols: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; 3];
    let mut mu_cols: Vec<Vec<f64>> = vec![Vec::new(); 3];
    for (seed, t) in tables {
        let mut mus = [f64::NAN; 3];
        let mut snrs = [f64::NAN; 3];
        let mut ssims = [f64::NAN; 3];
        for (k, st) in Strategy::ALL.iter().enumerate() {
            if let Some(r) = t.selected(*st) {
                mus[k] = r.mu;
                snrs[k] = r.snr;
                ssims[k] = r.ssim;
                cols[k][0].push(r.snr);
                cols[k][1].push(r.ssim);
                mu_cols[k].push(r.mu);
            }
        }
        let _ = writeln!(s, "{}", bold_row(&seed.to_string(), mus, snrs, ssims));
    }
    if tables.len() > 1 {
        let mut mus = [0.0; 3];
        let mut snrs = [0.0; 3];
        let mut ssims = [0.0; 3];
        for k in 0..3 {
            mus[k] = median(&mut mu_cols[k]);
            snrs[k] = median(&mut cols[k][0]);
            ssims[k] = median(&mut cols[k][1]);
        }
        let _ = writeln!(s, "{}", bold_row("median", mus, snrs, ssims));
    }
    let mut notes = Vec::new();
    for (seed, t) in tables {
        for (st, _, _, w) in &t.selections {
            if !w.is_empty() {
                notes.push(format!("- seed {seed}: {st}: {w}"));
            }
        }
        let unconverged = t.rows.iter().filter(|r| !r.converged).count();
        if unconverged > 0 {
            notes.push(format!("- seed {seed}: {unconverged} unconverged grid point(s)"));
        }
    }
    if !notes.is_empty() {
        let _ = writeln!(s, "\n{}", notes.join("\n"));
    }
    s
}

/// Reads every seed's `sweep.csv` under `dir`, writes `report.md` and
/// returns its text.
pub fn report(dir: &Path) -> Result<String> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let mut tables = Vec::new();
    for &seed in &cfg.seeds {
        let path = dir.join(format!("seed-{seed}")).join(SWEEP_FILE);
        tables.push((seed, load_sweep_csv(&path)?));
    }
    let text = render_report(&cfg, &tables);
    save_text(&dir.join(REPORT_FILE), &text)?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(task: Task, out: &Path) -> ExperimentConfig {
        let text = match task {
            Task::Ir => "task = ir\nsize = 16\ncounts = 10\ngrid = 0.1,100,4\nseeds = 3,4\n",
            Task::Ct => "task = ct\nsize = 12\ncounts = 500\nangles = 10\ngrid = 0.01,1,3\nseeds = 5\npixel_size = 0.4\n",
        };
        ExperimentConfig::parse(text).unwrap().with("out", out.to_str().unwrap()).unwrap()
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = ExperimentConfig::parse("task = ct # comment\n\n").unwrap();
        assert_eq!(cfg.background, 0.0);
        assert_eq!(cfg.detectors, 95);
        assert_eq!(cfg.angles, 60);
        assert_eq!(cfg.x_update_resolved(), XUpdate::Linearized);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let ir = ExperimentConfig::parse("").unwrap();
        assert_eq!((ir.task, ir.background, ir.counts), (Task::Ir, DEFAULT_BACKGROUND, 10.0));
        assert_eq!(ir.grid.count, DEFAULT_GRID_POINTS);
        assert_eq!(ExperimentConfig::parse(&ir.to_text()).unwrap(), ir);
    }

    #[test]
    fn config_errors() {
        for bad in [
            "colour = red",
            "task = mri",
            "task = ir\ntask = ct",
            "grid = 1,2",
            "grid = 2,1,5",
            "task = ct\nbackground = 0.1",
            "task = ct\nx_update = exact_fft",
            "counts = -1",
            "counts = 0\nbackground = 0",
            "seeds = 1,1",
            "blur_band = 4",
            "size = 0",
            "just text",
        ] {
            let e = ExperimentConfig::parse(bad).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{bad}: {e}");
            assert_eq!(e.exit_code(), 2);
        }
    }

    #[test]
    fn zero_kappa_is_pure_background() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::parse("counts = 0\nsize = 128\nseeds = 9").unwrap().with("out", dir.path().to_str().unwrap()).unwrap();
        let g = generate(&cfg).unwrap();
        let y = &g.observations[0].1.counts;
        let mean = y.iter().sum::<u64>() as f64 / y.len() as f64;
        assert!((mean - 0.002).abs() < 0.002, "{mean}");
    }

    #[test]
    fn empty_rays_see_full_intensity() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::parse("task = ct\nsize = 64\ncounts = 1000\nseeds = 1")
            .unwrap()
            .with("out", dir.path().to_str().unwrap())
            .unwrap();
        let g = generate(&cfg).unwrap();
        let model = cfg.build_model().unwrap();
        let hx = model.operator().apply(&cfg.truth().unwrap()).unwrap();
        let mut zero = 0;
        for (h, l) in hx.iter().zip(&g.lambda) {
            if *h == 0.0 {
                zero += 1;
                assert_eq!(*l, 1000.0);
            }
        }
        assert!(zero > 0);
    }

    #[test]
    fn pipeline_is_deterministic() {
        for task in [Task::Ir, Task::Ct] {
            let a = tempfile::tempdir().unwrap();
            let b = tempfile::tempdir().unwrap();
            let ca = tiny(task, a.path());
            let cb = tiny(task, b.path());
            generate(&ca).unwrap();
            generate(&cb).unwrap();
            sweep(&ca, true).unwrap();
            sweep(&cb, false).unwrap();
            for &seed in &ca.seeds {
                for f in ["observation.txt", SWEEP_FILE, "whiteness_curve.csv", "discrepancy_curve.csv", "acf_pwp.csv", "x_pwp.f64"] {
                    let x = std::fs::read(ca.seed_dir(seed).join(f)).unwrap();
                    let y = std::fs::read(cb.seed_dir(seed).join(f)).unwrap();
                    assert_eq!(x, y, "{task} {f}");
                }
            }
            let text = report(a.path()).unwrap();
            assert!(text.contains("median") == (ca.seeds.len() > 1));
            assert!(a.path().join(REPORT_FILE).exists());
        }
    }

    #[test]
    fn sweep_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Task::Ir, dir.path()).with("adp_refine", "true").unwrap();
        generate(&cfg).unwrap();
        let sweeps = sweep(&cfg, true).unwrap();
        let s = &sweeps[0];
        let path = cfg.seed_dir(s.seed).join(SWEEP_FILE);
        let t = load_sweep_csv(&path).unwrap();
        assert_eq!(t.rows.len(), s.records.len());
        for (row, rec) in t.rows.iter().zip(&s.records) {
            assert_eq!(row.mu, rec.mu);
            assert_eq!(row.w, rec.w);
            assert_eq!(row.d, rec.d);
            assert_eq!(row.mc_delta, rec.mc_delta);
            assert_eq!(Some(row.snr), rec.snr);
            assert_eq!(row.iterations, rec.iterations);
        }
        for (sel, parsed) in s.selections.iter().zip(&t.selections) {
            assert_eq!((sel.strategy, sel.mu, sel.index), (parsed.0, parsed.1, parsed.2));
        }
        assert_eq!(t.adp_refined.is_some(), s.adp_refined.is_some());
        assert!(parse_sweep_csv("mu,W\n", &path).is_err());
    }

    #[test]
    fn single_point_grid() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(Task::Ir, dir.path()).with("grid", "2,2,1").unwrap();
        generate(&cfg).unwrap();
        let sweeps = sweep(&cfg, false).unwrap();
        for s in &sweeps {
            assert_eq!(s.records.len(), 1);
            assert!(s.selections.iter().all(|x| x.mu == 2.0 && x.index == 0));
        }
    }

    fn table(snrs: [f64; 3], ssims: [f64; 3]) -> SweepTable {
        let rows = (0..3)
            .map(|k| SweepRow {
                mu: k as f64 + 1.0,
                w: 2.0,
                d: 1.0,
                mc_delta: 1.0,
                snr: snrs[k],
                ssim: ssims[k],
                iterations: 10,
                converged: true,
                final_delta_x: 1e-7,
                residual: 1e-4,
                beta: 1.0,
                clamped: 0,
            })
            .collect();
        let selections = Strategy::ALL.iter().enumerate().map(|(k, &s)| (s, k as f64 + 1.0, k, String::new())).collect();
        SweepTable { rows, selections, adp_refined: None }
    }

    #[test]
    fn report_bolds_row_maxima_and_ties() {
        let cfg = ExperimentConfig::parse("").unwrap();
        let text = render_report(&cfg, &[(1, table([9.0, 3.0, 5.0], [0.8, 0.5, 0.6])), (2, table([9.5, 1.0, 2.0], [0.9, 0.2, 0.3]))]);
        for line in text.lines().filter(|l| l.starts_with("| 1 ") || l.starts_with("| 2 ") || l.starts_with("| median")) {
            let cells: Vec<&str> = line.split('|').map(str::trim).collect();
            assert!(cells[3].starts_with("**") && cells[4].starts_with("**"), "{line}");
            assert_eq!(line.matches("**").count(), 4, "{line}");
        }
        let tie = render_report(&cfg, &[(1, table([4.0, 4.0, 1.0], [0.5, 0.1, 0.5]))]);
        let row = tie.lines().find(|l| l.starts_with("| 1 ")).unwrap();
        assert_eq!(row.matches("**4.000**").count(), 2, "{row}");
        assert_eq!(row.matches("**0.500**").count(), 2, "{row}");
    }
}
