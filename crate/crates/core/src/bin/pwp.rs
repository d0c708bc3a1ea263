use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pwp_core::experiment::{self, ExperimentConfig, CONFIG_FILE};
use pwp_core::selection::Strategy;
use pwp_core::{selftest, Error, Result};

#[derive(Parser)]
#[command(name = "pwp", version, about = "TV-KL Poisson image recovery with whiteness-based parameter selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate observations and write ground truth and a manifest.
    Generate(Box<GenerateArgs>),
    /// Solve over the μ grid for every seed and apply the selectors.
    Sweep(Box<SweepArgs>),
    /// Print the per-seed table of selected μ, SNR and SSIM.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle checks.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Random prox instances per kernel.
        #[arg(long, default_value_t = 1000)]
        draws: usize,
    },
}

#[derive(Args)]
struct DataArgs {
    /// ir or ct
    #[arg(long)]
    task: Option<String>,
    /// cells-like, satellite-like, shepp-logan or a PGM path
    #[arg(long)]
    phantom: Option<String>,
    /// N or RxC
    #[arg(long)]
    size: Option<String>,
    /// κ (ir) or I₀ (ct)
    #[arg(long)]
    counts: Option<String>,
    #[arg(long)]
    background: Option<String>,
    #[arg(long)]
    blur_band: Option<String>,
    #[arg(long)]
    blur_sigma: Option<String>,
    /// parallel or fan
    #[arg(long)]
    beam: Option<String>,
    #[arg(long)]
    angles: Option<String>,
    #[arg(long)]
    detectors: Option<String>,
    /// mm
    #[arg(long)]
    detector_size: Option<String>,
    /// mm
    #[arg(long)]
    pixel_size: Option<String>,
    #[arg(long)]
    source_to_center: Option<String>,
    #[arg(long)]
    center_to_detector: Option<String>,
    /// Comma-separated seed list.
    #[arg(long = "seed")]
    seeds: Option<String>,
}

#[derive(Args)]
struct SolverArgs {
    /// min,max,count
    #[arg(long)]
    grid: Option<String>,
    /// A number or `auto`.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    /// A number or `auto`.
    #[arg(long)]
    max_iter: Option<String>,
    /// exact_fft, linearized or auto
    #[arg(long)]
    x_update: Option<String>,
    #[arg(long)]
    mc_samples: Option<String>,
    /// A lag radius or `all`.
    #[arg(long)]
    whiteness_radius: Option<String>,
    #[arg(long)]
    adp_refine: Option<String>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Directory written by `generate`.
    #[arg(long)]
    out: PathBuf,
    /// Evaluate grid points one at a time.
    #[arg(long)]
    serial: bool,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
}

impl DataArgs {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("task", &self.task),
            ("phantom", &self.phantom),
            ("size", &self.size),
            ("counts", &self.counts),
            ("background", &self.background),
            ("blur_band", &self.blur_band),
            ("blur_sigma", &self.blur_sigma),
            ("beam", &self.beam),
            ("angles", &self.angles),
            ("detectors", &self.detectors),
            ("detector_size", &self.detector_size),
            ("pixel_size", &self.pixel_size),
            ("source_to_center", &self.source_to_center),
            ("center_to_detector", &self.center_to_detector),
            ("seeds", &self.seeds),
        ]
    }
}

impl SolverArgs {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("grid", &self.grid),
            ("beta", &self.beta),
            ("tol", &self.tol),
            ("max_iter", &self.max_iter),
            ("x_update", &self.x_update),
            ("mc_samples", &self.mc_samples),
            ("whiteness_radius", &self.whiteness_radius),
            ("adp_refine", &self.adp_refine),
        ]
    }
}

fn overlay(map: &mut BTreeMap<String, String>, pairs: Vec<(&'static str, &Option<String>)>) {
    for (k, v) in pairs {
        if let Some(v) = v {
            map.insert(k.to_string(), v.clone());
        }
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut map = match &a.config {
        Some(p) => experiment::parse_config_text(&pwp_core::io::load_text(p)?)?,
        None => BTreeMap::new(),
    };
    overlay(&mut map, a.data.pairs());
    overlay(&mut map, a.solver.pairs());
    if let Some(out) = &a.out {
        map.insert("out".into(), out.display().to_string());
    }
    let cfg = ExperimentConfig::from_pairs(&map)?;
    let g = experiment::generate(&cfg)?;
    println!("wrote {} observation(s) to {}", g.observations.len(), cfg.out.display());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.out.join(CONFIG_FILE))?;
    cfg = cfg.with("out", &a.out.display().to_string())?;
    for (k, v) in a.solver.pairs() {
        if let Some(v) = v {
            cfg = cfg.with(k, v)?;
        }
    }
    if let Some(n) = a.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let sweeps = experiment::sweep(&cfg, !a.serial)?;
    for s in &sweeps {
        let picks: Vec<String> =
            Strategy::ALL.iter().map(|&st| format!("{st} mu = {:.4e}", s.selected(st).mu)).collect();
        println!("seed {}: {} ({:.1} s)", s.seed, picks.join(", "), s.seconds);
        for w in s.warnings() {
            eprintln!("warning: {w}");
        }
    }
    Ok(())
}

fn cmd_selftest(seed: u64, draws: usize) -> Result<bool> {
    let checks = selftest::run(seed, draws);
    for c in &checks {
        println!("{} {:<22} {} ({:.2} s)", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail, c.seconds);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(*a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(*a).map(|_| true),
        Command::Report { out } => experiment::report(&out).map(|text| {
            print!("{text}");
            true
        }),
        Command::Selftest { seed, draws } => cmd_selftest(seed, draws),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
