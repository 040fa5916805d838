//! Command-line front end: expectation solves, representation
//! extraction, path simulation, and the verification suite, all
//! reproducible from a config file plus flag overrides.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gmartingale::driver::GDriver;
use gmartingale::estimates::{run_default_suite, SuiteConfig};
use gmartingale::grid::{SpaceGrid, TimeGrid};
use gmartingale::nested::nested_expectation;
use gmartingale::payoff::{parse_payoff, CylinderPayoff};
use gmartingale::represent::{
    check_a_monotone, extract_representation, path_grid_for, reconstruction_report,
};
use gmartingale::simulate::{default_control_family, mc_expectation, sample_paths, VolatilityControl};

/// Fully resolved run parameters. Every run embeds the resolved form in
/// its report so the run can be reproduced from the report alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    sigma_bar_sq: f64,
    sigma_low_sq: f64,
    /// Perturbation size; defaults to (sigma_bar_sq - sigma_low_sq)/4.
    epsilon: Option<f64>,
    lower_floor_sq: Option<f64>,
    upper_cap_sq: Option<f64>,
    x_min: f64,
    x_max: f64,
    nx: usize,
    /// Path-grid steps; nudged up if payoff times miss the nodes.
    nt: usize,
    cfl_ratio: f64,
    payoff: String,
    times: Vec<f64>,
    paths: usize,
    seed: u64,
    /// Control family: "default", or ';'-separated
    /// constant:<v> | piecewise:t0:v0,t1:v1,... | feedback
    controls: String,
    out: Option<PathBuf>,
    workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sigma_bar_sq: 4.0,
            sigma_low_sq: 1.0,
            epsilon: None,
            lower_floor_sq: None,
            upper_cap_sq: None,
            x_min: -20.0,
            x_max: 20.0,
            nx: 801,
            nt: 1000,
            cfl_ratio: 0.5,
            payoff: "b1*b1".into(),
            times: vec![1.0],
            paths: 2000,
            seed: 2024,
            controls: "default".into(),
            out: None,
            workers: None,
        }
    }
}

#[derive(Debug, Args)]
struct Overrides {
    /// TOML config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    payoff: Option<String>,
    /// Comma-separated payoff evaluation times
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long)]
    sigma_bar_sq: Option<f64>,
    #[arg(long)]
    sigma_low_sq: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    x_min: Option<f64>,
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    controls: Option<String>,
    /// Output directory for CSV/JSON artifacts
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; must not change numerical output
    #[arg(long)]
    workers: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).context("parsing config")?
            }
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => {
                $(if let Some(v) = &self.$f { cfg.$f = v.clone(); })*
            };
        }
        take!(
            payoff,
            times,
            sigma_bar_sq,
            sigma_low_sq,
            x_min,
            x_max,
            nx,
            nt,
            paths,
            seed,
            controls
        );
        if self.epsilon.is_some() {
            cfg.epsilon = self.epsilon;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        Ok(cfg)
    }
}

#[derive(Parser)]
#[command(
    name = "gmartingale",
    about = "Sublinear-expectation PDE solver, martingale representation extractor, and estimate verifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the sublinear expectation of a payoff by the nested PDE solve
    Expect(Overrides),
    /// Extract the representation processes (z, eta, A) along simulated paths
    Represent(Overrides),
    /// Simulate controlled paths and report per-control Monte Carlo statistics
    Simulate(Overrides),
    /// Run the full verification suite over the bundled payoff corpus
    Verify(Overrides),
    /// Parse a payoff expression and print its canonical form
    Check {
        /// Payoff expression, e.g. "max(b1, 0) + abs(b2)"
        text: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Expect(o) => with_pool(o, cmd_expect),
        Command::Represent(o) => with_pool(o, cmd_represent),
        Command::Simulate(o) => with_pool(o, cmd_simulate),
        Command::Verify(o) => with_pool(o, cmd_verify),
        Command::Check { text } => cmd_check(text),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

/// Run a command inside a dedicated thread pool so --workers controls
/// parallelism without touching any global state.
fn with_pool(o: &Overrides, f: fn(&RunConfig) -> Result<ExitCode>) -> Result<ExitCode> {
    let cfg = o.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .context("building thread pool")?;
    pool.install(|| f(&cfg))
}

fn build_payoff(cfg: &RunConfig) -> Result<CylinderPayoff> {
    let expr = parse_payoff(&cfg.payoff)?;
    let horizon = *cfg
        .times
        .last()
        .context("at least one payoff time required")?;
    Ok(CylinderPayoff::new(cfg.times.clone(), expr, horizon)?)
}

fn build_driver(cfg: &RunConfig) -> Result<GDriver> {
    Ok(GDriver::new(cfg.sigma_bar_sq, cfg.sigma_low_sq)?)
}

fn space_grid(cfg: &RunConfig) -> Result<SpaceGrid> {
    Ok(SpaceGrid::new(cfg.x_min, cfg.x_max, cfg.nx)?)
}

fn path_grid(cfg: &RunConfig, cp: &CylinderPayoff) -> Result<TimeGrid> {
    Ok(path_grid_for(cp, cp.horizon(), cfg.nt)?)
}

fn parse_controls(
    cfg: &RunConfig,
    driver: GDriver,
    tg: TimeGrid,
    stack: Option<Arc<gmartingale::nested::SurfaceStack>>,
) -> Result<Vec<VolatilityControl>> {
    if cfg.controls == "default" {
        return Ok(default_control_family(driver, tg, 3, cfg.seed, stack));
    }
    let mut out = Vec::new();
    for item in cfg.controls.split(';') {
        let item = item.trim();
        if let Some(v) = item.strip_prefix("constant:") {
            out.push(VolatilityControl::Constant(v.parse()?));
        } else if let Some(body) = item.strip_prefix("piecewise:") {
            let mut bands = Vec::new();
            for pair in body.split(',') {
                let (t, v) = pair
                    .split_once(':')
                    .with_context(|| format!("bad piecewise band `{pair}`"))?;
                bands.push((t.parse()?, v.parse()?));
            }
            out.push(VolatilityControl::Piecewise(bands));
        } else if item == "feedback" {
            let stack = stack
                .clone()
                .context("feedback control requires a solved surface")?;
            out.push(VolatilityControl::Feedback(stack));
        } else {
            bail!("unknown control item `{item}`");
        }
    }
    Ok(out)
}

fn out_dir(cfg: &RunConfig) -> Result<Option<PathBuf>> {
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        return Ok(Some(dir.clone()));
    }
    Ok(None)
}

fn write_json(dir: &std::path::Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, format!("{}\n", serde_json::to_string_pretty(value)?))
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_expect(cfg: &RunConfig) -> Result<ExitCode> {
    let driver = build_driver(cfg)?;
    let cp = build_payoff(cfg)?;
    let sg = space_grid(cfg)?;
    let (value, stack) = nested_expectation(driver, &cp, sg, cfg.cfl_ratio)?;
    println!(
        "E_G[{}] = {:.6} (dx = {:.6}, domain [{}, {}], cfl = {})",
        cp.expr().print(),
        value,
        sg.dx(),
        cfg.x_min,
        cfg.x_max,
        cfg.cfl_ratio
    );
    if let Some(dir) = out_dir(cfg)? {
        let mut buf = Vec::new();
        stack.intervals[0].slices[0].write_csv(&mut buf)?;
        fs::write(dir.join("surface.csv"), buf)?;
        write_json(
            &dir,
            "expect.json",
            &serde_json::json!({ "value": value, "config": cfg }),
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_represent(cfg: &RunConfig) -> Result<ExitCode> {
    let driver = build_driver(cfg)?;
    let cp = build_payoff(cfg)?;
    let sg = space_grid(cfg)?;
    let (value, stack) = nested_expectation(driver, &cp, sg, cfg.cfl_ratio)?;
    let stack = Arc::new(stack);
    let tg = path_grid(cfg, &cp)?;
    let bundle = sample_paths(
        driver,
        &VolatilityControl::Feedback(stack.clone()),
        tg,
        cfg.paths,
        cfg.seed,
    )?;
    let rs = extract_representation(&stack, &cp, &bundle)?;
    let norms = reconstruction_report(&rs);
    let max_eta = 0.5
        * stack
            .intervals
            .iter()
            .flat_map(|iv| iv.slices.iter())
            .map(|s| s.max_abs_dxx())
            .fold(0.0f64, f64::max);
    let mono = check_a_monotone(&rs, 2.0 * sg.dx() * max_eta);
    let (eta_mean, eta_stderr) = rs.eta_l1_mean_stderr();
    println!(
        "E_G[{}] = {:.6}; residual L2 = {:.6e}, max = {:.6e}; \
         eta L1 mean = {:.6} +/- {:.6}; A monotone: {}",
        cp.expr().print(),
        value,
        norms.l2,
        norms.max,
        eta_mean,
        eta_stderr,
        mono.pass
    );
    if let Some(dir) = out_dir(cfg)? {
        let mut buf = Vec::new();
        rs.write_csv(&bundle, &mut buf)?;
        fs::write(dir.join("representation.csv"), buf)?;
        write_json(
            &dir,
            "represent.json",
            &serde_json::json!({
                "value": value,
                "residual_norms": norms,
                "monotone": mono,
                "eta_l1_mean": eta_mean,
                "eta_l1_stderr": eta_stderr,
                "excluded_paths": rs.excluded.len(),
                "config": cfg,
            }),
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<ExitCode> {
    let driver = build_driver(cfg)?;
    let cp = build_payoff(cfg)?;
    let tg = path_grid(cfg, &cp)?;
    let needs_surface = cfg.controls == "default" || cfg.controls.contains("feedback");
    let stack = if needs_surface {
        let sg = space_grid(cfg)?;
        Some(Arc::new(nested_expectation(driver, &cp, sg, cfg.cfl_ratio)?.1))
    } else {
        None
    };
    let controls = parse_controls(cfg, driver, tg, stack)?;
    let mc = mc_expectation(driver, &cp, &controls, tg, cfg.paths, cfg.seed)?;
    println!(
        "MC sup estimate = {:.6} (argmax control: {})",
        mc.estimate, mc.argmax
    );
    for stats in &mc.per_control {
        println!(
            "  {}: mean = {:.6} +/- {:.6} ({} paths)",
            stats.control, stats.mean, stats.stderr, stats.n_paths
        );
    }
    if let Some(dir) = out_dir(cfg)? {
        let mut buf = Vec::new();
        sample_paths(driver, &controls[0], tg, cfg.paths, cfg.seed)?.write_csv(&mut buf)?;
        fs::write(dir.join("paths.csv"), buf)?;
        write_json(
            &dir,
            "simulate.json",
            &serde_json::json!({ "mc": mc, "config": cfg }),
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(cfg: &RunConfig) -> Result<ExitCode> {
    let suite = SuiteConfig {
        sigma_bar_sq: cfg.sigma_bar_sq,
        sigma_low_sq: cfg.sigma_low_sq,
        epsilon: cfg.epsilon,
        n_paths: cfg.paths,
        path_steps: cfg.nt.min(2000),
        seed: cfg.seed,
        cfl_ratio: cfg.cfl_ratio,
        ..SuiteConfig::default()
    };
    let reports = run_default_suite(&suite)?;
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    // timestamp is confined to the header line; the body below it is
    // byte-identical across reruns with the same config
    let mut lines = String::new();
    lines.push_str(&serde_json::to_string(&serde_json::json!({
        "kind": "header",
        "timestamp": timestamp,
        "suite": suite,
        "config": cfg,
    }))?);
    lines.push('\n');
    let mut failures = 0usize;
    for report in &reports {
        lines.push_str(&serde_json::to_string(report)?);
        lines.push('\n');
        if !report.ok() {
            failures += 1;
        }
    }
    print!("{lines}");
    let passed = reports.len() - failures;
    eprintln!("{passed}/{} reports as expected", reports.len());
    if let Some(dir) = out_dir(cfg)? {
        fs::write(dir.join("verify.jsonl"), &lines)?;
    }
    Ok(if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_check(text: &str) -> Result<ExitCode> {
    match parse_payoff(text) {
        Ok(expr) => {
            println!("{}", expr.print());
            Ok(ExitCode::SUCCESS)
        }
        Err(err) => {
            eprintln!("{err}");
            Ok(ExitCode::FAILURE)
        }
    }
}
