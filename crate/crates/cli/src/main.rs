//! Command-line front end for the water-economy CGE toolkit.
//!
//! `sam` covers the data pipeline (validation, rebalancing, aggregation,
//! water augmentation), `run` calibrates the model and sweeps one scenario
//! over a shock grid, `sensitivity` repeats the market sweep under
//! alternative data assumptions, and `fixture` writes the bundled example
//! economy. All outputs are plain delimited text emitted in fixed orders:
//! identical inputs produce byte-identical files.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use watercge_core::accounts::{AccountMeta, AggregationMap, Sam, SamError, SamLayout};
use watercge_core::augment::{run_pipeline, AugmentError, WaterFlows, WaterRates};
use watercge_core::balance::{balance_lp, BalanceError};
use watercge_core::calibrate::{calibrate, CalibrateError};
use watercge_core::config::{ConfigError, ModelConfig, ResourceKind};
use watercge_core::fixture::{self, FixtureError};
use watercge_core::scenarios::{
    run_sweep, sensitivity_rainfed, sensitivity_valuation, spec_for, ScenarioError,
};
use watercge_core::solve::{JacobianMode, SolverConfig};
use watercge_core::tol::SAM_BALANCE_TOL;

#[derive(Parser)]
#[command(
    name = "watercge",
    version,
    about = "Water-market CGE toolkit: SAM preparation, calibrated shock sweeps, sensitivity tables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate or transform a social accounting matrix.
    #[command(subcommand)]
    Sam(SamCommand),
    /// Calibrate the model and sweep one scenario over a shock grid.
    Run(RunArgs),
    /// Re-run the market sweep under alternative data assumptions.
    #[command(subcommand)]
    Sensitivity(SensitivityCommand),
    /// Write the bundled example economy into a directory.
    Fixture(FixtureArgs),
}

#[derive(Subcommand)]
enum SamCommand {
    /// Check that every account's receipts equal its outlays.
    Validate(SamInput),
    /// Spread agent, capital, and external gaps over adjustable cells with
    /// the least total adjustment.
    Balance(SamTransform),
    /// Merge detailed accounts into model accounts using a mapping file.
    Aggregate(AggregateArgs),
    /// Run the raw-data pipeline: irrigation split, water and resource
    /// factor rows, import cost separation.
    Augment(SamTransform),
}

#[derive(Subcommand)]
enum SensitivityCommand {
    /// Vary the irrigated share of crop output and compare market-sweep
    /// GDP against the configured baseline.
    Rainfed(RainfedArgs),
    /// Scale the water valuation rates and compare median marginal
    /// responses against baseline pricing.
    Valuation(ValuationArgs),
}

#[derive(Args)]
struct SamInput {
    /// Model configuration file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Input SAM, overriding the config (`files.sam`, or `files.raw_sam`
    /// for augment).
    #[arg(long, value_name = "FILE")]
    sam: Option<PathBuf>,
}

#[derive(Args)]
struct SamTransform {
    #[command(flatten)]
    input: SamInput,
    /// Where to write the transformed SAM.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct AggregateArgs {
    #[command(flatten)]
    input: SamInput,
    /// Aggregation map with `detailed_code,model_code,preserved` rows.
    #[arg(long, value_name = "FILE")]
    map: PathBuf,
    /// Where to write the aggregated SAM.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario id: a targeted industry group from the config (A1..A5) or
    /// B for the economy-wide water market.
    scenario: String,
    #[command(flatten)]
    sweep: SweepArgs,
    /// Write the per-iteration solver trace into each shock report.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct RainfedArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    /// Irrigated shares to run, comma separated. The configured baseline
    /// share is always run for reference.
    #[arg(long, value_name = "S1,S2,..", value_delimiter = ',', required = true)]
    shares: Vec<f64>,
}

#[derive(Args)]
struct ValuationArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    /// Water-rate multipliers to run, comma separated, each at least 1.
    /// Baseline pricing (multiplier 1) is always run for reference.
    #[arg(long, value_name = "N1,N2,..", value_delimiter = ',', required = true)]
    multipliers: Vec<f64>,
}

#[derive(Args)]
struct FixtureArgs {
    /// Directory for the example input files.
    #[arg(long, value_name = "DIR", default_value = "example")]
    out: PathBuf,
}

/// Flags shared by every command that solves the model over a grid.
#[derive(Args)]
struct SweepArgs {
    /// Model configuration file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Input SAM, overriding the config (`files.sam` for run,
    /// `files.raw_sam` for sensitivity).
    #[arg(long, value_name = "FILE")]
    sam: Option<PathBuf>,
    /// Shock grid in percent: `lo..hi[:step]` or a single value.
    #[arg(
        long,
        value_name = "GRID",
        default_value = "-40..40:10",
        allow_hyphen_values = true
    )]
    grid: String,
    /// Directory for result files.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    /// Derivative evaluation for the Newton solver.
    #[arg(long, value_enum, default_value_t = JacobianArg::Analytic)]
    jacobian: JacobianArg,
    /// Threads for the sweep halves below and above the benchmark.
    #[arg(long, value_name = "N", default_value_t = 1)]
    parallel: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum JacobianArg {
    /// Closed-form derivatives.
    Analytic,
    /// Central finite differences.
    Fd,
}

impl SweepArgs {
    fn solver(&self) -> SolverConfig {
        SolverConfig {
            jacobian: match self.jacobian {
                JacobianArg::Analytic => JacobianMode::Analytic,
                JacobianArg::Fd => JacobianMode::FiniteDifference,
            },
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sam(#[from] SamError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error("bad grid {0}")]
    Grid(String),
    #[error("{0} accounts out of balance")]
    Unbalanced(usize),
    #[error("config names no raw SAM (files.raw_sam) and --sam was not given")]
    NoRawSam,
    #[error("cannot write {0}: {1}")]
    Io(String, std::io::Error),
}

impl CliError {
    /// Exit contract: 2 input contract violation, 3 solver failure,
    /// 4 internal invariant breach.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario(e) => scenario_exit(e),
            _ => 2,
        }
    }
}

fn scenario_exit(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Benchmark(_) | ScenarioError::MissingPoint(_) => 3,
        ScenarioError::Rainfed { source, .. } | ScenarioError::Valuation { source, .. } => {
            scenario_exit(source)
        }
        ScenarioError::Model(_) | ScenarioError::Metrics(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("watercge: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Sam(SamCommand::Validate(a)) => cmd_validate(&a),
        Command::Sam(SamCommand::Balance(a)) => cmd_balance(&a),
        Command::Sam(SamCommand::Aggregate(a)) => cmd_aggregate(&a),
        Command::Sam(SamCommand::Augment(a)) => cmd_augment(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Sensitivity(SensitivityCommand::Rainfed(a)) => cmd_rainfed(&a),
        Command::Sensitivity(SensitivityCommand::Valuation(a)) => cmd_valuation(&a),
        Command::Fixture(a) => cmd_fixture(&a),
    }
}

// ── Shared loading ───────────────────────────────────────────────────────────

/// Config plus the account layout every SAM file is read with.
fn load_layout(config: &Path) -> Result<(ModelConfig, SamLayout), CliError> {
    let cfg = ModelConfig::load(config)?;
    let meta = AccountMeta::load(&cfg.resolve(&cfg.files.accounts), b',')?;
    Ok((cfg, SamLayout::new(meta)))
}

fn load_sam(cfg: &ModelConfig, layout: &SamLayout, over: Option<&Path>) -> Result<Sam, CliError> {
    let path = match over {
        Some(p) => p.to_path_buf(),
        None => cfg.resolve(&cfg.files.sam),
    };
    Ok(Sam::load(&path, layout)?)
}

fn load_raw(cfg: &ModelConfig, layout: &SamLayout, over: Option<&Path>) -> Result<Sam, CliError> {
    let path = match over {
        Some(p) => p.to_path_buf(),
        None => match &cfg.files.raw_sam {
            Some(p) => cfg.resolve(p),
            None => return Err(CliError::NoRawSam),
        },
    };
    Ok(Sam::load(&path, layout)?)
}

fn load_water(cfg: &ModelConfig) -> Result<(WaterFlows, WaterRates), CliError> {
    let flows = WaterFlows::load(&cfg.resolve(&cfg.files.water_flows))?;
    let rates = WaterRates::load(&cfg.resolve(&cfg.files.water_rates))?;
    Ok((flows, rates))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.display().to_string(), e))?;
        }
    }
    Ok(())
}

// ── sam ──────────────────────────────────────────────────────────────────────

fn cmd_validate(a: &SamInput) -> Result<(), CliError> {
    let (cfg, layout) = load_layout(&a.config)?;
    let sam = load_sam(&cfg, &layout, a.sam.as_deref())?;
    let gaps = sam.validate();
    if gaps.is_empty() {
        println!(
            "balanced: {} accounts, every gap within {:e}",
            sam.len(),
            SAM_BALANCE_TOL
        );
        return Ok(());
    }
    println!("account,receipts,outlays,gap");
    for g in &gaps {
        println!("{},{},{},{}", g.code, g.row_sum, g.col_sum, g.gap());
    }
    Err(CliError::Unbalanced(gaps.len()))
}

fn cmd_balance(a: &SamTransform) -> Result<(), CliError> {
    let (cfg, layout) = load_layout(&a.input.config)?;
    let sam = load_sam(&cfg, &layout, a.input.sam.as_deref())?;
    let (balanced, report) = balance_lp(&sam)?;
    ensure_parent(&a.out)?;
    balanced.save(&a.out, layout.delimiter)?;
    println!("total adjustment: {}", report.objective);
    for c in &report.cells {
        println!("  {} -> {}: {:+}", c.payer, c.payee, c.delta);
    }
    for acc in &report.accounts {
        println!(
            "  {}: gap {} -> {} ({} cells touched)",
            acc.code, acc.gap_before, acc.gap_after, acc.cells_adjusted
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_aggregate(a: &AggregateArgs) -> Result<(), CliError> {
    let (cfg, layout) = load_layout(&a.input.config)?;
    let sam = load_sam(&cfg, &layout, a.input.sam.as_deref())?;
    let map = AggregationMap::load(&a.map, layout.delimiter)?;
    let merged = sam.aggregate(&map)?;
    ensure_parent(&a.out)?;
    merged.save(&a.out, layout.delimiter)?;
    println!("{} accounts -> {}", sam.len(), merged.len());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_augment(a: &SamTransform) -> Result<(), CliError> {
    let (cfg, layout) = load_layout(&a.input.config)?;
    let raw = load_raw(&cfg, &layout, a.input.sam.as_deref())?;
    let (flows, rates) = load_water(&cfg)?;
    let (sam, report) = run_pipeline(&raw, &flows, &rates, &cfg, cfg.water.irrigated_share, 1.0)?;
    ensure_parent(&a.out)?;
    sam.save(&a.out, layout.delimiter)?;
    println!("industry,water_volume,water_payment");
    for (industry, volume) in &report.volumes {
        let payment = report.water_payments.get(industry).copied().unwrap_or(0.0);
        println!("{industry},{volume},{payment}");
    }
    for (industry, (kind, payment)) in &report.resource_payments {
        let row = match kind {
            ResourceKind::Land => "land",
            ResourceKind::Natural => "resource",
        };
        println!("{industry}: {row} payment {payment}");
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

// ── run ──────────────────────────────────────────────────────────────────────

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let (cfg, layout) = load_layout(&a.sweep.config)?;
    let sam = load_sam(&cfg, &layout, a.sweep.sam.as_deref())?;
    let rates = WaterRates::load(&cfg.resolve(&cfg.files.water_rates))?;
    let grid = parse_grid(&a.sweep.grid)?;
    let spec = spec_for(&cfg, &a.scenario, grid)?;
    let model = calibrate(&sam, &cfg, &rates, spec.mobility())?;
    let sweep = run_sweep(&model, &spec, &a.sweep.solver(), a.sweep.parallel > 1)?;

    let dir = a.sweep.out.join(&a.scenario);
    output::write_sweep(&dir, &a.scenario, &model, &sweep, a.trace)?;
    println!(
        "scenario {}: {} of {} grid points solved",
        a.scenario,
        sweep.solved().count(),
        sweep.points.len()
    );
    println!("wrote {}", dir.join("metrics.csv").display());
    println!("wrote {}", dir.join("summary.txt").display());
    Ok(())
}

// ── sensitivity ──────────────────────────────────────────────────────────────

fn cmd_rainfed(a: &RainfedArgs) -> Result<(), CliError> {
    let (cfg, layout) = load_layout(&a.sweep.config)?;
    let raw = load_raw(&cfg, &layout, a.sweep.sam.as_deref())?;
    let (flows, rates) = load_water(&cfg)?;
    let grid = parse_grid(&a.sweep.grid)?;
    let table = sensitivity_rainfed(
        &raw,
        &flows,
        &rates,
        &cfg,
        &a.shares,
        &grid,
        &a.sweep.solver(),
        a.sweep.parallel > 1,
    )?;
    let dir = a.sweep.out.join("sensitivity").join("rainfed");
    output::write_rainfed(&dir, &table)?;
    println!("baseline irrigated share: {}", table.baseline_share);
    println!("wrote {}", dir.join("deltas.csv").display());
    Ok(())
}

fn cmd_valuation(a: &ValuationArgs) -> Result<(), CliError> {
    let (cfg, layout) = load_layout(&a.sweep.config)?;
    let raw = load_raw(&cfg, &layout, a.sweep.sam.as_deref())?;
    let (flows, rates) = load_water(&cfg)?;
    let grid = parse_grid(&a.sweep.grid)?;
    let table = sensitivity_valuation(
        &raw,
        &flows,
        &rates,
        &cfg,
        &a.multipliers,
        &grid,
        &a.sweep.solver(),
        a.sweep.parallel > 1,
    )?;
    let dir = a.sweep.out.join("sensitivity").join("valuation");
    output::write_valuation(&dir, &table)?;
    println!(
        "baseline median marginal GDP response: {}",
        table.baseline_gdp_response
    );
    println!("wrote {}", dir.join("responses.csv").display());
    Ok(())
}

// ── fixture ──────────────────────────────────────────────────────────────────

fn cmd_fixture(a: &FixtureArgs) -> Result<(), CliError> {
    fixture::write_all(&a.out)?;
    for name in fixture::FILES {
        println!("wrote {}", a.out.join(name).display());
    }
    Ok(())
}

// ── Grid parsing ─────────────────────────────────────────────────────────────

/// Parses a percent grid, `lo..hi[:step]` or a single value, into shock
/// fractions: `-40..40:10` gives the nine default shocks, `25` gives
/// `[0.25]`. The step defaults to 10 points.
fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::Grid(format!("{text} ({why})"));
    let (range, step_text) = match text.split_once(':') {
        Some((r, s)) => (r, Some(s)),
        None => (text, None),
    };
    let Some((lo, hi)) = range.split_once("..") else {
        if step_text.is_some() {
            return Err(bad("a step needs a lo..hi range"));
        }
        let single: f64 = range.parse().map_err(|_| bad("not a number"))?;
        return Ok(vec![single / 100.0]);
    };
    let lo: f64 = lo.parse().map_err(|_| bad("lower bound is not a number"))?;
    let hi: f64 = hi.parse().map_err(|_| bad("upper bound is not a number"))?;
    let step: f64 = match step_text {
        Some(s) => s.parse().map_err(|_| bad("step is not a number"))?,
        None => 10.0,
    };
    if !step.is_finite() || step <= 0.0 {
        return Err(bad("step must be positive"));
    }
    if hi < lo {
        return Err(bad("upper bound below lower bound"));
    }
    let mut grid = Vec::new();
    // Index the lattice instead of accumulating, so fractional steps do
    // not drift.
    for k in 0.. {
        let p = lo + f64::from(k) * step;
        if p > hi + 1e-9 {
            break;
        }
        grid.push(p / 100.0);
    }
    Ok(grid)
}
