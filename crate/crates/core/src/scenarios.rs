//! Water-shock experiments: targeted per-industry scarcity, the
//! economy-wide water market, shock grids, and the two sensitivity
//! studies (rainfed share and water valuation).
//!
//! A sweep never mutates the calibrated model; every point re-assembles
//! the system with shocked exogenous data and solves it, warm-starting
//! from the previous point of its half of the grid.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::accounts::Sam;
use crate::augment::{run_pipeline, AugmentError, WaterFlows, WaterRates};
use crate::calibrate::{calibrate, CalibrateError};
use crate::config::ModelConfig;
use crate::metrics::{self, MetricBundle, MetricsError};
use crate::model::system::assemble;
use crate::model::{Exogenous, Model, ModelError, WaterMobility};
use crate::solve::{newton, SolveError, SolveReport, SolverConfig};
use crate::{Money, Rate, Share, Volume};

/// Largest admissible endowment shock magnitude.
pub const MAX_SHOCK: f64 = 0.4;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("shock {0} lies outside [-{MAX_SHOCK}, {MAX_SHOCK}]")]
    ShockOutOfRange(f64),
    #[error("shock {0} would wipe out the endowment (needs a value > -1)")]
    ShockTooDeep(f64),
    #[error("scenario expects {expected:?} water but the model was calibrated {actual:?}")]
    MobilityMismatch {
        expected: WaterMobility,
        actual: WaterMobility,
    },
    #[error("no positive water endowment for {0}")]
    NoWaterEndowment(String),
    #[error("empty shock grid")]
    EmptyGrid,
    #[error("unknown scenario id {0}")]
    UnknownScenario(String),
    #[error("benchmark solve failed, the model is invalid: {0}")]
    Benchmark(#[source] SolveError),
    #[error("no solved grid point at shock {0:+.2}")]
    MissingPoint(f64),
    #[error("valuation multiplier must be at least 1, got {0}")]
    MultiplierTooSmall(f64),
    #[error("rainfed share {share}: {source}")]
    Rainfed {
        share: Share,
        #[source]
        source: Box<ScenarioError>,
    },
    #[error("valuation multiplier {multiplier}: {source}")]
    Valuation {
        multiplier: f64,
        #[source]
        source: Box<ScenarioError>,
    },
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// What the shock hits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Scarcity confined to the listed industries; water stays
    /// industry-specific, so nobody else can buy the slack.
    Targeted(Vec<String>),
    /// One water market: a single endowment, one economy-wide price.
    Market,
}

/// A configured experiment: what to shock and over which grid.
///
/// Labor is always mobile; capital, land, and other natural resources are
/// always industry-specific. The scenario kind decides water alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    kind: ScenarioKind,
    grid: Vec<f64>,
}

impl ScenarioSpec {
    /// Shock a single industry's water endowment.
    pub fn targeted(industry: impl Into<String>, grid: Vec<f64>) -> Result<Self, ScenarioError> {
        Self::checked(ScenarioKind::Targeted(vec![industry.into()]), grid)
    }

    /// Shock a group of industries together (one scenario may cover
    /// several accounts of one sector).
    pub fn targeted_group(
        industries: Vec<String>,
        grid: Vec<f64>,
    ) -> Result<Self, ScenarioError> {
        Self::checked(ScenarioKind::Targeted(industries), grid)
    }

    /// Shock the economy-wide water endowment.
    pub fn market(grid: Vec<f64>) -> Result<Self, ScenarioError> {
        Self::checked(ScenarioKind::Market, grid)
    }

    fn checked(kind: ScenarioKind, mut grid: Vec<f64>) -> Result<Self, ScenarioError> {
        if grid.is_empty() {
            return Err(ScenarioError::EmptyGrid);
        }
        for &dw in &grid {
            if !dw.is_finite() || dw.abs() > MAX_SHOCK {
                return Err(ScenarioError::ShockOutOfRange(dw));
            }
        }
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        Ok(ScenarioSpec { kind, grid })
    }

    pub fn kind(&self) -> &ScenarioKind {
        &self.kind
    }

    /// Ascending, deduplicated shock grid.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Water mobility the scenario requires of the calibrated model.
    pub fn mobility(&self) -> WaterMobility {
        match self.kind {
            ScenarioKind::Targeted(_) => WaterMobility::Specific,
            ScenarioKind::Market => WaterMobility::Mobile,
        }
    }
}

/// The nine-point default grid, −40% to +40% in 10-point steps.
pub fn default_grid() -> Vec<f64> {
    (-4..=4).map(|k| k as f64 / 10.0).collect()
}

/// Builds the spec for a configured scenario id: ids listed under
/// `[scenarios]` shock their industries as a group; `B` is the market
/// scenario.
pub fn spec_for(cfg: &ModelConfig, id: &str, grid: Vec<f64>) -> Result<ScenarioSpec, ScenarioError> {
    if id == "B" {
        return ScenarioSpec::market(grid);
    }
    match cfg.scenarios.get(id) {
        Some(industries) => ScenarioSpec::targeted_group(industries.clone(), grid),
        None => Err(ScenarioError::UnknownScenario(id.to_string())),
    }
}

/// Returns a copy of `base` with the water endowment scaled by `1 + dw`.
///
/// Targeted shocks touch only the listed industries' endowments; market
/// shocks scale the single economy-wide endowment. Every other entry is
/// bit-identical to `base`.
pub fn apply_shock(
    model: &Model,
    base: &Exogenous,
    spec: &ScenarioSpec,
    dw: f64,
) -> Result<Exogenous, ScenarioError> {
    if dw <= -1.0 {
        return Err(ScenarioError::ShockTooDeep(dw));
    }
    if spec.mobility() != model.mobility {
        return Err(ScenarioError::MobilityMismatch {
            expected: spec.mobility(),
            actual: model.mobility,
        });
    }
    let water = model.sets.water_factor().to_string();
    let mut out = base.clone();
    match &spec.kind {
        ScenarioKind::Targeted(industries) => {
            for ind in industries {
                match out.qfs_specific.get_mut(&(water.clone(), ind.clone())) {
                    Some(e) if *e > 0.0 => *e *= 1.0 + dw,
                    _ => return Err(ScenarioError::NoWaterEndowment(ind.clone())),
                }
            }
        }
        ScenarioKind::Market => match out.qfs_mobile.get_mut(&water) {
            Some(e) if *e > 0.0 => *e *= 1.0 + dw,
            _ => return Err(ScenarioError::NoWaterEndowment(water)),
        },
    }
    Ok(out)
}

/// A successfully solved grid point.
#[derive(Debug, Clone)]
pub struct SolvedPoint {
    /// The shocked exogenous data the point was solved under.
    pub exogenous: Exogenous,
    pub state: Vec<f64>,
    pub report: SolveReport,
    pub metrics: MetricBundle,
}

/// One grid point: the solution, or the solver error left where it failed.
#[derive(Debug)]
pub struct SweepPoint {
    pub dw: f64,
    pub outcome: Result<SolvedPoint, SolveError>,
}

/// A completed sweep over one scenario's grid.
#[derive(Debug)]
pub struct SweepResult {
    pub spec: ScenarioSpec,
    /// Metrics of the calibration benchmark, the Δw = 0 reference.
    pub benchmark: MetricBundle,
    /// Points in ascending Δw order.
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// The point at exactly this shock level, if it is on the grid.
    pub fn point(&self, dw: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.dw == dw)
    }

    /// Solved points in ascending Δw order.
    pub fn solved(&self) -> impl Iterator<Item = (f64, &SolvedPoint)> {
        self.points
            .iter()
            .filter_map(|p| p.outcome.as_ref().ok().map(|s| (p.dw, s)))
    }

    /// Shock levels whose solve failed.
    pub fn failed(&self) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.outcome.is_err())
            .map(|p| p.dw)
            .collect()
    }

    /// Median marginal response of a metric to water volume over the
    /// solved points.
    pub fn median_marginal_response(
        &self,
        value: impl Fn(&MetricBundle) -> f64,
    ) -> Result<Rate, MetricsError> {
        let pts: Vec<(Volume, f64)> = self
            .solved()
            .map(|(_, s)| (s.metrics.water_total, value(&s.metrics)))
            .collect();
        metrics::median_marginal_response(&pts)
    }

    /// Median over non-benchmark shocks of the output-change Gini index
    /// against the benchmark outputs.
    pub fn median_gini(&self) -> Result<f64, MetricsError> {
        let base: Vec<f64> = self.benchmark.output.values().copied().collect();
        let pts: Vec<(f64, f64)> = self
            .solved()
            .map(|(dw, s)| {
                let shocked: Vec<f64> = s.metrics.output.values().copied().collect();
                (dw, metrics::gini_abs_output_change(&base, &shocked))
            })
            .collect();
        metrics::median_gini(&pts)
    }
}

/// Sweeps the scenario grid.
///
/// The unshocked system is solved first from the calibrated benchmark; its
/// failure aborts (the model is unusable). The negative and positive halves
/// then proceed outward in ascending |Δw|, each warm-starting from the last
/// solved point of its half; `parallel` runs the two halves on separate
/// threads, which cannot change the result since they share nothing but the
/// anchor. Failed points are recorded and the sweep continues from the
/// previous warm start.
pub fn run_sweep(
    model: &Model,
    spec: &ScenarioSpec,
    solver: &SolverConfig,
    parallel: bool,
) -> Result<SweepResult, ScenarioError> {
    if spec.mobility() != model.mobility {
        return Err(ScenarioError::MobilityMismatch {
            expected: spec.mobility(),
            actual: model.mobility,
        });
    }
    let sys0 = assemble(model, &model.exogenous)?;
    let (x0, report0) = newton(&sys0, model.benchmark.as_slice(), solver)
        .map_err(ScenarioError::Benchmark)?;
    let benchmark = metrics::bundle(model, &model.exogenous, model.benchmark.as_slice());

    let negatives: Vec<f64> = spec
        .grid
        .iter()
        .rev()
        .copied()
        .filter(|&dw| dw < 0.0)
        .collect();
    let positives: Vec<f64> = spec.grid.iter().copied().filter(|&dw| dw > 0.0).collect();

    let run_half = |half: &[f64]| -> Result<Vec<SweepPoint>, ScenarioError> {
        let mut warm = x0.clone();
        let mut out = Vec::with_capacity(half.len());
        for &dw in half {
            let exo = apply_shock(model, &model.exogenous, spec, dw)?;
            let sys = assemble(model, &exo)?;
            let outcome = match newton(&sys, &warm, solver) {
                Ok((x, report)) => {
                    warm.clone_from(&x);
                    let metrics = metrics::bundle(model, &exo, &x);
                    Ok(SolvedPoint {
                        exogenous: exo,
                        state: x,
                        report,
                        metrics,
                    })
                }
                Err(e) => Err(e),
            };
            out.push(SweepPoint { dw, outcome });
        }
        Ok(out)
    };

    let (neg, pos) = if parallel && !negatives.is_empty() && !positives.is_empty() {
        std::thread::scope(|s| {
            let lo = s.spawn(|| run_half(&negatives));
            let hi = s.spawn(|| run_half(&positives));
            (lo.join().expect("sweep thread"), hi.join().expect("sweep thread"))
        })
    } else {
        (run_half(&negatives), run_half(&positives))
    };
    let mut points = neg?;
    points.extend(pos?);
    if spec.grid.contains(&0.0) {
        let metrics = metrics::bundle(model, &model.exogenous, &x0);
        points.push(SweepPoint {
            dw: 0.0,
            outcome: Ok(SolvedPoint {
                exogenous: model.exogenous.clone(),
                state: x0,
                report: report0,
                metrics,
            }),
        });
    }
    points.sort_by(|a, b| a.dw.total_cmp(&b.dw));

    Ok(SweepResult {
        spec: spec.clone(),
        benchmark,
        points,
    })
}

/// One rainfed-share run with its market sweep.
#[derive(Debug)]
pub struct RainfedRun {
    pub share: Share,
    pub sweep: SweepResult,
}

/// GDP at one (share, shock) cell relative to the baseline split.
#[derive(Debug, Clone, Copy)]
pub struct RainfedDelta {
    pub share: Share,
    pub dw: f64,
    pub gdp: Money,
    /// GDP minus the baseline-share GDP at the same shock level.
    pub delta: Money,
}

#[derive(Debug)]
pub struct RainfedTable {
    pub baseline_share: Share,
    pub runs: Vec<RainfedRun>,
    /// One row per (share, Δw), shares in input order.
    pub deltas: Vec<RainfedDelta>,
}

/// Re-splits the crop industry at each share, rebuilds and re-calibrates
/// the model, runs the market sweep, and tabulates GDP against the
/// baseline-share run.
///
/// The baseline is the configured irrigated share; passing it in `shares`
/// yields exactly zero deltas because identical inputs reproduce identical
/// solutions.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_rainfed(
    raw: &Sam,
    flows: &WaterFlows,
    rates: &WaterRates,
    cfg: &ModelConfig,
    shares: &[Share],
    grid: &[f64],
    solver: &SolverConfig,
    parallel: bool,
) -> Result<RainfedTable, ScenarioError> {
    let baseline_share = cfg.water.irrigated_share;
    let spec = ScenarioSpec::market(grid.to_vec())?;
    let sweep_for = |share: Share| -> Result<SweepResult, ScenarioError> {
        let inner = || -> Result<SweepResult, ScenarioError> {
            let (sam, _) = run_pipeline(raw, flows, rates, cfg, share, 1.0)?;
            let model = calibrate(&sam, cfg, rates, WaterMobility::Mobile)?;
            run_sweep(&model, &spec, solver, parallel)
        };
        inner().map_err(|e| ScenarioError::Rainfed {
            share,
            source: Box::new(e),
        })
    };

    let base = sweep_for(baseline_share)?;
    let base_gdp = |dw: f64| -> Result<Money, ScenarioError> {
        match base.point(dw).map(|p| &p.outcome) {
            Some(Ok(s)) => Ok(s.metrics.gdp),
            _ => Err(ScenarioError::Rainfed {
                share: baseline_share,
                source: Box::new(ScenarioError::MissingPoint(dw)),
            }),
        }
    };

    let mut runs = Vec::with_capacity(shares.len());
    let mut deltas = Vec::new();
    for &share in shares {
        let sweep = sweep_for(share)?;
        for point in &sweep.points {
            match &point.outcome {
                Ok(s) => deltas.push(RainfedDelta {
                    share,
                    dw: point.dw,
                    gdp: s.metrics.gdp,
                    delta: s.metrics.gdp - base_gdp(point.dw)?,
                }),
                Err(_) => {
                    return Err(ScenarioError::Rainfed {
                        share,
                        source: Box::new(ScenarioError::MissingPoint(point.dw)),
                    })
                }
            }
        }
        runs.push(RainfedRun { share, sweep });
    }
    Ok(RainfedTable {
        baseline_share,
        runs,
        deltas,
    })
}

/// One valuation multiplier's market sweep and response summary.
#[derive(Debug)]
pub struct ValuationRun {
    pub multiplier: f64,
    pub sweep: SweepResult,
}

/// Median marginal responses at one multiplier, and their distance from
/// the baseline (multiplier 1) values.
#[derive(Debug, Clone)]
pub struct ValuationRow {
    pub multiplier: f64,
    pub gdp_response: Rate,
    /// Median marginal income response per agent.
    pub income_response: BTreeMap<String, Rate>,
    pub gdp_delta: Rate,
    pub income_delta: BTreeMap<String, Rate>,
}

#[derive(Debug)]
pub struct ValuationTable {
    /// Median marginal GDP response at the baseline valuation.
    pub baseline_gdp_response: Rate,
    /// Median marginal income responses at the baseline valuation.
    pub baseline_income_response: BTreeMap<String, Rate>,
    pub rows: Vec<ValuationRow>,
    pub runs: Vec<ValuationRun>,
}

/// Re-prices water at each multiple of the baseline rates, re-carves the
/// SAM, re-calibrates, runs the market sweep, and reports median marginal
/// responses against the baseline valuation.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_valuation(
    raw: &Sam,
    flows: &WaterFlows,
    rates: &WaterRates,
    cfg: &ModelConfig,
    multipliers: &[f64],
    grid: &[f64],
    solver: &SolverConfig,
    parallel: bool,
) -> Result<ValuationTable, ScenarioError> {
    for &n in multipliers {
        if n < 1.0 || n.is_nan() {
            return Err(ScenarioError::MultiplierTooSmall(n));
        }
    }
    let spec = ScenarioSpec::market(grid.to_vec())?;
    let sweep_for = |n: f64| -> Result<SweepResult, ScenarioError> {
        let inner = || -> Result<SweepResult, ScenarioError> {
            let (sam, _) =
                run_pipeline(raw, flows, rates, cfg, cfg.water.irrigated_share, n)?;
            let scaled = rates.scale(n);
            let model = calibrate(&sam, cfg, &scaled, WaterMobility::Mobile)?;
            run_sweep(&model, &spec, solver, parallel)
        };
        inner().map_err(|e| ScenarioError::Valuation {
            multiplier: n,
            source: Box::new(e),
        })
    };
    let responses = |sweep: &SweepResult| -> Result<(Rate, BTreeMap<String, Rate>), ScenarioError> {
        let gdp = sweep.median_marginal_response(|b| b.gdp)?;
        let mut incomes = BTreeMap::new();
        for agent in sweep.benchmark.incomes.keys() {
            let r = sweep.median_marginal_response(|b| b.incomes[agent])?;
            incomes.insert(agent.clone(), r);
        }
        Ok((gdp, incomes))
    };

    let base = sweep_for(1.0)?;
    let (base_gdp, base_incomes) = responses(&base)?;
    let mut rows = Vec::with_capacity(multipliers.len());
    let mut runs = vec![ValuationRun {
        multiplier: 1.0,
        sweep: base,
    }];
    for &n in multipliers {
        let sweep = sweep_for(n)?;
        let (gdp, incomes) = responses(&sweep)?;
        rows.push(ValuationRow {
            multiplier: n,
            gdp_response: gdp,
            gdp_delta: gdp - base_gdp,
            income_delta: incomes
                .iter()
                .map(|(a, r)| (a.clone(), r - base_incomes[a]))
                .collect(),
            income_response: incomes,
        });
        runs.push(ValuationRun {
            multiplier: n,
            sweep,
        });
    }
    Ok(ValuationTable {
        baseline_gdp_response: base_gdp,
        baseline_income_response: base_incomes,
        rows,
        runs,
    })
}
