//! Deterministic text writers for sweep and sensitivity results.
//!
//! Every file is assembled in memory in a fixed order (grids ascending,
//! agents in code order) and numbers are printed with the shortest
//! round-tripping representation, so identical inputs give byte-identical
//! files and reruns diff clean.

use std::fmt::Write as _;
use std::path::Path;

use watercge_core::metrics::{gini_abs_output_change, MetricBundle};
use watercge_core::model::Model;
use watercge_core::scenarios::{RainfedTable, ScenarioKind, SweepResult, ValuationTable};
use watercge_core::solve::SolveReport;

use crate::{ensure_parent, CliError};

/// Shock label for directory names and table rows: the percent value
/// printed exactly (`-40`, `0`, `12.5`).
fn pct(dw: f64) -> String {
    format!("{}", dw * 100.0)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| CliError::Io(path.display().to_string(), e))
}

/// Writes `metrics.csv`, `summary.txt`, and a `state.csv`/`report.txt`
/// pair per solved shock under `dir`.
pub fn write_sweep(
    dir: &Path,
    id: &str,
    model: &Model,
    sweep: &SweepResult,
    trace: bool,
) -> Result<(), CliError> {
    write_text(&dir.join("metrics.csv"), &metrics_csv(sweep))?;
    write_text(&dir.join("summary.txt"), &summary_txt(id, sweep))?;
    for (dw, point) in sweep.solved() {
        let sub = dir.join(pct(dw));
        write_text(&sub.join("state.csv"), &state_csv(model, &point.state))?;
        write_text(
            &sub.join("report.txt"),
            &report_txt(model, dw, &point.report, trace),
        )?;
    }
    Ok(())
}

/// One row per solved shock: endowment, macro aggregates, agent incomes,
/// and the output-change concentration index against the benchmark.
fn metrics_csv(sweep: &SweepResult) -> String {
    let bench = &sweep.benchmark;
    let mut s = String::from("dw,water_m3,GDP,TABS,trade");
    for agent in bench.incomes.keys() {
        let _ = write!(s, ",Y{}", agent.to_uppercase());
    }
    s.push_str(",gini\n");
    let base: Vec<f64> = bench.output.values().copied().collect();
    for (dw, point) in sweep.solved() {
        let m = &point.metrics;
        let shocked: Vec<f64> = m.output.values().copied().collect();
        let gini = gini_abs_output_change(&base, &shocked);
        let _ = write!(
            s,
            "{},{},{},{},{}",
            pct(dw),
            m.water_total,
            m.gdp,
            m.tabs,
            m.trade_balance
        );
        for income in m.incomes.values() {
            let _ = write!(s, ",{income}");
        }
        let _ = writeln!(s, ",{gini}");
    }
    s
}

fn summary_txt(id: &str, sweep: &SweepResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {id}");
    match sweep.spec.kind() {
        ScenarioKind::Market => {
            let _ = writeln!(s, "shock: economy-wide water market");
        }
        ScenarioKind::Targeted(industries) => {
            let _ = writeln!(s, "shock: targeted industries {}", industries.join(" "));
        }
    }
    let grid: Vec<String> = sweep.spec.grid().iter().map(|&d| pct(d)).collect();
    let _ = writeln!(s, "grid (%): {}", grid.join(" "));
    let _ = writeln!(
        s,
        "solved: {} of {}",
        sweep.solved().count(),
        sweep.points.len()
    );
    let failed = sweep.failed();
    if failed.is_empty() {
        let _ = writeln!(s, "failed shocks: none");
    } else {
        let list: Vec<String> = failed.iter().map(|&d| pct(d)).collect();
        let _ = writeln!(s, "failed shocks (%): {}", list.join(" "));
    }
    let b = &sweep.benchmark;
    let _ = writeln!(
        s,
        "benchmark: GDP {} TABS {} trade {}",
        b.gdp, b.tabs, b.trade_balance
    );
    let _ = writeln!(s, "median marginal response per unit of water:");
    let _ = writeln!(s, "  GDP: {}", response(sweep, |m| m.gdp));
    let _ = writeln!(s, "  TABS: {}", response(sweep, |m| m.tabs));
    for agent in b.incomes.keys() {
        let _ = writeln!(
            s,
            "  Y{}: {}",
            agent.to_uppercase(),
            response(sweep, |m| m.incomes[agent])
        );
    }
    match sweep.median_gini() {
        Ok(g) => {
            let _ = writeln!(s, "median output gini: {g}");
        }
        Err(_) => {
            let _ = writeln!(s, "median output gini: n/a (no nonzero shocks solved)");
        }
    }
    s
}

fn response(sweep: &SweepResult, value: impl Fn(&MetricBundle) -> f64) -> String {
    match sweep.median_marginal_response(value) {
        Ok(r) => format!("{r}"),
        Err(_) => "n/a (needs at least two solved points)".into(),
    }
}

fn state_csv(model: &Model, x: &[f64]) -> String {
    let mut s = String::from("variable,value\n");
    for (i, v) in x.iter().enumerate() {
        let _ = writeln!(s, "{},{}", model.layout.name(i), v);
    }
    s
}

fn report_txt(model: &Model, dw: f64, report: &SolveReport, trace: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "shock (%): {}", pct(dw));
    let _ = writeln!(s, "iterations: {}", report.iterations);
    let _ = writeln!(s, "residual max-norm: {:e}", report.residual_norm);
    if report.active_bounds.is_empty() {
        let _ = writeln!(s, "active lower bounds: none");
    } else {
        let names: Vec<&str> = report
            .active_bounds
            .iter()
            .map(|&i| model.layout.name(i))
            .collect();
        let _ = writeln!(s, "active lower bounds: {}", names.join(" "));
    }
    if trace {
        let _ = writeln!(s, "iteration,residual,step,active_bounds");
        for r in &report.trace {
            let _ = writeln!(
                s,
                "{},{:e},{},{}",
                r.iteration, r.residual_norm, r.step, r.active_bounds
            );
        }
    }
    s
}

/// Writes the share-by-shock GDP delta table and its summary.
pub fn write_rainfed(dir: &Path, table: &RainfedTable) -> Result<(), CliError> {
    let mut s = String::from("share,dw,GDP,GDP_delta\n");
    for d in &table.deltas {
        let _ = writeln!(s, "{},{},{},{}", d.share, pct(d.dw), d.gdp, d.delta);
    }
    write_text(&dir.join("deltas.csv"), &s)?;

    let mut t = String::new();
    let _ = writeln!(t, "baseline irrigated share: {}", table.baseline_share);
    let shares: Vec<String> = table.runs.iter().map(|r| r.share.to_string()).collect();
    let _ = writeln!(t, "shares run: {}", shares.join(" "));
    let max = table
        .deltas
        .iter()
        .map(|d| d.delta.abs())
        .fold(0.0, f64::max);
    let _ = writeln!(t, "max |GDP delta|: {max}");
    write_text(&dir.join("summary.txt"), &t)
}

/// Writes the per-multiplier median-marginal-response table and its
/// summary.
pub fn write_valuation(dir: &Path, table: &ValuationTable) -> Result<(), CliError> {
    let mut s = String::from("multiplier,GDP_response,GDP_delta");
    for agent in table.baseline_income_response.keys() {
        let upper = agent.to_uppercase();
        let _ = write!(s, ",Y{upper}_response,Y{upper}_delta");
    }
    s.push('\n');
    for row in &table.rows {
        let _ = write!(s, "{},{},{}", row.multiplier, row.gdp_response, row.gdp_delta);
        for agent in table.baseline_income_response.keys() {
            let _ = write!(s, ",{},{}", row.income_response[agent], row.income_delta[agent]);
        }
        s.push('\n');
    }
    write_text(&dir.join("responses.csv"), &s)?;

    let mut t = String::new();
    let _ = writeln!(t, "baseline GDP response: {}", table.baseline_gdp_response);
    for (agent, r) in &table.baseline_income_response {
        let _ = writeln!(t, "baseline Y{} response: {}", agent.to_uppercase(), r);
    }
    let multipliers: Vec<String> = table.rows.iter().map(|r| r.multiplier.to_string()).collect();
    let _ = writeln!(t, "multipliers run: {}", multipliers.join(" "));
    write_text(&dir.join("summary.txt"), &t)
}
