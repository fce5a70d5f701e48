//! Sensitivity studies on the bundled example economy: rainfed share and
//! water valuation.

use watercge_core::fixture;
use watercge_core::scenarios::{sensitivity_rainfed, sensitivity_valuation, ScenarioError};
use watercge_core::solve::SolverConfig;

const GRID: [f64; 3] = [-0.2, 0.0, 0.2];

#[test]
fn rainfed_baseline_share_gives_exact_zero_deltas() {
    let fx = fixture::build();
    let baseline = fx.config.water.irrigated_share;
    let table = sensitivity_rainfed(
        &fx.raw,
        &fx.flows,
        &fx.rates,
        &fx.config,
        &[baseline, 0.1, 0.3],
        &GRID,
        &SolverConfig::default(),
        false,
    )
    .unwrap();

    assert_eq!(table.baseline_share, baseline);
    assert_eq!(table.runs.len(), 3);
    assert_eq!(table.deltas.len(), 9, "one row per (share, shock)");
    for row in table.deltas.iter().filter(|r| r.share == baseline) {
        assert_eq!(
            row.delta, 0.0,
            "baseline share must reproduce itself exactly at {}",
            row.dw
        );
    }
    // Off-baseline shares genuinely move GDP somewhere on the grid.
    for &share in &[0.1, 0.3] {
        assert!(
            table
                .deltas
                .iter()
                .any(|r| r.share == share && r.delta != 0.0),
            "share {share} produced a flat delta column"
        );
    }
}

#[test]
fn rainfed_deltas_replay_from_stored_sweeps() {
    let fx = fixture::build();
    let baseline = fx.config.water.irrigated_share;
    let table = sensitivity_rainfed(
        &fx.raw,
        &fx.flows,
        &fx.rates,
        &fx.config,
        &[baseline, 0.35],
        &GRID,
        &SolverConfig::default(),
        false,
    )
    .unwrap();
    let base_run = table
        .runs
        .iter()
        .find(|r| r.share == baseline)
        .expect("baseline run stored");
    for row in &table.deltas {
        let run = table.runs.iter().find(|r| r.share == row.share).unwrap();
        let gdp = run
            .sweep
            .point(row.dw)
            .unwrap()
            .outcome
            .as_ref()
            .unwrap()
            .metrics
            .gdp;
        let base = base_run
            .sweep
            .point(row.dw)
            .unwrap()
            .outcome
            .as_ref()
            .unwrap()
            .metrics
            .gdp;
        assert_eq!(row.gdp, gdp);
        assert_eq!(row.delta, gdp - base);
    }
}

#[test]
fn valuation_multiplier_one_gives_exact_zero_deltas() {
    let fx = fixture::build();
    let table = sensitivity_valuation(
        &fx.raw,
        &fx.flows,
        &fx.rates,
        &fx.config,
        &[1.0, 2.0, 3.0, 4.0],
        &GRID,
        &SolverConfig::default(),
        false,
    )
    .unwrap();

    assert_eq!(table.rows.len(), 4);
    assert_eq!(table.runs.len(), 5, "baseline run plus one per multiplier");
    let unit = &table.rows[0];
    assert_eq!(unit.multiplier, 1.0);
    assert_eq!(unit.gdp_delta, 0.0);
    for (agent, delta) in &unit.income_delta {
        assert_eq!(*delta, 0.0, "nonzero income delta for {agent} at multiplier 1");
    }
    // Responses replay from the stored sweeps.
    for (row, run) in table.rows.iter().zip(table.runs.iter().skip(1)) {
        assert_eq!(row.multiplier, run.multiplier);
        let replayed = run.sweep.median_marginal_response(|b| b.gdp).unwrap();
        assert_eq!(row.gdp_response, replayed);
        assert_eq!(row.gdp_delta, row.gdp_response - table.baseline_gdp_response);
    }
}

#[test]
fn valuation_rejects_multipliers_below_one() {
    let fx = fixture::build();
    let err = sensitivity_valuation(
        &fx.raw,
        &fx.flows,
        &fx.rates,
        &fx.config,
        &[0.5],
        &GRID,
        &SolverConfig::default(),
        false,
    )
    .unwrap_err();
    assert!(matches!(err, ScenarioError::MultiplierTooSmall(_)));
}
