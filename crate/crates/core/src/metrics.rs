//! Reported indicators derived from solved states.
//!
//! Everything here is a pure function of a model, its exogenous data, and a
//! solution vector; nothing mutates, so callers may evaluate states in
//! parallel. The expenditure-side aggregates are pinned against independent
//! SAM column sums at the benchmark by the test suite.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{institution_flows, var, Exogenous, Model, WaterMobility};
use crate::{Money, Rate, Volume};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("marginal responses need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("zero water-volume step between consecutive grid points")]
    ZeroVolumeStep,
    #[error("no non-benchmark points in the sweep")]
    EmptySweep,
}

/// Headline indicators of one solved state.
#[derive(Debug, Clone)]
pub struct MetricBundle {
    pub gdp: Money,
    /// Total absorption: all domestic final spending at purchaser prices.
    pub tabs: Money,
    pub trade_balance: Money,
    /// Current income per agent.
    pub incomes: BTreeMap<String, Money>,
    /// Activity level per industry.
    pub output: BTreeMap<String, f64>,
    /// Water intake per using industry.
    pub water_volumes: BTreeMap<String, Volume>,
    /// Water price per using industry (the market price repeated when
    /// water is mobile).
    pub water_prices: BTreeMap<String, Rate>,
    /// The economy-wide water price, present when water is mobile.
    pub water_market_price: Option<Rate>,
    /// Total water endowment behind the state.
    pub water_total: Volume,
}

/// Value added at factor cost plus net indirect taxes.
pub fn gdp(model: &Model, exo: &Exogenous, x: &[f64]) -> Money {
    let l = &model.layout;
    let mut va = 0.0;
    for i in &model.sets.industries {
        va += x[l.idx(&var::pva(i)).unwrap()] * x[l.idx(&var::qva(i)).unwrap()];
    }
    va + model.tax_revenue(exo, x)
}

/// Consumption of every agent plus investment of every capital account, at
/// purchaser prices.
pub fn tabs(model: &Model, exo: &Exogenous, x: &[f64]) -> Money {
    let flows = institution_flows(model, exo, x);
    flows.consumption.values().sum::<Money>() + flows.investment.values().sum::<Money>()
}

/// Exports minus imports in domestic currency; positive for a surplus.
pub fn trade_balance(model: &Model, exo: &Exogenous, x: &[f64]) -> Money {
    let l = &model.layout;
    let exr = x[l.idx(var::EXR).unwrap()];
    let mut balance = 0.0;
    for c in &model.sets.commodities {
        if model.sets.exported.contains(c) {
            balance += exo.pwe[c] * exr * x[l.idx(&var::qe(c)).unwrap()];
        }
        if model.sets.imported.contains(c) {
            balance -= exo.pwm[c] * exr * x[l.idx(&var::qm(c)).unwrap()];
        }
    }
    balance
}

/// Evaluates the whole bundle at a state.
pub fn bundle(model: &Model, exo: &Exogenous, x: &[f64]) -> MetricBundle {
    let l = &model.layout;
    let water = model.sets.water_factor().to_string();
    let users = model
        .sets
        .factor_users
        .get(&water)
        .cloned()
        .unwrap_or_default();

    let mut water_volumes = BTreeMap::new();
    let mut water_prices = BTreeMap::new();
    let mut water_market_price = None;
    let water_total;
    match model.mobility {
        WaterMobility::Specific => {
            let mut total = 0.0;
            for i in &users {
                let q = exo.qfs_specific[&(water.clone(), i.clone())];
                water_volumes.insert(i.clone(), q);
                water_prices.insert(i.clone(), x[l.idx(&var::wfs(&water, i)).unwrap()]);
                total += q;
            }
            water_total = total;
        }
        WaterMobility::Mobile => {
            let price = x[l.idx(&var::wf(&water)).unwrap()];
            water_market_price = Some(price);
            for i in &users {
                water_volumes.insert(i.clone(), x[l.idx(&var::qf(&water, i)).unwrap()]);
                water_prices.insert(i.clone(), price);
            }
            water_total = exo.qfs_mobile[&water];
        }
    }

    MetricBundle {
        gdp: gdp(model, exo, x),
        tabs: tabs(model, exo, x),
        trade_balance: trade_balance(model, exo, x),
        incomes: model
            .sets
            .agents
            .iter()
            .map(|a| (a.clone(), x[l.idx(&var::yi(a)).unwrap()]))
            .collect(),
        output: model
            .sets
            .industries
            .iter()
            .map(|i| (i.clone(), x[l.idx(&var::qa(i)).unwrap()]))
            .collect(),
        water_volumes,
        water_prices,
        water_market_price,
        water_total,
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median forward-difference slope of a variable against water volume.
///
/// Points are `(volume, value)`; they are sorted by volume internally, so
/// the result is invariant to input order.
pub fn median_marginal_response(points: &[(Volume, f64)]) -> Result<Rate, MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::TooFewPoints(points.len()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut marginals = Vec::with_capacity(sorted.len() - 1);
    for pair in sorted.windows(2) {
        let dv = pair[1].0 - pair[0].0;
        if dv == 0.0 {
            return Err(MetricsError::ZeroVolumeStep);
        }
        marginals.push((pair[1].1 - pair[0].1) / dv);
    }
    marginals.sort_by(f64::total_cmp);
    Ok(median(&marginals))
}

/// Concentration of relative output changes across industries.
///
/// For `v_i = |shocked_i − baseline_i| / baseline_i`, returns the Gini
/// index `Σ_ij |v_i − v_j| / (2 n² v̄)`; an all-zero change vector has no
/// concentration and maps to 0.
pub fn gini_abs_output_change(baseline: &[f64], shocked: &[f64]) -> f64 {
    assert_eq!(
        baseline.len(),
        shocked.len(),
        "output vectors must align"
    );
    assert!(
        baseline.iter().all(|&b| b > 0.0),
        "baseline outputs must be positive"
    );
    let v: Vec<f64> = baseline
        .iter()
        .zip(shocked)
        .map(|(&b, &s)| (s - b).abs() / b)
        .collect();
    gini(&v)
}

fn gini(v: &[f64]) -> f64 {
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for a in v {
        for b in v {
            sum += (a - b).abs();
        }
    }
    sum / (2.0 * (n * n) as f64 * mean)
}

/// Median of per-shock Gini indices, excluding the benchmark point whose
/// index is identically zero.
///
/// Points are `(Δw, gini)`.
pub fn median_gini(points: &[(f64, f64)]) -> Result<f64, MetricsError> {
    let mut ginis: Vec<f64> = points
        .iter()
        .filter(|(dw, _)| *dw != 0.0)
        .map(|(_, g)| *g)
        .collect();
    if ginis.is_empty() {
        return Err(MetricsError::EmptySweep);
    }
    ginis.sort_by(f64::total_cmp);
    Ok(median(&ginis))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginal_response_matches_hand_computation() {
        // Volumes 90, 100, 110 with values 995, 1000, 1003: forward slopes
        // 0.5 and 0.3, median 0.4.
        let pts = [(90.0, 995.0), (100.0, 1000.0), (110.0, 1003.0)];
        let m = median_marginal_response(&pts).unwrap();
        assert!((m - 0.4).abs() < 1e-12, "median {m}");
    }

    #[test]
    fn marginal_response_ignores_input_order() {
        let fwd = [(90.0, 995.0), (100.0, 1000.0), (110.0, 1003.0)];
        let rev = [(110.0, 1003.0), (100.0, 1000.0), (90.0, 995.0)];
        assert_eq!(
            median_marginal_response(&fwd).unwrap(),
            median_marginal_response(&rev).unwrap()
        );
    }

    #[test]
    fn marginal_response_is_exact_on_linear_data() {
        let pts: Vec<(f64, f64)> = (0..7).map(|k| (k as f64, 3.0 * k as f64 + 1.0)).collect();
        assert_eq!(median_marginal_response(&pts).unwrap(), 3.0);
    }

    #[test]
    fn marginal_response_rejects_degenerate_input() {
        assert!(matches!(
            median_marginal_response(&[(1.0, 2.0)]),
            Err(MetricsError::TooFewPoints(1))
        ));
        assert!(matches!(
            median_marginal_response(&[(1.0, 2.0), (1.0, 3.0)]),
            Err(MetricsError::ZeroVolumeStep)
        ));
    }

    #[test]
    fn gini_of_counting_vector_is_a_quarter() {
        let base = [1.0, 1.0, 1.0, 1.0];
        let shocked = [2.0, 3.0, 4.0, 5.0];
        // v = {1,2,3,4}: pairwise sum 20, mean 2.5, 20/(2·16·2.5) = 0.25.
        let g = gini_abs_output_change(&base, &shocked);
        assert!((g - 0.25).abs() < 1e-15, "gini {g}");
    }

    #[test]
    fn gini_of_single_nonzero_is_three_quarters() {
        let base = [1.0, 1.0, 1.0, 1.0];
        let shocked = [1.0, 1.0, 1.0, 2.0];
        let g = gini_abs_output_change(&base, &shocked);
        assert!((g - 0.75).abs() < 1e-15, "gini {g}");
    }

    #[test]
    fn gini_of_uniform_or_zero_change_is_zero() {
        let base = [2.0, 4.0, 8.0];
        let uniform = [3.0, 6.0, 12.0];
        assert_eq!(gini_abs_output_change(&base, &uniform), 0.0);
        assert_eq!(gini_abs_output_change(&base, &base), 0.0);
    }

    #[test]
    fn median_gini_skips_the_benchmark_point() {
        let pts = [(-0.1, 0.2), (0.0, 0.0), (0.1, 0.5), (0.2, 0.9)];
        assert_eq!(median_gini(&pts).unwrap(), 0.5);
        assert!(matches!(
            median_gini(&[(0.0, 0.0)]),
            Err(MetricsError::EmptySweep)
        ));
        assert_eq!(median_gini(&[(0.3, 0.7)]).unwrap(), 0.7);
    }
}
