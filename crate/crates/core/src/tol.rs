//! Numeric tolerances pinned in one place.
//!
//! Every tolerance that a regression or acceptance test depends on lives
//! here, so a change to any of them is visible in review as a change to this
//! file rather than silently scattered through test code.

/// Maximum absolute row/column gap for a SAM account to count as balanced,
/// in reporting units.
pub const SAM_BALANCE_TOL: f64 = 1e-5;

/// Relative tolerance for reproducing the calibrated benchmark when solving
/// with unchanged endowments.
pub const BENCHMARK_REL_TOL: f64 = 1e-6;

/// Maximum residual max-norm accepted by the Newton solver.
pub const SOLVER_TOL: f64 = 1e-8;

/// Lower bound kept under every strictly positive quantity, price, and
/// income so power-law terms stay finite during line searches.
pub const X_MIN_POSITIVE: f64 = 1e-9;

/// `|WALRAS|` bound at a converged benchmark solution. The dummy absorbs the
/// financial-flows imbalance and must vanish at equilibrium.
pub const WALRAS_TOL: f64 = 1e-7;

/// Calibration must reproduce the benchmark with residuals below this bound
/// (max-norm over all equations, reporting units).
pub const CALIBRATION_RESIDUAL_TOL: f64 = 1e-8;

/// Agreement bound between a first-order condition solved by the model and a
/// brute-force cost-minimization oracle (relative).
pub const FOC_ORACLE_REL_TOL: f64 = 1e-4;

/// Analytic-vs-central-finite-difference Jacobian agreement: absolute floor.
pub const JACOBIAN_ABS_TOL: f64 = 1e-4;
/// Analytic-vs-central-finite-difference Jacobian agreement: relative bound.
pub const JACOBIAN_REL_TOL: f64 = 1e-3;

/// Relative step used by finite-difference Jacobians.
pub const FD_RELATIVE_STEP: f64 = 1e-7;

/// Price-homogeneity check: nominal variables must scale with the numeraire
/// within this relative bound.
pub const HOMOGENEITY_NOMINAL_REL_TOL: f64 = 1e-6;
/// Price-homogeneity check: real quantities must stay put within this bound.
pub const HOMOGENEITY_QUANTITY_REL_TOL: f64 = 1e-8;

/// Estimated water rates must match the arithmetic mean of the measured ones
/// within this bound (absorbs the published rounding to five decimals).
pub const ESTIMATED_RATE_TOL: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[allow(clippy::assertions_on_constants)]
    fn tolerances_are_positive_and_ordered() {
        assert!(SOLVER_TOL < WALRAS_TOL);
        assert!(WALRAS_TOL < BENCHMARK_REL_TOL);
        assert!(BENCHMARK_REL_TOL < SAM_BALANCE_TOL);
        assert!(JACOBIAN_ABS_TOL <= JACOBIAN_REL_TOL);
        assert!(FD_RELATIVE_STEP > 0.0);
        assert!(HOMOGENEITY_QUANTITY_REL_TOL < HOMOGENEITY_NOMINAL_REL_TOL);
        assert!(CALIBRATION_RESIDUAL_TOL > 0.0 && ESTIMATED_RATE_TOL > 0.0);
        assert!(FOC_ORACLE_REL_TOL > 0.0);
    }
}
