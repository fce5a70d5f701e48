//! Damped Newton for square nonlinear systems with elementwise lower bounds.
//!
//! Solves `f(x) = 0, x >= x_min` by Newton steps with dense LU (partial
//! pivoting), a backtracking line search (halving, floor `min_step`), and
//! projection of iterates onto the bound box. Projection is clip-and-
//! recompute: after clamping, residuals are evaluated at the clamped point,
//! so the accepted iterate is always feasible.
//!
//! The solver is generic over [`System`] so it can be exercised on scalar
//! textbook problems in isolation from the equilibrium model.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::tol::{FD_RELATIVE_STEP, SOLVER_TOL};

/// A square differentiable system with lower bounds.
pub trait System {
    fn dim(&self) -> usize;
    /// Writes `f(x)` into `out` (length `dim`).
    fn residuals(&self, x: &[f64], out: &mut [f64]);
    /// Writes the analytic Jacobian `∂f_i/∂x_j` into `out` (`dim × dim`).
    fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>);
    /// Elementwise lower bounds; use `f64::NEG_INFINITY` for free variables.
    fn lower_bounds(&self) -> Vec<f64>;
    /// Human-readable variable name for diagnostics.
    fn var_name(&self, i: usize) -> String {
        format!("x[{i}]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    /// Central differences with relative step [`FD_RELATIVE_STEP`]; falls
    /// back to a forward difference when a bound blocks the downward probe.
    FiniteDifference,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Convergence bound on the residual max-norm.
    pub tol: f64,
    /// Newton steps shorter than this (max-norm) count as stagnation.
    pub tol_step: f64,
    pub max_iterations: usize,
    /// Line-search floor: steps shorter than this abort the solve.
    pub min_step: f64,
    pub jacobian: JacobianMode,
    /// Consecutive on/off flips of one bound before giving up.
    pub max_bound_flips: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: SOLVER_TOL,
            tol_step: 1e-12,
            max_iterations: 200,
            min_step: 1e-10,
            jacobian: JacobianMode::Analytic,
            max_bound_flips: 10,
        }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("Jacobian is singular at iteration {iteration} (pivot {pivot:?})")]
    SingularJacobian {
        iteration: usize,
        /// Index of the first vanishing pivot in the LU factorization, when
        /// one can be identified.
        pivot: Option<usize>,
    },
    #[error(
        "line search stalled at iteration {iteration} (residual max-norm {residual_norm:.3e})"
    )]
    LineSearchStalled {
        iteration: usize,
        residual_norm: f64,
    },
    #[error("no convergence in {iterations} iterations (residual max-norm {residual_norm:.3e})")]
    MaxIterations {
        iterations: usize,
        residual_norm: f64,
    },
    #[error("bound on {var} flipped active/inactive {flips} consecutive iterations")]
    BoundThrashing { var: String, flips: usize },
    #[error("non-finite residual at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("dimension mismatch: system is {dim}, start vector is {given}")]
    Dimension { dim: usize, given: usize },
}

/// One line of the iteration trace.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual_norm: f64,
    pub step: f64,
    pub active_bounds: usize,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_norm: f64,
    /// Indices of variables sitting exactly on their lower bound.
    pub active_bounds: Vec<usize>,
    pub trace: Vec<IterationRecord>,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

fn clamp(x: &mut [f64], lo: &[f64]) {
    for (xi, &l) in x.iter_mut().zip(lo) {
        if *xi < l {
            *xi = l;
        }
    }
}

/// Locates the first near-zero diagonal entry of `U` in an LU
/// factorization, as a hint to which equation/variable pair degenerated.
fn vanishing_pivot(jac: &DMatrix<f64>) -> Option<usize> {
    let lu = jac.clone().lu();
    let u = lu.u();
    let scale = jac.iter().fold(0.0_f64, |m, &v| m.max(v.abs())).max(1.0);
    (0..u.nrows()).find(|&i| u[(i, i)].abs() <= 1e-14 * scale)
}

/// Central-difference Jacobian, the independent check on analytic
/// derivatives and the backing for [`JacobianMode::FiniteDifference`].
pub fn fd_jacobian(sys: &dyn System, x: &[f64], out: &mut DMatrix<f64>) {
    let n = sys.dim();
    let lo = sys.lower_bounds();
    let mut xp = x.to_vec();
    let mut rp = vec![0.0; n];
    let mut rm = vec![0.0; n];
    for j in 0..n {
        let h = FD_RELATIVE_STEP * x[j].abs().max(1.0);
        let down_ok = x[j] - h >= lo[j];
        let (a, b, denom) = if down_ok {
            (x[j] + h, x[j] - h, 2.0 * h)
        } else {
            (x[j] + h, x[j], h)
        };
        xp[j] = a;
        sys.residuals(&xp, &mut rp);
        xp[j] = b;
        sys.residuals(&xp, &mut rm);
        xp[j] = x[j];
        for i in 0..n {
            out[(i, j)] = (rp[i] - rm[i]) / denom;
        }
    }
}

/// Runs damped Newton from `x0`. On success returns the solution and a
/// report; the trace always carries one record per accepted iteration.
pub fn newton(
    sys: &dyn System,
    x0: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    let n = sys.dim();
    if x0.len() != n {
        return Err(SolveError::Dimension {
            dim: n,
            given: x0.len(),
        });
    }
    let lo = sys.lower_bounds();
    let mut x = x0.to_vec();
    clamp(&mut x, &lo);

    let mut r = vec![0.0; n];
    sys.residuals(&x, &mut r);
    if !r.iter().all(|v| v.is_finite()) {
        return Err(SolveError::NonFinite { iteration: 0 });
    }

    let mut jac = DMatrix::zeros(n, n);
    let mut trace = Vec::new();
    let mut was_active: Vec<bool> = x.iter().zip(&lo).map(|(&xi, &l)| xi <= l).collect();
    let mut flip_streak = vec![0_usize; n];

    for iteration in 0..cfg.max_iterations {
        let rnorm = max_norm(&r);
        if rnorm <= cfg.tol {
            let active: Vec<usize> = (0..n).filter(|&i| x[i] <= lo[i]).collect();
            return Ok((
                x,
                SolveReport {
                    iterations: iteration,
                    residual_norm: rnorm,
                    active_bounds: active,
                    trace,
                },
            ));
        }

        // On stagnation under an analytic Jacobian, one finite-difference
        // refresh is attempted before declaring failure.
        let modes: &[JacobianMode] = match cfg.jacobian {
            JacobianMode::Analytic => &[JacobianMode::Analytic, JacobianMode::FiniteDifference],
            JacobianMode::FiniteDifference => &[JacobianMode::FiniteDifference],
        };
        let mut progressed = false;
        let mut xn = vec![0.0; n];
        let mut rn = vec![0.0; n];
        let mut taken = 0.0;
        for &mode in modes {
            match mode {
                JacobianMode::Analytic => sys.jacobian(&x, &mut jac),
                JacobianMode::FiniteDifference => fd_jacobian(sys, &x, &mut jac),
            }
            let lu = jac.clone().lu();
            let rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
            let dx = match lu.solve(&rhs) {
                Some(dx) if dx.iter().all(|v| v.is_finite()) => dx,
                _ => {
                    return Err(SolveError::SingularJacobian {
                        iteration,
                        pivot: vanishing_pivot(&jac),
                    });
                }
            };
            if max_norm(dx.as_slice()) < cfg.tol_step {
                continue;
            }

            // Backtracking on the Euclidean merit: accept the first step
            // that strictly reduces ||f||₂ after projection.
            let base = two_norm(&r);
            let mut step = 1.0_f64;
            while step >= cfg.min_step {
                for i in 0..n {
                    xn[i] = x[i] + step * dx[i];
                }
                clamp(&mut xn, &lo);
                sys.residuals(&xn, &mut rn);
                if rn.iter().all(|v| v.is_finite()) && two_norm(&rn) < base {
                    progressed = true;
                    taken = step;
                    break;
                }
                step *= 0.5;
            }
            if progressed {
                break;
            }
        }
        if !progressed {
            return Err(SolveError::LineSearchStalled {
                iteration,
                residual_norm: rnorm,
            });
        }

        x.copy_from_slice(&xn);
        r.copy_from_slice(&rn);

        let mut active_count = 0;
        for i in 0..n {
            let active = x[i] <= lo[i];
            if active {
                active_count += 1;
            }
            if active != was_active[i] {
                flip_streak[i] += 1;
                if flip_streak[i] > cfg.max_bound_flips {
                    return Err(SolveError::BoundThrashing {
                        var: sys.var_name(i),
                        flips: flip_streak[i],
                    });
                }
            } else {
                flip_streak[i] = 0;
            }
            was_active[i] = active;
        }
        trace.push(IterationRecord {
            iteration,
            residual_norm: max_norm(&r),
            step: taken,
            active_bounds: active_count,
        });
    }

    Err(SolveError::MaxIterations {
        iterations: cfg.max_iterations,
        residual_norm: max_norm(&r),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(x) = x² − 4, x ≥ 0.
    struct Quadratic;
    impl System for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn residuals(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0] * x[0] - 4.0;
        }
        fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>) {
            out[(0, 0)] = 2.0 * x[0];
        }
        fn lower_bounds(&self) -> Vec<f64> {
            vec![0.0]
        }
    }

    #[test]
    fn scalar_quadratic_converges_quickly() {
        let (x, report) = newton(&Quadratic, &[1.0], &SolverConfig::default()).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-8);
        assert!(report.iterations <= 8, "took {} iterations", report.iterations);
        assert!(report.active_bounds.is_empty());
    }

    /// Root at (2, 0) with the second variable pinned on its bound.
    struct Boundary;
    impl System for Boundary {
        fn dim(&self) -> usize {
            2
        }
        fn residuals(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0] + x[1] - 2.0;
            out[1] = x[1] * (x[0] + 1.0);
        }
        fn jacobian(&self, x: &[f64], out: &mut DMatrix<f64>) {
            out[(0, 0)] = 1.0;
            out[(0, 1)] = 1.0;
            out[(1, 0)] = x[1];
            out[(1, 1)] = x[0] + 1.0;
        }
        fn lower_bounds(&self) -> Vec<f64> {
            vec![0.0, 0.0]
        }
    }

    #[test]
    fn boundary_root_reports_active_bound() {
        let (x, report) = newton(&Boundary, &[1.0, 1.0], &SolverConfig::default()).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-8);
        assert_eq!(x[1], 0.0);
        assert_eq!(report.active_bounds, vec![1]);
    }

    #[test]
    fn finite_difference_mode_matches_analytic_solution() {
        let cfg = SolverConfig {
            jacobian: JacobianMode::FiniteDifference,
            ..SolverConfig::default()
        };
        let (x, _) = newton(&Quadratic, &[1.0], &cfg).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn fd_jacobian_matches_analytic_on_smooth_system() {
        let sys = Boundary;
        let x = [1.5, 0.75];
        let mut analytic = DMatrix::zeros(2, 2);
        let mut fd = DMatrix::zeros(2, 2);
        sys.jacobian(&x, &mut analytic);
        fd_jacobian(&sys, &x, &mut fd);
        for i in 0..2 {
            for j in 0..2 {
                assert!((analytic[(i, j)] - fd[(i, j)]).abs() < 1e-6);
            }
        }
    }

    struct Inconsistent;
    impl System for Inconsistent {
        fn dim(&self) -> usize {
            2
        }
        fn residuals(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0] + x[1];
            out[1] = x[0] + x[1] - 1.0;
        }
        fn jacobian(&self, _x: &[f64], out: &mut DMatrix<f64>) {
            out[(0, 0)] = 1.0;
            out[(0, 1)] = 1.0;
            out[(1, 0)] = 1.0;
            out[(1, 1)] = 1.0;
        }
        fn lower_bounds(&self) -> Vec<f64> {
            vec![f64::NEG_INFINITY, f64::NEG_INFINITY]
        }
    }

    #[test]
    fn singular_jacobian_is_reported() {
        let err = newton(&Inconsistent, &[0.5, 0.5], &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, SolveError::SingularJacobian { .. }));
    }

    #[test]
    fn iteration_budget_is_enforced() {
        let cfg = SolverConfig {
            max_iterations: 1,
            ..SolverConfig::default()
        };
        let err = newton(&Quadratic, &[100.0], &cfg).unwrap_err();
        assert!(matches!(err, SolveError::MaxIterations { .. }));
    }

    #[test]
    fn identical_inputs_give_bitwise_identical_solutions() {
        let (a, ra) = newton(&Boundary, &[1.3, 0.9], &SolverConfig::default()).unwrap();
        let (b, rb) = newton(&Boundary, &[1.3, 0.9], &SolverConfig::default()).unwrap();
        assert_eq!(ra.iterations, rb.iterations);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn trace_records_every_accepted_iteration() {
        let (_, report) = newton(&Quadratic, &[1.0], &SolverConfig::default()).unwrap();
        assert_eq!(report.trace.len(), report.iterations);
        for w in report.trace.windows(2) {
            assert!(w[1].iteration == w[0].iteration + 1);
        }
    }
}
