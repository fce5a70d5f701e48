//! Minimal dense two-phase simplex for the small linear programs that SAM
//! rebalancing produces (tens of variables, a handful of equality rows).
//!
//! Solves `minimize c·x subject to A·x = b, x >= 0`. Pivoting uses Bland's
//! rule throughout, which makes the method immune to cycling and — because
//! there is no randomization and no hashing — bitwise deterministic across
//! runs. This is deliberately not a general-purpose LP code: no sparsity, no
//! bounded variables, no dual simplex. Upper bounds are expected to be
//! modeled as explicit slack rows by the caller.

use thiserror::Error;

/// Pivot/feasibility epsilon. Problems here carry values around 1e-2..1e4,
/// so 1e-9 separates true zeros from rounding noise comfortably.
const EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("problem is infeasible (phase-1 residual {0:.3e})")]
    Infeasible(f64),
    #[error("objective is unbounded below")]
    Unbounded,
    #[error("malformed problem: {0}")]
    Malformed(String),
}

/// `minimize objective · x  s.t.  rows · x = rhs, x >= 0`.
#[derive(Debug, Clone)]
pub struct Lp {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

pub fn solve(lp: &Lp) -> Result<LpSolution, LpError> {
    let n = lp.objective.len();
    let m = lp.rows.len();
    for (i, r) in lp.rows.iter().enumerate() {
        if r.len() != n {
            return Err(LpError::Malformed(format!(
                "row {i} has {} coefficients, expected {n}",
                r.len()
            )));
        }
    }
    if lp.rhs.len() != m {
        return Err(LpError::Malformed(format!(
            "{} rhs entries for {m} rows",
            lp.rhs.len()
        )));
    }

    // Tableau layout: columns 0..n structural, n..n+m artificial, last = rhs.
    // Rows are normalized so rhs >= 0, giving the artificials an identity
    // basis for phase 1.
    let width = n + m + 1;
    let mut t = vec![vec![0.0_f64; width]; m];
    for (i, row) in t.iter_mut().enumerate() {
        let flip = if lp.rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for (j, coeff) in lp.rows[i].iter().enumerate() {
            row[j] = flip * coeff;
        }
        row[n + i] = 1.0;
        row[width - 1] = flip * lp.rhs[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // Phase 1: minimize the sum of artificials.
    let mut cost = vec![0.0_f64; width];
    cost[n..n + m].fill(1.0);
    price_out(&mut cost, &t, &basis);
    iterate(&mut t, &mut basis, &mut cost, n + m)?;
    let residual = -cost[width - 1];
    if residual > 1e-7 {
        return Err(LpError::Infeasible(residual));
    }
    // Pivot any artificial still in the basis (at zero level) onto a
    // structural column so phase 2 can ignore artificials entirely. A row
    // with no structural pivot is redundant and is blanked out.
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > EPS) {
                pivot(&mut t, &mut basis, i, j);
            } else {
                for v in t[i].iter_mut() {
                    *v = 0.0;
                }
            }
        }
    }

    // Phase 2: the real objective, artificial columns barred from entering.
    let mut cost = vec![0.0_f64; width];
    cost[..n].copy_from_slice(&lp.objective);
    price_out(&mut cost, &t, &basis);
    iterate(&mut t, &mut basis, &mut cost, n)?;

    let mut x = vec![0.0_f64; n];
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[i][width - 1];
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, objective })
}

/// Makes the cost row consistent with the current basis (reduced costs of
/// basic columns forced to zero).
fn price_out(cost: &mut [f64], t: &[Vec<f64>], basis: &[usize]) {
    for (i, &b) in basis.iter().enumerate() {
        let c = cost[b];
        if c != 0.0 {
            for j in 0..cost.len() {
                cost[j] -= c * t[i][j];
            }
        }
    }
}

/// Bland's rule iterations until no negative reduced cost remains among the
/// first `enterable` columns.
fn iterate(
    t: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &mut [f64],
    enterable: usize,
) -> Result<(), LpError> {
    let width = cost.len();
    loop {
        let Some(entering) = (0..enterable).find(|&j| cost[j] < -EPS) else {
            return Ok(());
        };
        // Ratio test; ties broken by smallest basis index (Bland).
        let mut leaving: Option<(usize, f64)> = None;
        for (i, row) in t.iter().enumerate() {
            let a = row[entering];
            if a > EPS {
                let ratio = row[width - 1] / a;
                let better = match leaving {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - EPS || (ratio < lr + EPS && basis[i] < basis[li])
                    }
                };
                if better {
                    leaving = Some((i, ratio));
                }
            }
        }
        let Some((row, _)) = leaving else {
            return Err(LpError::Unbounded);
        };
        pivot(t, basis, row, entering);
        let c = cost[entering];
        if c != 0.0 {
            for j in 0..width {
                cost[j] -= c * t[row][j];
            }
        }
    }
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let p = t[row][col];
    for v in t[row].iter_mut() {
        *v /= p;
    }
    for i in 0..t.len() {
        if i != row {
            let f = t[i][col];
            if f != 0.0 {
                for j in 0..t[i].len() {
                    t[i][j] -= f * t[row][j];
                }
            }
        }
    }
    basis[row] = col;
}
