//! Pure functional forms used by the equation system: CES and CET
//! aggregators and the linear expenditure system.

use thiserror::Error;

use crate::Money;

#[derive(Debug, Error, PartialEq)]
pub enum FuncError {
    #[error("CES input {index} is {value}; with ρ > 0 a zero input collapses the aggregate")]
    ZeroInput { index: usize, value: f64 },
    #[error("δ vector has {deltas} entries but there are {inputs} inputs")]
    ShapeMismatch { deltas: usize, inputs: usize },
    #[error("ρ must be nonzero and greater than -1, got {0}")]
    BadExponent(f64),
    #[error(
        "subsistence bundle costs {needed} but only {available} is available"
    )]
    SubsistenceUnaffordable { needed: Money, available: Money },
}

/// CES aggregate `α · (Σ_k δ_k x_k^{-ρ})^{-1/ρ}`.
///
/// Degree-1 homogeneous in the inputs. ρ relates to the substitution
/// elasticity via ρ = 1/σ − 1, so ρ ∈ (−1, 0) ∪ (0, ∞).
pub fn eval_ces(alpha: f64, deltas: &[f64], rho: f64, inputs: &[f64]) -> Result<f64, FuncError> {
    if deltas.len() != inputs.len() {
        return Err(FuncError::ShapeMismatch {
            deltas: deltas.len(),
            inputs: inputs.len(),
        });
    }
    if rho <= -1.0 || rho == 0.0 {
        return Err(FuncError::BadExponent(rho));
    }
    let mut sum = 0.0;
    for (k, (&d, &x)) in deltas.iter().zip(inputs).enumerate() {
        if x <= 0.0 {
            if rho > 0.0 {
                return Err(FuncError::ZeroInput { index: k, value: x });
            }
            continue;
        }
        sum += d * x.powf(-rho);
    }
    Ok(alpha * sum.powf(-1.0 / rho))
}

/// CET aggregate `α · (δ QE^ρ + (1−δ) QD^ρ)^{1/ρ}` with ρ > 1
/// (ρ = 1/σ + 1 for transformation elasticity σ).
pub fn eval_cet(alpha: f64, delta: f64, rho: f64, qe: f64, qd: f64) -> Result<f64, FuncError> {
    if rho <= 1.0 {
        return Err(FuncError::BadExponent(rho));
    }
    Ok(alpha * (delta * qe.powf(rho) + (1.0 - delta) * qd.powf(rho)).powf(1.0 / rho))
}

/// Linear-expenditure-system demand: subsistence quantities plus marginal
/// budget shares applied to supernumerary income.
///
/// `Q_c = γ_c + β_c (disposable − Σ PQ·γ) / PQ_c`; expenditure exhausts the
/// disposable budget when Σβ = 1.
pub fn household_demand(
    disposable: Money,
    prices: &[f64],
    gamma: &[f64],
    beta: &[f64],
) -> Result<Vec<f64>, FuncError> {
    let needed: Money = prices.iter().zip(gamma).map(|(p, g)| p * g).sum();
    if disposable < needed {
        return Err(FuncError::SubsistenceUnaffordable {
            needed,
            available: disposable,
        });
    }
    let supernumerary = disposable - needed;
    Ok(prices
        .iter()
        .zip(gamma)
        .zip(beta)
        .map(|((&p, &g), &b)| g + b * supernumerary / p)
        .collect())
}
