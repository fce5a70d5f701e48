//! Social accounting matrix (SAM) tooling and a water-focused computable
//! general equilibrium (CGE) engine.
//!
//! The crate is organized around the analysis pipeline:
//!
//! 1. [`accounts`] — SAM ingestion, validation, and aggregation.
//! 2. [`balance`] — L1-minimal rebalancing of small SAM discrepancies via a
//!    self-contained simplex solver ([`simplex`]).
//! 3. [`augment`] — synthesis of factor accounts missing from source data
//!    (water intake, land, other natural resources) and separation of import
//!    taxes and margins.
//! 4. [`model`] — the equation system: nested CES production, trade
//!    allocation, demand, and institutional closure.
//! 5. [`calibrate`] — benchmark calibration of all share and shift parameters
//!    from a model-ready SAM.
//! 6. [`solve`] — damped Newton with bound projection for square nonlinear
//!    systems.
//! 7. [`scenarios`] — water-endowment shock sweeps and sensitivity analyses.
//! 8. [`metrics`] — GDP, absorption, trade balance, marginal responses, and
//!    output-concentration (Gini) summaries.
//!
//! The bundled synthetic fixture (see [`fixture`]) exercises every stage and
//! anchors the regression suite.

pub mod accounts;
pub mod augment;
pub mod balance;
pub mod calibrate;
pub mod config;
pub mod fixture;
pub mod metrics;
pub mod model;
pub mod scenarios;
pub mod simplex;
pub mod solve;
pub mod tol;

/// Monetary value in SAM reporting units (millions of CAD in the fixtures).
pub type Money = f64;
/// Physical water volume. Reporting unit: millions of cubic meters, so that
/// `Money / Volume` is CAD per cubic meter.
pub type Volume = f64;
/// Price of water per physical unit (CAD per cubic meter).
pub type Rate = f64;
/// Dimensionless share in `[0, 1]`.
pub type Share = f64;
