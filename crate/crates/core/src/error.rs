use thiserror::Error;

use crate::weights::ValidationReport;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum HardyError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("point outside the collar: delta_tilde = {delta_tilde:.6e} >= beta = {beta:.6e}")]
    OutsideCollar { delta_tilde: f64, beta: f64 },

    #[error("point lies on the singular set")]
    SingularPoint,

    #[error("point on the cut locus of the projection distance: {0}")]
    CutLocus(String),

    #[error("chart coordinates |y| = {norm:.6e} exceed the chart radius {radius:.6e}")]
    OutOfChart { norm: f64, radius: f64 },

    #[error("finite-difference step rejected: {0}")]
    BadStep(String),

    #[error("{function} evaluated outside its domain: {detail}")]
    Domain { function: &'static str, detail: String },

    #[error("expression error: {0}")]
    Expr(#[from] crate::expr::ExprError),

    #[error("weight hypothesis violated ({condition}): {detail}")]
    HypothesisViolated {
        condition: crate::weights::Condition,
        detail: String,
        report: Option<Box<ValidationReport>>,
    },

    #[error("grid rejected: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("shifted operator is not positive definite after {retries} shift reductions")]
    Indefinite { retries: usize },

    #[error("zero denominator in Rayleigh quotient")]
    ZeroDenominator,

    #[error("plateau not certified at this resolution: {0}")]
    PlateauNotCertified(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HardyError>;
