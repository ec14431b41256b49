use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure mode of the library. Variant names are stable and reported
/// verbatim by the command-line front end.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("NonConvergence: {0}")]
    NonConvergence(String),

    #[error("DefectiveMatrix: {0}")]
    DefectiveMatrix(String),

    #[error("DimensionMismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("IndexOutOfRange: index {index} for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("InvalidGroup: {0}")]
    InvalidGroup(String),

    #[error("VanishingDenominator: |E_q - E_p| = {gap:e} below {threshold:e}")]
    VanishingDenominator { gap: f64, threshold: f64 },

    #[error("InvalidParams: {0}")]
    InvalidParams(String),

    #[error("SingleQubitEP: |lambda| = {0:e}")]
    SingleQubitEP(f64),

    #[error("InvalidLabel: {0}")]
    InvalidLabel(String),

    #[error("NotPTSymmetric: imaginary leak {0:e} in characteristic polynomial")]
    NotPTSymmetric(f64),

    #[error("EmptyContour: no sign change of p^3+q^2 on the grid")]
    EmptyContour,

    #[error("NoConvergence: EP3 Newton search stalled after {iterations} iterations (|p|+|q| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("RankDeficient: second-order minor {0:e} below threshold")]
    RankDeficient(f64),

    #[error("AmbiguousCase: {0}")]
    AmbiguousCase(String),

    #[error("ParityAmbiguous: level {level} has <P> = {expectation}")]
    ParityAmbiguous { level: usize, expectation: f64 },

    #[error("TrackingAmbiguous: best overlap {overlap:.3} at step {step}")]
    TrackingAmbiguous { step: usize, overlap: f64 },

    #[error("ConfigError: {0}")]
    Config(String),
}
