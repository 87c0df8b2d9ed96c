use thiserror::Error;

use crate::maps::MapKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NonHermitianInput { deviation: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("action is not linear (residual {residual:.3e})")]
    NonLinearAction { residual: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("map kind {kind} is incompatible with {reason}")]
    IncompatibleKind { kind: MapKind, reason: String },

    #[error("record sample is missing field `{field}` required by {kind}")]
    MissingRecordField { kind: MapKind, field: &'static str },

    #[error("guessed record variance {variance:.3e} is not positive; time step too large")]
    VariancePositivityViolated { variance: f64 },

    #[error("conditioned state has vanishing norm ({norm:.3e})")]
    ZeroNormState { norm: f64 },

    #[error("quadrature not converged: doubling nodes changed result by {change:.3e}")]
    QuadratureNotConverged { change: f64 },

    #[error("inconclusive power-law fit: {0}")]
    InconclusiveFit(String),

    #[error("gamma*dt = {gamma_dt} is outside the asymptotic regime (must be <= {max})")]
    AsymptoticRegimeViolated { gamma_dt: f64, max: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
