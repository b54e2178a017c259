//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the dynamics, estimation, control and simulation layers.
#[derive(Debug, Error)]
pub enum ExoError {
    /// A vector or matrix argument has the wrong dimension for the requested
    /// support model or operation.
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An input contained NaN or infinity.
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    /// Interpolation factor outside its valid range.
    #[error("interpolation factor alpha = {alpha} outside {range}")]
    InvalidAlpha { alpha: f64, range: &'static str },

    /// A Jacobian or linear system lost rank (e.g. both legs fully extended
    /// and parallel).
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    /// Generic argument violation (negative threshold, chirp time outside
    /// the sweep, cutoff above Nyquist, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Friction identification cannot separate Coulomb from viscous terms
    /// for this joint (velocity never changes sign, or no motion at all).
    #[error("friction regressor is rank-deficient for joint {joint}: {reason}")]
    Unidentifiable { joint: String, reason: String },

    /// The controller cannot run in the current gait state.
    #[error("controller refuses to run in gait state {0}")]
    UnsupportedGaitState(&'static str),

    /// Simulation state became non-finite.
    #[error("simulation aborted at t = {t} s: {reason}")]
    SimulationAborted { t: f64, reason: String },

    /// Metric windowing found no complete gait cycles.
    #[error("log contains no complete gait cycles for {0}")]
    NoCompleteCycles(&'static str),

    /// Scenario or model configuration error.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ExoError>;
