//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the modelling and assessment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Two series cannot be aligned (different step or incommensurate starts).
    #[error("series are not alignable: {0}")]
    NonAlignable(String),

    /// A slice or alignment produced no overlapping observations.
    #[error("empty overlap: {0}")]
    EmptyOverlap(String),

    /// Input is degenerate for the requested statistic (constant, too short).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Matrix/vector shapes do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Covariance matrix is not positive definite even after jitter escalation.
    #[error("covariance not positive definite (jitter escalated to {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },

    /// Every optimisation restart failed to produce a usable model.
    #[error("hyperparameter optimisation failed: {0}")]
    OptimizationFailed(String),

    /// Coordinate descent did not reach tolerance within the iteration budget.
    #[error(
        "coordinate descent did not converge after {iterations} sweeps \
         (last relative change {last_change:e}, tolerance {tolerance:e})"
    )]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        tolerance: f64,
    },

    /// Subset enumeration would exceed the configured hard cap.
    #[error("subset pair count {count} exceeds hard cap {cap}")]
    CombinatorialLimit { count: u128, cap: u64 },

    /// Counterfactual mean is too close to zero for the ratio statistic.
    #[error("counterfactual mean {mean:e} is below the division guard {guard:e}")]
    CounterfactualNearZero { mean: f64, guard: f64 },

    /// Bootstrap could not assemble enough valid replicates.
    #[error("bootstrap failed: {0}")]
    BootstrapFailed(String),

    /// No target/control pair survived correlation screening.
    #[error(
        "no qualified pairs: best observed correlation {best_r:.4} is below rho_min {rho_min}"
    )]
    NoQualifiedPairs { best_r: f64, rho_min: f64 },

    /// Pre-intervention period does not precede the intervention period.
    #[error("period order violated: {0}")]
    PeriodOrder(String),

    /// Configuration or input validation failure.
    #[error("invalid input: {0}")]
    Validation(String),

    /// CSV or file parsing failure.
    #[error("parse error: {0}")]
    Parse(String),

    /// Serialized artifact has an unsupported schema version.
    #[error("schema version mismatch: found {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
