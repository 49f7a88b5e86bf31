//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("domain too small: need |y_min|,|y_max| >= {need}, got [{y_min}, {y_max}]")]
    DomainTooSmall { need: f64, y_min: f64, y_max: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("normalization check failed: {0}")]
    NormalizationError(String),

    #[error("invalid state: {0}")]
    StateInvalid(String),

    #[error("integration halted at s = {s}: {reason}")]
    IntegrationHalt { s: f64, reason: String },

    #[error("step size underflow at s = {s} (h = {h})")]
    StepUnderflow { s: f64, h: f64 },

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("fit refused: {0}")]
    FitRefused(String),

    #[error("insufficient samples: need {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    #[error("geometry violation: {0}")]
    GeometryViolation(String),

    #[error("blow-up detected at t = {t} after {steps} steps")]
    BlowUpDetected {
        t: f64,
        steps: usize,
        /// Last finite snapshot before the overflow.
        last_valid: Box<crate::pde::Field>,
    },

    #[error("interpolation point {x} outside table range [{lo}, {hi}]")]
    InterpolationRange { x: f64, lo: f64, hi: f64 },

    #[error("decomposition failed after {iters} Newton iterations (residual {residual})")]
    DecompositionFailed { iters: usize, residual: f64 },

    #[error("degenerate decomposition configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("state outside the soliton tube: residual {residual} exceeds admission threshold {threshold}")]
    NotInTube { residual: f64, threshold: f64 },

    #[error("search failed: {0}")]
    SearchFailed(String),

    #[error("measurement refused: {0}")]
    MeasurementRefused(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
