//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("battery power {power_w:.1} W exceeds deliverable limit {limit_w:.1} W")]
    PowerExceedsBatteryLimit { power_w: f64, limit_w: f64 },

    #[error("query ({omega:.1} rad/s, {torque:.1} N*m) outside map domain {context}")]
    OutOfDomain {
        omega: f64,
        torque: f64,
        context: String,
    },

    #[error("motor spec rejected: {0}")]
    InvalidMotorSpec(String),

    #[error("polynomial fit failed: {0}")]
    FitFailed(String),

    #[error("torque demand {demand:.1} N*m exceeds combined envelope {limit:.1} N*m at {omega:.1} rad/s")]
    TorqueDemandExceedsEnvelope {
        demand: f64,
        limit: f64,
        omega: f64,
    },

    #[error("{path}:{row}: {message}")]
    CsvParse {
        path: String,
        row: usize,
        message: String,
    },

    #[error("scenario invariant violated at row {row}: {message}")]
    ScenarioInvariant { row: usize, message: String },

    #[error("prediction request out of range: {0}")]
    PredictionRange(String),

    #[error("phase shift |{shift}| must be smaller than horizon {horizon}")]
    ShiftTooLarge { shift: i64, horizon: usize },

    #[error("problem construction failed: {0}")]
    OcpBuild(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("metric denominator degenerate: {0}")]
    DegenerateMetric(String),

    #[error("collision at t={t:.1} s: gap {gap:.3} m (ego {ego:.2} m, preceding {preceding:.2} m)")]
    Collision { t: f64, gap: f64, ego: f64, preceding: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
