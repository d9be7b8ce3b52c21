use alloc::string::String;

/// Errors raised by model validation, generators, solvers and the engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("constraint variant requires `{0}` in the budgets")]
    MissingVariantParameter(&'static str),

    #[error("level {level} out of range for {dimension} grid of size {size}")]
    LevelOutOfRange {
        dimension: &'static str,
        level: usize,
        size: usize,
    },

    #[error("step size requested for slot 0; slots are numbered from 1")]
    ZeroSlot,

    #[error("trace exhausted for device {device} at slot {slot}")]
    TraceExhausted { device: usize, slot: u64 },

    #[error("instance too large for brute force: {points} grid points")]
    InstanceTooLarge { points: f64 },

    #[error("trajectory is empty")]
    EmptyTrajectory,

    #[error("device {device} reported a decision that disagrees with the broadcast prices at slot {slot}")]
    Desync { device: usize, slot: u64 },

    #[error("unexpected report: {0}")]
    UnexpectedReport(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.into(),
        reason: reason.into(),
    }
}
