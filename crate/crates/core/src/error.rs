use thiserror::Error;

/// Errors raised by the set calculus, the dynamics and the reachability pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("matrix is singular ({0})")]
    Singular(&'static str),

    #[error("support direction must be nonzero")]
    ZeroDirection,

    #[error("summand {index} has zero trace; minimal-trace weight undefined")]
    ZeroTrace { index: usize },

    #[error("fusion is empty or degenerate (delta = {delta})")]
    EmptyFusion { delta: f64 },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("duplicate index {0}")]
    DuplicateIndex(usize),

    #[error("pitch {pitch} rad too close to the gimbal singularity")]
    GimbalProximity { pitch: f64 },

    #[error("desired thrust vector is degenerate (norm {norm})")]
    DegenerateThrust { norm: f64 },

    #[error("state transition lost conditioning: |Psi Psi^-1 - I| = {deviation}")]
    Conditioning { deviation: f64 },

    #[error("predicted disturbance interval is empty in channel {channel}")]
    EmptyPrediction { channel: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("state fault: {0}")]
    StateFault(String),
}

pub type Result<T> = std::result::Result<T, FrsError>;
