use alloc::string::String;

/// Errors produced by the calibration pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate line fit: {0}")]
    DegenerateFit(String),
    #[error("lines are parallel or nearly parallel (sin angle = {sin_angle:e})")]
    DegenerateIntersection { sin_angle: f64 },
    #[error("singular structure matrix (det/trace^2 = {ratio:e})")]
    SingularMatrix { ratio: f64 },
    #[error("undistortion did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("board count mismatch: {left} boards in the left image, {right} in the right image")]
    BoardCountMismatch { left: usize, right: usize },
    #[error("board {board} ({rows}x{cols}) in the left image has no free partner in the right image")]
    NoMatchingBoard { board: usize, rows: usize, cols: usize },
    #[error("initialization failed: {0}")]
    InitFailure(String),
    #[error("optimization failed: {0}")]
    OptimizationFailure(String),
    #[error("trajectory has no valid subsequence of at least {min_length} m")]
    NoValidSubsequence { min_length: f64 },
    #[error("odometry runner failed: {0}")]
    Runner(String),
    #[error("grid search failed: {0}")]
    SearchFailure(String),
    #[error("invalid scene: {0}")]
    Scene(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
