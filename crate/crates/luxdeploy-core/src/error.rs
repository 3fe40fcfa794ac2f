//! Crate-wide error type.

use crate::solver::DeploymentSolution;
use thiserror::Error;

/// Errors surfaced by the modelling, forecasting and placement stages.
#[derive(Debug, Error)]
pub enum Error {
    /// A user falls outside the receiver field-of-view cone; no finite
    /// transmit power can serve it from the given position.
    #[error("user at ({x:.3}, {y:.3}) m is outside the receiver field of view")]
    UserOutsideFov { x: f64, y: f64 },

    /// An aerial cell was handed an empty user set.
    #[error("cell has no users")]
    EmptyCell,

    /// Every pixel of the grid is zero; there is nothing to fit.
    #[error("grid carries no illumination (all pixels are zero)")]
    NoIllumination,

    /// Fewer usable observations than mixture components.
    #[error("not enough data: {have} positive pixels for {need} components")]
    InsufficientData { have: usize, need: usize },

    /// A vector or matrix does not have the declared dimensions.
    #[error("shape mismatch: expected length {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    /// Recurrent forecasting needs at least two frames of history.
    #[error("time series too short: {len} frames (need at least 2)")]
    SeriesTooShort { len: usize },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    /// Dual ascent exhausted its iteration budget before reaching
    /// feasibility; the best iterate found is attached.
    #[error(
        "dual ascent did not converge within {iterations} iterations \
         (max constraint violation {max_violation:.3e})"
    )]
    NotConverged {
        iterations: usize,
        max_violation: f64,
        best: Box<DeploymentSolution>,
    },

    /// More aerial cells requested than there are users to fill them.
    #[error("cannot split {users} users into {uavs} non-empty cells")]
    TooManyUavs { users: usize, uavs: usize },

    /// A checkpoint or artifact file is malformed.
    #[error("bad file format: {0}")]
    Format(String),

    /// A text artifact (grid CSV, config, series file) failed to parse.
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
