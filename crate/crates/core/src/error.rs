use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("integration unstable at axial node {node} (slot {slot}): value {value:e}")]
    Unstable { node: usize, slot: usize, value: f64 },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },

    #[error("node budget of {budget} expansions exceeded (horizon {horizon})")]
    BudgetExceeded { budget: u64, horizon: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("unbounded neuron {neuron} in layer {layer}: tighten the input box")]
    UnboundedNeuron { layer: usize, neuron: usize },

    #[error("calibration target {target} unreachable; achievable breakthrough steps span {lo}..={hi}")]
    Unreachable { target: usize, lo: usize, hi: usize },

    #[error("closed-loop run failed: {0}")]
    RunFailed(String),

    #[error("environment stepped after episode end")]
    EpisodeDone,

    #[error("missing model artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        field: field.into(),
        reason: reason.into(),
    }
}
