use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contact solver did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("stiffness entry {value} at step {step} is below the invertibility threshold")]
    SingularStiffness { step: usize, value: f64 },
    #[error("demonstration lost contact on {lost} of {total} steps")]
    DemoFailure { lost: usize, total: usize },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("parameter `{0}` does not influence the loss")]
    DisconnectedGraph(String),
    #[error("diffusion needs at least one step, got {0}")]
    InvalidSteps(usize),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: zero variance or fewer than two pairs")]
    DegenerateVariance,
    #[error("front member ({0}, {1}) does not dominate the reference point")]
    ReferenceDominated(f64, f64),
    #[error("evaluator failed: {0}")]
    EvaluatorFailure(String),
    #[error("subsample would be empty")]
    EmptyResult,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid contact problem: {0}")]
    InvalidProblem(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("hash mismatch for {path}")]
    HashMismatch { path: PathBuf },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
