use std::io;

use thiserror::Error;

/// Failure modes of a single black-box evaluator call.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluator timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("malformed evaluator response: {0}")]
    Malformed(String),
    #[error("evaluator process exited (status: {0:?})")]
    ProcessExited(Option<i32>),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("evaluator reported an error: {0}")]
    Remote(String),
    #[error("non-finite reward {0}")]
    NonFinite(f64),
    #[error("invalid evaluator input: {0}")]
    Input(String),
    #[error("component `{name}` failed: {source}")]
    Component {
        name: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error("evaluator i/o: {0}")]
    Io(#[from] io::Error),
}

impl EvalError {
    /// Short stable name of the variant, for tallies and logs.
    pub fn kind(&self) -> &'static str {
        match self {
            EvalError::Timeout(_) => "timeout",
            EvalError::Malformed(_) => "malformed",
            EvalError::ProcessExited(_) => "process_exited",
            EvalError::Protocol(_) => "protocol",
            EvalError::Remote(_) => "remote",
            EvalError::NonFinite(_) => "non_finite",
            EvalError::Input(_) => "input",
            EvalError::Component { .. } => "component",
            EvalError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("evaluation of candidate {index} failed: {source}")]
    Candidate {
        index: usize,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("design failed at t={t}: {source}")]
    AtStep {
        t: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
