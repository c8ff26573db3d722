//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by graph ingestion, numeric kernels, and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("temporal graph is empty")]
    EmptyGraph,

    #[error("degenerate time span: every event occurs at t={0}")]
    DegenerateSpan(u64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown entity id {0}")]
    UnknownEntity(u32),

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("task construction: entity {entity} has {available} facts, needs more than {shots}")]
    TaskConstruction {
        entity: u32,
        available: usize,
        shots: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("loss function is not deterministic: forward passes returned {first} and {second}")]
    NonDeterministicLoss { first: f64, second: f64 },

    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: String },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Tag an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
