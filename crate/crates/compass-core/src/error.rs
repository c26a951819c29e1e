//! Error types shared across the compiler pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("unknown chip '{0}' (builtins: S, M, L)")]
    UnknownChip(String),

    #[error("unknown model '{0}' (builtins: vgg16, resnet18, squeezenet)")]
    UnknownModel(String),

    #[error("cycle detected in network graph: {0}")]
    Cycle(String),

    #[error("shape error at node {node}: {reason}")]
    Shape { node: usize, reason: String },

    #[error("node {0} is not crossbar-mappable")]
    NotMappable(usize),

    #[error("layer {layer} cannot be mapped: {reason}")]
    UnmappableLayer { layer: usize, reason: String },

    #[error("core packing failed: {0}")]
    PackingFailure(String),

    #[error("degenerate expected fitness over unit span [{0}, {1})")]
    DegenerateExpectation(usize, usize),

    #[error("global memory overflow in partition {partition}: {needed} bytes live, limit {limit}")]
    GlobalMemoryOverflow {
        partition: usize,
        needed: u64,
        limit: u64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(field: &str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnmappableLayer { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
