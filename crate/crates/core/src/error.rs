use std::io;

use thiserror::Error;

use crate::topology::UnitAddr;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown activation kind `{0}`")]
    UnknownActivation(String),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("unit {0} is out of range")]
    UnitOutOfRange(UnitAddr),

    #[error("unit {0} is a copy unit and has no learnable weights")]
    NotLearnable(UnitAddr),

    #[error("shape mismatch: expected {expected} entries, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("input has {found} components but the model expects {expected}")]
    InputDimension { expected: usize, found: usize },

    #[error("non-finite input component at position {0}")]
    NonFiniteInput(usize),

    #[error("non-finite loss or gradient")]
    NonFinite,

    #[error("dataset `{0}` is empty")]
    EmptyDataset(&'static str),

    #[error("subtopologies do not share a master topology")]
    MasterMismatch,

    #[error("no active unit to mutate")]
    NoActiveUnit,

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("unknown constraint kind `{0}`")]
    UnknownConstraint(String),

    #[error("empty sampling region for constraint `{0}`")]
    EmptyRegion(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
