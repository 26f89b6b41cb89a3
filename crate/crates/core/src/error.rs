use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: line {line}: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("probability {0} outside [0, 1]")]
    Domain(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("logistic regression did not converge: {0}")]
    NonConvergence(String),

    #[error("model `{0}` has no fitted calibrator")]
    Unfitted(String),

    #[error("query `{query_id}` has no entry for model `{model_id}`")]
    MissingModel { query_id: String, model_id: String },

    #[error("invalid chain configuration: {0}")]
    Config(String),

    #[error("grid too large: {0}")]
    GridTooLarge(String),

    #[error("provider does not expose logprobs")]
    NoLogprobs,

    #[error("choice tokens missing from top logprobs: {0:?}")]
    MissingChoices(Vec<String>),

    #[error("provider call to `{model_id}` failed: {message}")]
    Provider { model_id: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
