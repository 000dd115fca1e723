use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("sample rejection budget exhausted for the {class} class after {budget} draws")]
    RejectionBudget { class: &'static str, budget: usize },

    #[error("non-finite loss encountered during gradient check")]
    NonFiniteLoss,

    #[error("singular normal equations; retry with a ridge penalty lambda > 0")]
    SingularSystem,

    #[error("malformed ground-truth line {line}: {detail}")]
    GroundTruth { line: usize, detail: String },

    #[error("{0}")]
    Invalid(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
