use thiserror::Error;

/// Errors raised by the counterfactual toolkit.
#[derive(Debug, Error)]
pub enum CfxError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid class index {index} for a model with {classes} classes")]
    InvalidClass { index: usize, classes: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible constraints: {0}")]
    InfeasibleConstraints(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CfxError> = std::result::Result<T, E>;

impl CfxError {
    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        CfxError::Shape {
            context,
            expected,
            actual,
        }
    }
}
