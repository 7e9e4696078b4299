use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A point is off the manifold or a field is not a section where one is required.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// A step left the domain where the retraction is trusted.
    #[error("step-size error: step of length {length:.3e} exceeds the limit {limit:.3e}")]
    StepSize { length: f64, limit: f64 },

    #[error("rank degeneracy at {point}: singular values {singular_values}")]
    RankDegeneracy {
        point: String,
        singular_values: String,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Evaluation time not on the simulation grid.
    #[error("grid error: {0}")]
    Grid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown scenario `{id}`{}", hint.as_ref().map(|h| format!(" (did you mean `{h}`?)")).unwrap_or_default())]
    UnknownScenario { id: String, hint: Option<String> },

    #[error("unknown check `{id}`{}", hint.as_ref().map(|h| format!(" (did you mean `{h}`?)")).unwrap_or_default())]
    UnknownCheck { id: String, hint: Option<String> },

    #[error("scenario validation failed: {0}")]
    Validation(String),
}
