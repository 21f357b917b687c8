use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum DreamError {
    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("non-finite values produced by {layer}")]
    NumericOverflow { layer: &'static str },

    #[error("non-finite gradient for {param}")]
    NonFiniteGradient { param: &'static str },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DreamError {
    /// True for errors caused by arithmetic blow-up rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            DreamError::NumericOverflow { .. }
                | DreamError::NonFiniteGradient { .. }
                | DreamError::Diverged { .. }
        )
    }

    /// True for configuration mistakes (bad flags, unknown variant names).
    pub fn is_config(&self) -> bool {
        matches!(self, DreamError::Config(_) | DreamError::Unsupported(_))
    }
}

pub type Result<T, E = DreamError> = std::result::Result<T, E>;
