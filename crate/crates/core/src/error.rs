use thiserror::Error;

/// Errors produced by the identification library.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor operation received operands of incompatible shape.
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Vector or matrix dimensions do not match the model they are used with.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The data cannot be used as requested (too short, degenerate, malformed).
    #[error("data error: {0}")]
    Data(String),

    /// A named graph input or parameter was not bound before evaluation.
    #[error("unbound graph leaf `{0}`")]
    Unbound(String),

    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
