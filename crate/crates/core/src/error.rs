use thiserror::Error;

/// Errors raised anywhere in the discretization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("integration did not converge{}: {msg}", element.map(|e| format!(" on element {e}")).unwrap_or_default())]
    Integration { element: Option<usize>, msg: String },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("spectral bracket violated: {0}")]
    SpectralBracket(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attach an element id to an integration failure.
    pub(crate) fn on_element(self, element: usize) -> Self {
        match self {
            Error::Integration { msg, .. } => Error::Integration {
                element: Some(element),
                msg,
            },
            other => other,
        }
    }
}
