use thiserror::Error;

/// Errors surfaced by every layer of the library.
#[derive(Debug, Error)]
pub enum DtzoError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An objective (or residual estimator) returned a non-finite value.
    #[error("non-finite evaluation ({value}) at query point {point:?}")]
    Evaluation { value: f64, point: Vec<f64> },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The requested operation needs information the problem does not expose
    /// (white-box gradients, closed-form structure).
    #[error("unsupported mode: {0}")]
    Mode(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("malformed frame: {0}")]
    Frame(String),

    #[error("parse error: {0}")]
    Parse(String),

    /// Wraps a failure with the iteration at which it happened.
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<DtzoError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DtzoError {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        DtzoError::Dimension {
            what,
            expected,
            got,
        }
    }

    pub(crate) fn at(self, iteration: usize) -> Self {
        match self {
            e @ DtzoError::AtIteration { .. } => e,
            e => DtzoError::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = DtzoError> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(DtzoError::dim(what, expected, got))
    }
}
