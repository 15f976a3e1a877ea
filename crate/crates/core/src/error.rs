use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dense materialization refused: {entries} entries exceeds cap of {cap}")]
    DenseCapExceeded { entries: usize, cap: usize },

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("iteration diverged at k={iteration} ({iterate}): {detail}")]
    Divergence {
        iteration: usize,
        iterate: &'static str,
        detail: String,
    },

    #[error("root solve failed: {0}")]
    RootSolve(String),

    #[error("eigenvalue e_K = {value:e} at K = {k} is not positive; use fewer eigenvectors")]
    RankDeficient { k: usize, value: f64 },

    #[error("smoothed eigenvector {index} collapsed to norm {norm:e}")]
    SmoothingCollapse { index: usize, norm: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that come out of the numerics rather than from
    /// bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Divergence { .. }
                | Error::RootSolve(_)
                | Error::RankDeficient { .. }
                | Error::SmoothingCollapse { .. }
        )
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
