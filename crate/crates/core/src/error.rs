use std::path::PathBuf;

use thiserror::Error;

use crate::kernels::KernelKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("kernel `{0}` does not integrate to one and cannot back a density estimate")]
    NotADensityKernel(KernelKind),

    #[error(
        "degenerate neighborhood volume: fraction {fraction} > 0 but no Monte-Carlo draw hit the \
         neighborhood (enlarge the box or raise n_mc)"
    )]
    DegenerateVolume { fraction: f64 },

    #[error("epsilon selection failed: every grid value was degenerate at half or more of the {points} evaluation points")]
    SelectionFailed { points: usize },

    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
