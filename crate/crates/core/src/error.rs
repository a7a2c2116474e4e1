use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty code matrix")]
    EmptyCodeMatrix,

    #[error("collapsed codes: {0} code matrix is all zero")]
    CollapsedCodes(&'static str),

    #[error(
        "singular normal matrix for dictionary row {row} ({problem} problem): {support} valid samples \
         for {atoms} active atoms; every row needs at least as many valid samples as atoms \
         (e.g. 256 atoms over 64-pixel patches needs at least 16384 samples), \
         collect more training patches or enable the ridge option"
    )]
    SingularRow {
        row: usize,
        problem: &'static str,
        support: usize,
        atoms: usize,
    },

    #[error("infeasible separation problem: least-squares residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    Infeasible { residual: f64, tolerance: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(message: impl Into<String>) -> Self {
        Error::Argument(message.into())
    }
}
