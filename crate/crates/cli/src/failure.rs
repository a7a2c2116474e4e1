use std::fmt;

use xsep_core::Error;

/// Why a command stopped, and the process exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Core(Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Core(e) => match e {
                Error::Argument(_) | Error::Config(_) => 2,
                Error::Format { .. } | Error::Io { .. } => 3,
                Error::EmptyCodeMatrix
                | Error::CollapsedCodes(_)
                | Error::SingularRow { .. }
                | Error::Infeasible { .. }
                | Error::Numerical(_) => 4,
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;
