use divreg::Error;
use thiserror::Error;

pub const NOT_CONVERGED: i32 = 2;
pub const IO: i32 = 10;
pub const PARSE: i32 = 11;
pub const USAGE: i32 = 12;
pub const GEOMETRY: i32 = 13;
pub const SOLVER: i32 = 14;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => USAGE,
            CliError::Parse(_) => PARSE,
            CliError::Lib(e) => match e {
                Error::Io(_) => IO,
                Error::Parse { .. } | Error::Json(_) | Error::Shape { .. } => PARSE,
                Error::Config(_) | Error::Unsupported(_) | Error::InvalidOrder(_) => USAGE,
                Error::Geometry(_) | Error::Domain { .. } | Error::Index { .. } => GEOMETRY,
                Error::SolverDivergence { .. } | Error::Infeasible(_) => SOLVER,
            },
        }
    }
}
