use std::path::PathBuf;

use thiserror::Error;

use crate::grid::Diagnostic;

/// Errors raised by the planning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{what} references unknown bus {bus}")]
    DanglingReference { what: String, bus: u32 },

    #[error("invalid network: {}", .0.iter().map(|d| d.message.as_str()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<Diagnostic>),

    #[error("profile error: {0}")]
    Profile(String),

    #[error("unknown timestamp {0}")]
    UnknownTimestamp(String),

    #[error("singular Jacobian at iteration {iteration} (pivot bus {bus})")]
    SingularJacobian { iteration: usize, bus: u32 },

    #[error("power flow did not converge: {0}")]
    NotConverged(String),

    #[error("planning problem infeasible at loop iteration {iteration}: {detail}")]
    Infeasible { iteration: usize, detail: String },

    #[error("optimization failed at loop iteration {iteration}: {detail}")]
    SolverFailure { iteration: usize, detail: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("too many non-converged time steps: {failed} of {total}")]
    ExcessiveNonConvergence { failed: usize, total: usize },
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::DanglingReference { .. }
            | Error::Validation(_)
            | Error::Profile(_)
            | Error::UnknownTimestamp(_)
            | Error::InvalidInput(_) => 2,
            Error::SingularJacobian { .. }
            | Error::NotConverged(_)
            | Error::SolverFailure { .. }
            | Error::ExcessiveNonConvergence { .. } => 3,
            Error::Infeasible { .. } => 4,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::DanglingReference { .. } => "dangling_reference",
            Error::Validation(_) => "validation",
            Error::Profile(_) => "profile",
            Error::UnknownTimestamp(_) => "unknown_timestamp",
            Error::SingularJacobian { .. } => "singular_jacobian",
            Error::NotConverged(_) => "not_converged",
            Error::Infeasible { .. } => "infeasible",
            Error::SolverFailure { .. } => "solver_failure",
            Error::InvalidInput(_) => "invalid_input",
            Error::ExcessiveNonConvergence { .. } => "excessive_non_convergence",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
