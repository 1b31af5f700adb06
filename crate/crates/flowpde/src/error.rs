use std::fmt;
use std::path::Path;

use flowpde_core::Fault;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Usage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Validation, message: msg.into() }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Numerical, message: msg.into() }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Usage, message: msg.into() }
    }

    /// I/O failures count as validation faults: a path the user gave is
    /// unreadable or unwritable.
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::validation(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Validation => 1,
            ErrorKind::Numerical => 2,
            ErrorKind::Usage => 64,
        }
    }
}

impl From<Fault> for CliError {
    fn from(f: Fault) -> Self {
        match f {
            Fault::Validation(m) => CliError::validation(m),
            Fault::Numerical(m) => CliError::numerical(m),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            ErrorKind::Validation => "validation fault",
            ErrorKind::Numerical => "numerical fault",
            ErrorKind::Usage => "usage",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

impl std::error::Error for CliError {}
