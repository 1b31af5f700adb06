use alloc::string::String;
use core::fmt;

/// Faults raised by the core. Validation faults are caller mistakes
/// (bad configuration, out-of-regime parameters); numerical faults are
/// detected breakdowns during a computation.
#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    Validation(String),
    Numerical(String),
}

impl Fault {
    pub fn validation(msg: impl Into<String>) -> Self {
        Fault::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Fault::Numerical(msg.into())
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Fault::Numerical(_))
    }

    pub fn message(&self) -> &str {
        match self {
            Fault::Validation(m) | Fault::Numerical(m) => m,
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Validation(m) => write!(f, "validation fault: {m}"),
            Fault::Numerical(m) => write!(f, "numerical fault: {m}"),
        }
    }
}

impl core::error::Error for Fault {}

pub type Result<T> = core::result::Result<T, Fault>;
