//! Failure classes and their process exit codes.

use std::fmt;

/// Exit codes: 0 success, 1 invariant or runtime failure, 2 configuration
/// or I/O error, 3 training system not positive definite.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments.
    Config(String),
    /// Missing or unreadable input, or unwritable output.
    Io(String),
    /// The regularized training system failed to factor.
    NotPositiveDefinite(String),
    /// Any other numerical or runtime failure.
    Runtime(String),
    /// A check ran and reported failures.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) | CliError::Failed(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::NotPositiveDefinite(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::NotPositiveDefinite(m) | CliError::Runtime(m) | CliError::Failed(m) => {
                write!(f, "{m}")
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<polycascade::Error> for CliError {
    fn from(e: polycascade::Error) -> Self {
        use polycascade::Error as E;
        if e.is_spd_failure() {
            return CliError::NotPositiveDefinite(e.to_string());
        }
        match e {
            E::Io { .. } | E::Data(_) | E::Snapshot(_) => CliError::Io(e.to_string()),
            E::InvalidWidths(_) | E::InvalidArgument(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<polycascade::data::DataError> for CliError {
    fn from(e: polycascade::data::DataError) -> Self {
        CliError::from(polycascade::Error::from(e))
    }
}
