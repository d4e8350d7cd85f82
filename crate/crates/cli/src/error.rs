use std::fmt;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Internal = 1,
    BadInput = 2,
    DimensionMismatch = 3,
    Divergence = 4,
    Io = 5,
}

#[derive(Debug, thiserror::Error)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    pub fn new(code: ExitCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn bad_input(message: impl Into<String>) -> Self {
        Self::new(ExitCode::BadInput, message)
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::new(ExitCode::Io, format!("I/O error on {}: {e}", path.display()))
    }

    /// Any failure while reading an input counts as bad input, including a
    /// missing or unreadable file.
    pub fn from_input(e: maip::Error) -> Self {
        match e {
            maip::Error::Io { .. } => Self::bad_input(e.to_string()),
            other => other.into(),
        }
    }
}

impl From<maip::Error> for CliError {
    fn from(e: maip::Error) -> Self {
        use maip::Error as E;
        let code = match &e {
            E::DimensionMismatch { .. } => ExitCode::DimensionMismatch,
            E::Divergence { .. } => ExitCode::Divergence,
            E::Io { .. } => ExitCode::Io,
            E::InvalidArgument(_) | E::Parse { .. } | E::Metric(_) | E::Singular(_) => ExitCode::BadInput,
            E::Graph(_) => ExitCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
