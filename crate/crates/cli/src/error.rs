use std::fmt;
use std::process::ExitCode;

/// Command failure classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(sketchmix::Error),
    Io(std::io::Error),
    Other(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_data_integrity() => 3,
            CliError::Core(sketchmix::Error::DimensionMismatch { .. }) => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(sketchmix::Error::InvalidArgument(_)) => 2,
            CliError::Core(_) | CliError::Io(_) | CliError::Other(_) => 1,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Other(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<sketchmix::Error> for CliError {
    fn from(e: sketchmix::Error) -> Self {
        match e {
            sketchmix::Error::Io(io) => CliError::Io(io),
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(format!("manifest: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(format!("table: {e}"))
    }
}
