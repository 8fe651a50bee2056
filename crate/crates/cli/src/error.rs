use std::fmt;
use std::process::ExitCode;

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    NotConverged(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::NotConverged(_) => 4,
            CliError::Failed(_) => 1,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::NotConverged(m) => write!(f, "{m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<fusesdm::Error> for CliError {
    fn from(e: fusesdm::Error) -> Self {
        use fusesdm::Error as E;
        let message = e.to_string();
        match e {
            E::Config(_) | E::Geometry(_) => CliError::Config(message),
            E::Overlap(_) => CliError::Config(format!("design fails the non-overlap check: {message}")),
            E::Data(_) | E::Parse { .. } => CliError::Data(message),
            E::NonFiniteStart => CliError::NotConverged(message),
            E::Interrupted { .. } | E::Io { .. } => CliError::Failed(message),
        }
    }
}
