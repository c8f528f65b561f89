use std::fmt;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or arguments.
    Usage(String),
    /// Unreadable or schema-violating configuration.
    Config(String),
    /// A library error.
    Core(sdprior::Error),
    /// A checked invariant did not hold.
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Core(e) => match e {
                sdprior::Error::Contract(_) => 1,
                sdprior::Error::Capacity { .. } | sdprior::Error::Shape { .. } => 3,
                _ => 2,
            },
            CliError::Invariant(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Core(e) => e.kind(),
            CliError::Invariant(_) => "invariant",
        }
    }

    /// One-line JSON record for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Invariant(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<sdprior::Error> for CliError {
    fn from(e: sdprior::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(sdprior::Error::Io(e))
    }
}
