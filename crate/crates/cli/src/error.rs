use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid spec: {0}")]
    SpecInvalid(String),
    #[error("{quantity}: {detail}")]
    CapExceeded { quantity: String, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::SpecInvalid(_) => 2,
            CliError::CapExceeded { .. } => 3,
            CliError::Io { .. } | CliError::Run(_) => 1,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn spec(e: impl std::fmt::Display) -> Self {
        CliError::SpecInvalid(e.to_string())
    }

    pub fn cap(quantity: &str, e: impl std::fmt::Display) -> Self {
        CliError::CapExceeded { quantity: quantity.to_string(), detail: e.to_string() }
    }
}
