use std::fmt;

use treelcm_core::Error as CoreError;

/// Error with a stable machine-readable code, printed as `error[CODE]: message`.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("E_USAGE", message)
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        Self::new("E_IO", format!("{}: {err}", path.display()))
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new("E_SCHEMA", message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new("E_DATA", message)
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        if self.code == "E_USAGE" {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::NewickSyntax { .. } | CoreError::InvalidTree(_) | CoreError::InvalidEdit(_) => {
                "E_TREE"
            }
            CoreError::UnknownLeaf(_) | CoreError::Dimension(_) => "E_DIMENSION",
            CoreError::InvalidParameter(_) => "E_PARAMETER",
            CoreError::InvalidData(_) => "E_DATA",
            CoreError::NonFiniteDensity(_) => "E_NUMERIC",
            CoreError::Io(_) => "E_IO",
            CoreError::Serialization(_) => "E_SCHEMA",
        };
        Self::new(code, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
