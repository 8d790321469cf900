use thiserror::Error;

/// Errors raised by the library.
///
/// The variants map onto process exit codes in the CLI: input and
/// configuration problems exit with 2, domain failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical degeneracy: {0}")]
    Numerical(String),

    #[error("training split contains a single class (label {0})")]
    SingleClass(u8),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Config(_) | Error::Json(_) | Error::Io { .. } => 2,
            Error::Numerical(_) | Error::SingleClass(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
