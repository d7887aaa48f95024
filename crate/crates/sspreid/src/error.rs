use std::fmt;
use std::path::PathBuf;

/// Problems found while decoding an in-memory file image.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("malformed header: {0}")]
    Header(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{extra} unexpected trailing bytes")]
    Trailing { extra: usize },
    #[error("{0}")]
    Content(String),
}

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: file not found", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Decode {
        path: PathBuf,
        #[source]
        source: DecodeError,
    },
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Core(#[from] sspreid_core::Error),
    #[error("{}", InputList(.0))]
    Inputs(Vec<Error>),
}

struct InputList<'a>(&'a [Error]);

impl fmt::Display for InputList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} unreadable inputs", self.0.len())?;
        for e in self.0 {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}

/// Process exit status for each class of failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Other = 1,
    Argument = 2,
    Format = 3,
    Protocol = 4,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::Missing(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn decode(path: impl Into<PathBuf>, source: DecodeError) -> Self {
        Error::Decode {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        use sspreid_core::Error as E;
        match self {
            Error::Missing(_) | Error::Io { .. } => ExitCode::Other,
            Error::Decode { .. } => ExitCode::Format,
            Error::Argument(_) => ExitCode::Argument,
            Error::Core(e) => match e {
                E::InvalidArgument(_) => ExitCode::Argument,
                E::InvalidLabel { .. } => ExitCode::Format,
                E::EmptyGallery { .. } | E::UndefinedAp | E::NoValidQueries { .. } => {
                    ExitCode::Protocol
                }
                _ => ExitCode::Other,
            },
            Error::Inputs(list) => {
                if list.iter().all(|e| e.exit_code() == ExitCode::Format) {
                    ExitCode::Format
                } else {
                    ExitCode::Other
                }
            }
        }
    }
}
