use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A shape, range or configuration precondition was violated.
    InvalidArgument(String),
    /// A parsing label map contained a label outside `0..=4`.
    InvalidLabel { row: usize, col: usize, value: u8 },
    /// Protocol filtering left a query without any gallery candidate.
    EmptyGallery { query: usize },
    /// Average precision asked of a ranked list with no relevant entry.
    UndefinedAp,
    /// No query retained a relevant gallery entry.
    NoValidQueries { skipped: usize },
    /// Training produced a non-finite loss.
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        crosse: f64,
        trip: f64,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::InvalidLabel { row, col, value } => {
                write!(
                    f,
                    "invalid parsing label {value} at pixel (row {row}, col {col})"
                )
            }
            Error::EmptyGallery { query } => {
                write!(
                    f,
                    "query {query} has no gallery candidates after protocol filtering"
                )
            }
            Error::UndefinedAp => write!(f, "average precision undefined: no relevant entries"),
            Error::NoValidQueries { skipped } => {
                write!(
                    f,
                    "no valid queries ({skipped} skipped without a relevant match)"
                )
            }
            Error::NonFiniteLoss {
                epoch,
                batch,
                crosse,
                trip,
            } => write!(
                f,
                "non-finite loss at epoch {epoch}, batch {batch} (crosse={crosse}, trip={trip})"
            ),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
