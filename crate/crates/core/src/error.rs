use std::fmt;

/// Crate-wide error type.
///
/// `Usage` and `Io` map to process exit code 2, `Numerical` to exit code 1.
#[derive(Debug)]
pub enum Error {
    /// Mismatched shapes, wrong component counts, incompatible grids.
    Shape(String),
    /// Invalid parameters or configuration.
    Usage(String),
    /// Solver breakdown, NaN loss, non-convergence where convergence is required.
    Numerical(String),
    /// File format violations (bad magic, CRC mismatch, missing arrays).
    Format(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Usage(msg) => write!(f, "usage error: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}

impl Error {
    /// Process exit code convention: 0 success, 1 numerical failure, 2 usage/IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 1,
            _ => 2,
        }
    }
}
