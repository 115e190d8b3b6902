use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file structure. `offset` is the byte position (binary
    /// formats) or line number (text formats) where parsing failed.
    #[error("format error at {location}: {message}")]
    Format { location: String, message: String },

    /// Well-formed input whose contents violate a data invariant.
    #[error("data error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate centroids: {0}")]
    DegenerateCentroids(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefix the file name onto errors raised while decoding its bytes.
    pub(crate) fn in_file(self, path: &std::path::Path) -> Self {
        match self {
            Error::Format { location, message } if location.starts_with("byte ") => Error::Format {
                location: format!("{} {location}", path.display()),
                message,
            },
            Error::Data(message) => Error::Data(format!("{}: {message}", path.display())),
            other => other,
        }
    }

    pub(crate) fn at_byte(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            location: format!("byte {offset}"),
            message: message.into(),
        }
    }

    pub(crate) fn at_line(path: &std::path::Path, line: u64, message: impl Into<String>) -> Self {
        Error::Format {
            location: format!("{}:{line}", path.display()),
            message: message.into(),
        }
    }
}
