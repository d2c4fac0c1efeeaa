use std::path::PathBuf;

/// Errors raised anywhere in the detection toolchain.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),

    #[error("truncated while reading tensor `{tensor}`")]
    Truncated { tensor: String },

    #[error("{0}")]
    Shape(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("could not place car {car} without overlap after {retries} retries")]
    Placement { car: usize, retries: usize },

    #[error("{0}")]
    Fingerprint(String),

    #[error("{0}")]
    Eval(String),

    #[error("frame {frame_id}: {source}")]
    Stage {
        frame_id: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "argument",
            Error::Placement { .. } => "placement",
            Error::Fingerprint(_) => "fingerprint",
            Error::Eval(_) => "eval",
            Error::Stage { .. } => "stage",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
