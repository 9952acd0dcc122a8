use thiserror::Error;

/// Errors raised by the inference pipeline.
///
/// Coordinates carried by variants are 0-based; `Display` renders them
/// 1-based so messages match the covariate numbering users see.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate problem at covariate {}: {reason}", .coordinate + 1)]
    Degenerate { coordinate: usize, reason: String },

    #[error("degenerate problem: {0}")]
    DegenerateData(String),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn degenerate(coordinate: usize, reason: impl Into<String>) -> Self {
        Error::Degenerate {
            coordinate,
            reason: reason.into(),
        }
    }

    /// Attach a coordinate to an error raised while processing covariate `j`.
    pub fn at_coordinate(self, j: usize) -> Self {
        match self {
            Error::Input(m) => Error::Input(format!("covariate {}: {m}", j + 1)),
            Error::Numerical(m) => Error::Numerical(format!("covariate {}: {m}", j + 1)),
            Error::DegenerateData(m) => Error::degenerate(j, m),
            e @ Error::Degenerate { .. } => e,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) => 2,
            Error::Numerical(_) => 3,
            Error::Degenerate { .. } | Error::DegenerateData(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
