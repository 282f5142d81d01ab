//! Error types shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A quadrilateral or transform is degenerate (collinear vertices,
    /// singular matrix, ...).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Too few unmasked pixels to estimate a plain background.
    #[error("insufficient background: {0}")]
    InsufficientBackground(String),

    /// No frame passed the reference-selection confidence floor.
    #[error("no candidate frame: best rejected confidence {best_rejected:.4}")]
    NoCandidate {
        /// Highest OCR confidence among the rejected frames.
        best_rejected: f64,
    },

    /// Pearson correlation is undefined (a series has zero variance).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// Text does not fit the target region at the minimum glyph scale.
    #[error("layout error: {0}")]
    Layout(String),

    /// Malformed annotation / recipe / scenario file.
    #[error("parse error at line {line}: {message}")]
    Parse {
        /// 1-based line number in the offending file, 0 if unknown.
        line: usize,
        /// What went wrong.
        message: String,
    },

    /// Failure while processing a specific frame.
    #[error("processing failure at frame {frame}: {source}")]
    Frame {
        /// Index of the frame being processed.
        frame: usize,
        /// Underlying error.
        #[source]
        source: Box<Error>,
    },

    /// Underlying file I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        /// Offending path.
        path: String,
        /// OS-level error.
        #[source]
        source: std::io::Error,
    },

    /// PNG encode/decode failure.
    #[error("image codec error on {path}: {source}")]
    Codec {
        /// Offending path (or "<memory>" for in-memory buffers).
        path: String,
        /// Decoder/encoder error.
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    /// Tag an error with the frame index it occurred on.
    pub fn at_frame(self, frame: usize) -> Error {
        Error::Frame {
            frame,
            source: Box::new(self),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for `Error::InvalidArgument` with formatted text.
macro_rules! invalid_arg {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}

pub(crate) use invalid_arg;
