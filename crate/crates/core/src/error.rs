//! Error type shared by every stage of the toolkit.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An index (slice, angle, frame, row) fell outside its valid range.
    #[error("{what} index {index} out of range 0..{len}")]
    Range {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// A phantom description violated one of its invariants.
    #[error("invalid phantom spec: {0}")]
    Spec(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data contained non-finite values or was otherwise unusable.
    #[error("invalid data: {0}")]
    Data(String),

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error("unsupported geometry: {0}")]
    Geometry(String),

    #[error("axis calibration failed: {0}")]
    CalibrationFailed(String),

    /// The fitted spline crosses itself; `at` is the crossing point in slice pixels.
    #[error("spline fit is self-intersecting near ({:.2}, {:.2})", at.0, at.1)]
    SelfIntersection { at: (f64, f64) },

    #[error("invalid control points: {0}")]
    ControlPoints(String),

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("cannot merge sheets: {0}")]
    Merge(String),

    /// A pipeline stage was started before one of its prerequisites produced output.
    #[error("stage `{stage}` requires `{missing}` to have run first")]
    Dependency {
        stage: &'static str,
        missing: &'static str,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("artifact format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Wraps a module error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ (Error::Stage { .. } | Error::Dependency { .. }) => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
