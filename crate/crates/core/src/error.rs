use std::fmt;
use std::path::PathBuf;

/// Pipeline stage an error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Loading,
    Centroids,
    Pairing,
    BackgroundAffine,
    Triangulation,
    LocalFits,
    Fusion,
    Exponentiation,
    Composition,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Loading => "loading",
            Stage::Centroids => "centroids",
            Stage::Pairing => "pairing",
            Stage::BackgroundAffine => "background affine",
            Stage::Triangulation => "triangulation",
            Stage::LocalFits => "local fits",
            Stage::Fusion => "fusion",
            Stage::Exponentiation => "exponentiation",
            Stage::Composition => "composition",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("point sets are not paired: {0}")]
    PairingMismatch(String),
    #[error("principal logarithm undefined: eigenvalue {re:.6}{im:+.6}i lies on the closed negative real axis")]
    LogUndefined { re: f64, im: f64 },
    #[error("singular matrix (|det| = {0:e})")]
    Singular(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no retained label has any voxel")]
    EmptyPointSet,
    #[error("only {found} common labels, at least {required} (d+1) are required")]
    InsufficientPoints { found: usize, required: usize },
    #[error("degenerate input for triangulation: {0}")]
    DegenerateInput(String),
    #[error("no local transforms to fuse")]
    NoTransforms,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("unsupported dimensionality: {0}")]
    DimensionalityUnsupported(String),
    #[error("trilinear interpolation requested for integer label data")]
    InterpolationMismatch,
    #[error("volumes are not defined on the same grid")]
    GridMismatch,
    #[error("grid too small: {0}")]
    GridTooSmall(String),
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Stage this error was raised in, if it was tagged by the pipeline.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// The innermost error, with stage tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerical method rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::DegenerateConfiguration(_)
                | Error::LogUndefined { .. }
                | Error::Singular(_)
                | Error::DegenerateInput(_)
                | Error::NoTransforms
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| match e {
            tagged @ Error::Stage { .. } => tagged,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        })
    }
}
