use std::path::PathBuf;

/// Errors raised by every stage of the downscaling pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("part {index} is not strictly positive (value {value})")]
    NonPositivePart { index: usize, value: f64 },

    #[error("parts sum to {sum}, outside the re-closure tolerance")]
    NotClosed { sum: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed partition: {0}")]
    InvalidPartition(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate variogram: {0}")]
    DegenerateVariogram(String),

    #[error("rank-deficient design matrix, collinear covariates: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("missing covariate `{0}`")]
    MissingCovariate(String),

    #[error("singular kriging system: {0}")]
    SingularSystem(String),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("simulation failed at pixel {pixel}: {reason}")]
    SimulationFailed { pixel: usize, reason: String },

    #[error("invalid composition at pixel {pixel} (row {row}, col {col}): {source}")]
    InvalidPixel {
        pixel: usize,
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{}:{line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Config(String),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error record.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonPositivePart { .. } => "non_positive_part",
            Error::NotClosed { .. } => "not_closed",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Empty(_) => "empty",
            Error::InvalidPartition(_) => "invalid_partition",
            Error::InvalidBasis(_) => "invalid_basis",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::OutOfRange(_) => "out_of_range",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DegenerateVariogram(_) => "degenerate_variogram",
            Error::RankDeficient(_) => "rank_deficient",
            Error::MissingCovariate(_) => "missing_covariate",
            Error::SingularSystem(_) => "singular_system",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::SimulationFailed { .. } => "simulation_failed",
            Error::InvalidPixel { .. } => "invalid_pixel",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
