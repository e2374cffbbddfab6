use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point or scale outside the scale-space domain: {0}")]
    OutOfDomain(String),

    #[error("gradient field too weak to define an orientation")]
    NoOrientation,

    #[error("structure tensor has repeated eigenvalues ({0:?}); frame is ambiguous")]
    AmbiguousFrame([f64; 3]),

    #[error("Hough initialization failed: {0}")]
    InitializationFailed(String),

    #[error("variance collapsed to {0}; EM has converged")]
    VarianceCollapsed(f64),

    #[error("correspondence weights sum to zero")]
    DegenerateCorrespondence,

    #[error("point sets are degenerate (collinear or coincident)")]
    DegenerateGeometry,

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("unsupported file version {found} (newest supported is {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}
