use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid pitch {pitch:e} m is too coarse for the narrowest width {width:e} m")]
    UndersampledGrid { pitch: f64, width: f64 },

    #[error("state truncated by the grid: extent {extent:e} m, captured norm fraction {captured:.6}")]
    TruncatedState { extent: f64, captured: f64 },

    #[error("coherence width is unbounded for a balanced configuration")]
    InfiniteWidth,

    #[error("Schmidt decomposition failed: {0}")]
    DecompositionFailure(String),

    #[error("reduced intensity vanishes at the requested position")]
    ZeroIntensity,

    #[error("correlation length {length:e} m is below the pixel pitch {pitch:e} m")]
    CorrelationTooFine { length: f64, pitch: f64 },

    #[error("grid mismatch: expected {expected} points, found {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("empty region")]
    EmptyRegion,

    #[error("mean intensity over the region is zero")]
    ZeroMean,

    #[error("probe failure: {0}")]
    ProbeFailure(String),

    #[error("Hadamard basis needs a power-of-two number of modulated segments, got {0}")]
    BasisSizeMismatch(usize),

    #[error("target pixel {target} outside camera range 0..{len}")]
    TargetOutOfRange { target: usize, len: usize },

    #[error("no targets given")]
    EmptyTargets,

    #[error("segment region {start}..{end} outside mask of {len} segments")]
    RegionOutOfRange { start: usize, end: usize, len: usize },

    #[error("background median of the projection is not positive")]
    DegenerateBackground,

    #[error("invalid detector parameters: {0}")]
    InvalidDetectorParams(String),

    #[error("need at least two frames, got {0}")]
    TooFewFrames(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => 2,
            Error::Io(_) | Error::Format(_) => 4,
            _ => 3,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
