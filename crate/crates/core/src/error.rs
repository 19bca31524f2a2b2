use std::fmt;

/// Errors raised by model construction, numerics and simulation.
///
/// Every variant maps to a stable kebab-case code (see [`Error::code`]) that
/// is also what the C ABI and the CLI report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid-parameter: {0}")]
    InvalidParameter(String),
    #[error("negativity: {0}")]
    Negativity(String),
    #[error("out-of-domain: point {0:?}")]
    OutOfDomain(Vec<f64>),
    #[error("negative-time: {0}")]
    NegativeTime(f64),
    #[error("grid-too-large: {entries} entries exceeds cap {cap}")]
    GridTooLarge { entries: usize, cap: usize },
    #[error("shape-error: {0}")]
    Shape(String),
    #[error("no-convergence: {0}")]
    NoConvergence(String),
    #[error("unstable-model: {0}")]
    UnstableModel(String),
    #[error("slow-convergence: {0}")]
    SlowConvergence(String),
    #[error("explosion-guard: event cap {0} exceeded")]
    ExplosionGuard(usize),
    #[error("requires-thinning-simulator: nonlinear models cannot use the cluster representation")]
    RequiresThinning,
    #[error("degenerate-density: density vanishes on the grid")]
    DegenerateDensity,
    #[error("no-lifetimes: {0}")]
    NoLifetimes(String),
    #[error("acausal-history: event at {event} after reference time {reference}")]
    AcausalHistory { event: f64, reference: f64 },
    #[error("bad-cell-count: {0}")]
    BadCellCount(String),
    #[error("resolution-too-coarse: {0}")]
    ResolutionTooCoarse(String),
    #[error("prelimit-unstable: {0}")]
    PrelimitUnstable(String),
    #[error("domain-mismatch: {0}")]
    DomainMismatch(String),
    #[error("invalid-argument: {0}")]
    InvalidArgument(String),
    #[error("outdegree-condition-failed: {0}")]
    OutdegreeConditionFailed(String),
    #[error("all-censored: every replication hit the event cap")]
    AllCensored,
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> ErrorCode {
        use Error::*;
        match self {
            InvalidParameter(_) => ErrorCode::InvalidParameter,
            Negativity(_) => ErrorCode::Negativity,
            OutOfDomain(_) => ErrorCode::OutOfDomain,
            NegativeTime(_) => ErrorCode::NegativeTime,
            GridTooLarge { .. } => ErrorCode::GridTooLarge,
            Shape(_) => ErrorCode::Shape,
            NoConvergence(_) => ErrorCode::NoConvergence,
            UnstableModel(_) => ErrorCode::UnstableModel,
            SlowConvergence(_) => ErrorCode::SlowConvergence,
            ExplosionGuard(_) => ErrorCode::ExplosionGuard,
            RequiresThinning => ErrorCode::RequiresThinning,
            DegenerateDensity => ErrorCode::DegenerateDensity,
            NoLifetimes(_) => ErrorCode::NoLifetimes,
            AcausalHistory { .. } => ErrorCode::AcausalHistory,
            BadCellCount(_) => ErrorCode::BadCellCount,
            ResolutionTooCoarse(_) => ErrorCode::ResolutionTooCoarse,
            PrelimitUnstable(_) => ErrorCode::PrelimitUnstable,
            DomainMismatch(_) => ErrorCode::DomainMismatch,
            InvalidArgument(_) => ErrorCode::InvalidArgument,
            OutdegreeConditionFailed(_) => ErrorCode::OutdegreeConditionFailed,
            AllCensored => ErrorCode::AllCensored,
            Config(_) => ErrorCode::Config,
            Io(_) => ErrorCode::Io,
            Internal(_) => ErrorCode::Internal,
        }
    }
}

/// Numeric error codes shared with the C ABI. Zero is reserved for success.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    InvalidParameter = 1,
    Negativity = 2,
    OutOfDomain = 3,
    NegativeTime = 4,
    GridTooLarge = 5,
    Shape = 6,
    NoConvergence = 7,
    UnstableModel = 8,
    SlowConvergence = 9,
    ExplosionGuard = 10,
    RequiresThinning = 11,
    DegenerateDensity = 12,
    NoLifetimes = 13,
    AcausalHistory = 14,
    BadCellCount = 15,
    ResolutionTooCoarse = 16,
    PrelimitUnstable = 17,
    DomainMismatch = 18,
    InvalidArgument = 19,
    OutdegreeConditionFailed = 20,
    AllCensored = 21,
    Config = 22,
    Io = 23,
    Internal = 24,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        use ErrorCode::*;
        match self {
            InvalidParameter => "invalid-parameter",
            Negativity => "negativity",
            OutOfDomain => "out-of-domain",
            NegativeTime => "negative-time",
            GridTooLarge => "grid-too-large",
            Shape => "shape-error",
            NoConvergence => "no-convergence",
            UnstableModel => "unstable-model",
            SlowConvergence => "slow-convergence",
            ExplosionGuard => "explosion-guard",
            RequiresThinning => "requires-thinning-simulator",
            DegenerateDensity => "degenerate-density",
            NoLifetimes => "no-lifetimes",
            AcausalHistory => "acausal-history",
            BadCellCount => "bad-cell-count",
            ResolutionTooCoarse => "resolution-too-coarse",
            PrelimitUnstable => "prelimit-unstable",
            DomainMismatch => "domain-mismatch",
            InvalidArgument => "invalid-argument",
            OutdegreeConditionFailed => "outdegree-condition-failed",
            AllCensored => "all-censored",
            Config => "config",
            Io => "io",
            Internal => "internal",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
