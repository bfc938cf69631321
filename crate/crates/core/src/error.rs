use thiserror::Error;

/// Errors raised anywhere in the refractor pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("total internal reflection: e·N = {cos_incidence:.6} below critical {critical:.6}")]
    TotalInternalReflection { cos_incidence: f64, critical: f64 },

    #[error("slope |v| = {norm:.9} at or beyond critical slope {critical:.9}")]
    CriticalSlope { norm: f64, critical: f64 },

    #[error("focal parameter c(X0, Y) = {0} is not positive")]
    NonPositiveFocalParameter(f64),

    #[error("admissible focal-parameter range is empty: height {height} <= {bound}")]
    EmptyRange { height: f64, bound: f64 },

    #[error("point lies outside the source domain")]
    OutOfDomain,

    #[error("invalid configuration: {0}")]
    ConfigParse(String),

    #[error("argument {value} outside the domain of {function}")]
    DomainError { function: &'static str, value: f64 },

    #[error("target heights infeasible: m* = {m_star} <= {bound}")]
    InfeasibleHeights { m_star: f64, bound: f64 },

    #[error("at least two targets are required")]
    SingleTarget,

    #[error("no tau1 below {limit} satisfies every condition")]
    SearchOverflow { limit: f64 },

    #[error("solver did not converge after {rounds} rounds (residual {residual:e})")]
    NonConvergence { rounds: usize, residual: f64, history: Vec<f64> },

    #[error("energy tolerance {eps:e} is below twice the largest cell mass {cell_mass:e}")]
    GridTooCoarse { eps: f64, cell_mass: f64 },

    #[error("ray from the source misses the target")]
    RayMiss,

    #[error("estimated regularity constant C1 = {0:e} is not positive")]
    NotStrictlyRegular(f64),

    #[error("hypothesis not met: {0}")]
    HypothesisNotMet(String),

    #[error("endpoint targets coincide")]
    DegeneratePair,

    #[error("exponent q = {q} outside [1, {upper})")]
    RangeError { q: f64, upper: f64 },

    #[error("no sample pair satisfies the hypothesis filter")]
    NoEligiblePairs,

    #[error("cell {0} lies on an interface between targets")]
    TieCell(usize),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::ConfigParse(e.to_string())
    }
}

impl Error {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::TotalInternalReflection { .. } => "TotalInternalReflection",
            Error::CriticalSlope { .. } => "CriticalSlope",
            Error::NonPositiveFocalParameter(_) => "NonPositiveFocalParameter",
            Error::EmptyRange { .. } => "EmptyRange",
            Error::OutOfDomain => "OutOfDomain",
            Error::ConfigParse(_) => "ConfigParse",
            Error::DomainError { .. } => "DomainError",
            Error::InfeasibleHeights { .. } => "InfeasibleHeights",
            Error::SingleTarget => "SingleTarget",
            Error::SearchOverflow { .. } => "SearchOverflow",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::GridTooCoarse { .. } => "GridTooCoarse",
            Error::RayMiss => "RayMiss",
            Error::NotStrictlyRegular(_) => "NotStrictlyRegular",
            Error::HypothesisNotMet(_) => "HypothesisNotMet",
            Error::DegeneratePair => "DegeneratePair",
            Error::RangeError { .. } => "RangeError",
            Error::NoEligiblePairs => "NoEligiblePairs",
            Error::TieCell(_) => "TieCell",
            Error::Invariant(_) => "Invariant",
            Error::Io(_) => "Io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
