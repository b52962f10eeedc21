//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MvrError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MvrError {
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("column 0 of the design matrix must be an intercept (row {row} has {value})")]
    NoIntercept { row: usize, value: f64 },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("too few rows: n = {n}, k = {k}")]
    TooFewRows { n: usize, k: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("argument {t} is outside the domain of the linear scale function")]
    DomainViolation { t: f64 },

    #[error("expected a strictly positive value, got {0}")]
    NonPositive(f64),

    #[error("exponential scale overflow at t = {t}")]
    Overflow { t: f64 },

    #[error("parameter is infeasible: min scale {min_scale}")]
    Infeasible { min_scale: f64 },

    #[error("regressor column {column} contains a zero; log|x| is undefined")]
    LogOfZeroRegressor { column: usize },

    #[error("constrained least-squares problem is infeasible or did not terminate")]
    QpInfeasible,

    #[error("sigma must be strictly positive (index {index})")]
    NonPositiveSigma { index: usize },

    #[error("zero residual scale: the data are fitted exactly")]
    PerfectFit,

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("Jacobian matrix G is numerically singular")]
    SingularG,

    #[error("negative variance on diagonal entry {index}: {value}")]
    NegativeDiagonal { index: usize, value: f64 },

    #[error("confidence level must lie in (0, 1), got {0}")]
    BadLevel(f64),

    #[error("restriction matrix R is not of full row rank")]
    RankDeficientR,

    #[error("middle matrix of the Wald statistic is singular")]
    SingularMiddleMatrix,

    #[error("heteroskedasticity test needs at least one non-intercept regressor")]
    InterceptOnly,

    #[error("bad argument: {0}")]
    BadArgument(String),

    #[error("not implemented: {0}")]
    NotImplemented(&'static str),

    #[error("results grid is incomplete: {0}")]
    IncompleteGrid(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl MvrError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            MvrError::NonFinite { .. } => "NonFinite",
            MvrError::NoIntercept { .. } => "NoIntercept",
            MvrError::RankDeficient => "RankDeficient",
            MvrError::TooFewRows { .. } => "TooFewRows",
            MvrError::DimensionMismatch(_) => "DimensionMismatch",
            MvrError::DomainViolation { .. } => "DomainViolation",
            MvrError::NonPositive(_) => "NonPositive",
            MvrError::Overflow { .. } => "Overflow",
            MvrError::Infeasible { .. } => "Infeasible",
            MvrError::LogOfZeroRegressor { .. } => "LogOfZeroRegressor",
            MvrError::QpInfeasible => "QPInfeasible",
            MvrError::NonPositiveSigma { .. } => "NonPositiveSigma",
            MvrError::PerfectFit => "PerfectFit",
            MvrError::Solver(_) => "SolverFailure",
            MvrError::SingularG => "SingularG",
            MvrError::NegativeDiagonal { .. } => "NegativeDiagonal",
            MvrError::BadLevel(_) => "BadLevel",
            MvrError::RankDeficientR => "RankDeficientR",
            MvrError::SingularMiddleMatrix => "SingularMiddleMatrix",
            MvrError::InterceptOnly => "InterceptOnly",
            MvrError::BadArgument(_) => "BadArgument",
            MvrError::NotImplemented(_) => "NotImplemented",
            MvrError::IncompleteGrid(_) => "IncompleteGrid",
            MvrError::Config(_) => "ConfigError",
        }
    }
}
