use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("factor covariance block is not invertible")]
    SingularFactorBlock,
    #[error("quadratic covariation matrix of the idiovol factors is not invertible")]
    SingularFactorQuadCov,
    #[error("asymptotic covariance matrix is not invertible")]
    SingularSigma,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("too few observations: need at least {needed}, found {found}")]
    TooFewObservations { needed: usize, found: usize },
    #[error("panel too short: {increments} increments cannot support windows of k_n = {k_n}")]
    PanelTooShort { increments: usize, k_n: usize },
    #[error("non-positive truncation threshold for asset {asset} on day {day}")]
    NonPositiveThreshold { asset: usize, day: u32 },
    #[error("spot path too short: need {needed} windows, found {found}")]
    PathTooShort { needed: usize, found: usize },
    #[error("volatility-jump mask undefined at window index {index}")]
    MaskRange { index: usize },
    #[error("non-positive diagonal quadratic covariation estimate ({0})")]
    NonpositiveDiagonal(String),
    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),
    #[error("block length {block} is too short (need at least {needed})")]
    BlockTooShort { block: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
