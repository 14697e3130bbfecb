use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

/// Problems with the tick or panel files.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{asset}: no observation inside the trading session on {day}")]
    EmptySession { asset: String, day: String },
    #[error("{asset}: timestamp on line {line} is earlier than the one before it")]
    NonmonotoneTimestamps { asset: String, line: usize },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("the assets share no trading day")]
    NoCommonDays,
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("numerical problem: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Numeric(_) => 4,
            Self::Other(_) => 1,
        }
    }
}

impl From<covol::Error> for CliError {
    fn from(e: covol::Error) -> Self {
        use covol::Error as E;
        match e {
            E::InvalidConfig(m) => Self::Config(m),
            E::DimensionMismatch { .. }
            | E::TooFewObservations { .. }
            | E::PanelTooShort { .. }
            | E::PathTooShort { .. }
            | E::BlockTooShort { .. }
            | E::Domain(_) => Self::Data(DataError::Invalid(e.to_string())),
            E::MaskRange { .. } => Self::Other(e.to_string()),
            _ => Self::Numeric(e.to_string()),
        }
    }
}

impl From<covol_sim::SimError> for CliError {
    fn from(e: covol_sim::SimError) -> Self {
        match e {
            covol_sim::SimError::InvalidConfig(m) => Self::Config(m),
            covol_sim::SimError::Core(e) => e.into(),
            other => Self::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Other(e.to_string())
    }
}
