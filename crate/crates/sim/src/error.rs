use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("latent paths live on different grids ({left} vs {right} points)")]
    GridMismatch { left: usize, right: usize },
    #[error("fine-grid paths were not stored; set store_fine")]
    FinePathsMissing,
    #[error(transparent)]
    Core(#[from] covol::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type SimResult<T> = Result<T, SimError>;
