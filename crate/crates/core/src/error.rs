use thiserror::Error;

/// Errors raised by the tomography toolkit. Each variant names the module
/// that produced it so the CLI can report provenance.
#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(String),

    #[error("phantom: {0}")]
    Phantom(String),

    #[error("volume: {0}")]
    Volume(String),

    #[error("projector: {0}")]
    Projector(String),

    #[error("inversion: {0}")]
    Inversion(String),

    #[error("inversion: angular coverage gaps in {count} frequency cells (first: {examples})")]
    CoverageGap { count: usize, examples: String },

    #[error("inversion: Tuy condition fails for {count} sampled (x, theta) pairs (first: {examples})")]
    TuyFailure { count: usize, examples: String },

    #[error("regularize: {0}")]
    Regularize(String),

    #[error("roi_iter: non-finite values at iteration {iteration} after stage {stage}")]
    NonFinite { iteration: usize, stage: &'static str },

    #[error("roi_iter: {0}")]
    Roi(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
