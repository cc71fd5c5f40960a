use ocrf_diff::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown parameter {0}")]
    MissingParam(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("scene seed {seed}: could not place non-overlapping boxes within {attempts} attempts")]
    SceneGeneration { seed: u64, attempts: usize },
    #[error("non-finite loss at step {step} (scene seed {scene_seed})")]
    NonFinite { step: u64, scene_seed: u64 },
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
