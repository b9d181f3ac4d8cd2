use std::path::PathBuf;

use thiserror::Error;

use crate::scenario::ScenarioType;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("non-finite coordinate in {0}")]
    NonFinite(String),
    #[error("scene is missing its ground-truth ego future")]
    MissingGroundTruth,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("horizon mismatch: {0}")]
    Horizon(String),
    #[error("k-means needs at least {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("scenario type {ty} has only {have} endpoints, {need} required")]
    UnderPopulated {
        ty: ScenarioType,
        have: usize,
        need: usize,
    },
    #[error("{what} exceeds cap: {have} > {cap}")]
    CapOverflow {
        what: &'static str,
        have: usize,
        cap: usize,
    },
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
    #[error("{what} not found: {path}")]
    MissingArtifact { what: String, path: PathBuf },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] emoe_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
