//! Deterministic simulator of 2D erasure-coded block dissemination with
//! row/column custody over per-topic mesh overlays.
//!
//! A block is modeled as an availability matrix extended K-of-N in both
//! dimensions. A producer pushes released cells into per-row and per-column
//! topic meshes; nodes store and forward under uplink token buckets and link
//! latency, repair custodied lines once K cells arrive, and the run tracks
//! how many custody samples are still missing over time.

pub mod block;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod overlay;
pub mod runner;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
