//! File formats, ingestion and the command-line pipeline around
//! `demandgraph-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod geojson;
pub mod history;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod snapshots;
pub mod tensor_io;

pub use error::{AppError, Result};
