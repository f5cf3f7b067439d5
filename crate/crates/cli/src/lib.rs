//! Config-driven runs of the `gnnrec` library: ingest a ratings file, train
//! the GNN or the BPR baseline, evaluate, recommend and compare.

pub mod commands;
pub mod config;

use std::path::Path;

use gnnrec::eval::EvalError;
use gnnrec::graph::GraphError;
use gnnrec::model::ModelError;
use gnnrec::trainer::TrainError;
use thiserror::Error;

pub use config::{ConfigEntries, ModelKind, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} not found; {hint}")]
    Missing { path: String, hint: &'static str },
    #[error("snapshot does not match the config: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
