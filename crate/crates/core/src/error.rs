use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::DataError;
use crate::eval::EvalError;
use crate::graph::GraphError;
use crate::model::ModelError;
use crate::order::OrderError;
use crate::sampler::SamplerError;
use crate::train::TrainError;

/// Errors surfaced by the file-level commands.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("snapshot {}: {message}", path.display())]
    Snapshot { path: PathBuf, message: String },
    #[error("checkpoint is {checkpoint_users}x{checkpoint_items} but dataset is {dataset_users}x{dataset_items}")]
    DimensionMismatch { checkpoint_users: usize, checkpoint_items: usize, dataset_users: usize, dataset_items: usize },
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("sweep grid has {cells} cells, cap is {cap}")]
    GridTooLarge { cells: usize, cap: usize },
    #[error(transparent)]
    Order(#[from] OrderError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path.to_path_buf())
        } else {
            Error::Io { path: path.to_path_buf(), source }
        }
    }

    /// Stable identifier used in the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::FileNotFound(_) => "FileNotFound",
            Error::Parse { .. } => "ParseError",
            Error::Config(_) => "Config",
            Error::Snapshot { .. } => "Snapshot",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::UnknownUser(_) => "UnknownUser",
            Error::EmptyGrid => "EmptyGrid",
            Error::GridTooLarge { .. } => "GridTooLarge",
            Error::Order(_) => "Order",
            Error::Data(DataError::AllFiltered(_)) => "AllFiltered",
            Error::Data(_) => "Data",
            Error::Graph(GraphError::UnrankedCombination(_)) => "UnrankedCombination",
            Error::Graph(_) => "Graph",
            Error::Model(_) => "Model",
            Error::Sampler(_) => "Sampler",
            Error::Train(TrainError::Diverged { .. }) => "Diverged",
            Error::Train(_) => "Train",
            Error::Eval(_) => "Eval",
        }
    }

    /// `error<TAB>kind<TAB>message` on one line.
    pub fn machine_line(&self) -> String {
        format!("error\t{}\t{}", self.kind(), self.to_string().replace(['\n', '\t'], " "))
    }
}
