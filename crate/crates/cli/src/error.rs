use std::fmt;

use vern::data::DataError;
use vern::graph::GraphError;
use vern::model::{CheckpointError, ModelError};
use vern::train::TrainError;

/// A failed command, classified by its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Data(String),
    Checkpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
            CliError::Checkpoint(_) => 5,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Io(m) => ("io", m),
            CliError::Data(m) => ("data", m),
            CliError::Checkpoint(m) => ("checkpoint", m),
        };
        write!(f, "{kind} error: {msg}")
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let msg = e.to_string();
        match e {
            DataError::Io { .. } | DataError::MissingFeatures { .. } => CliError::Io(msg),
            DataError::Parameter(_) => CliError::Usage(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Checkpoint(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Shape(m) => CliError::Checkpoint(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            TrainError::Data(d) => d.into(),
            TrainError::Graph(g) => g.into(),
            TrainError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<vern::metrics::MetricError> for CliError {
    fn from(e: vern::metrics::MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}
