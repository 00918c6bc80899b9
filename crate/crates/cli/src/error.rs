use std::fmt;
use std::process::ExitCode;

use gesture_forge::dataset::DatasetError;
use gesture_forge::experiments::ExperimentError;
use gesture_forge::model::{CheckpointError, ModelError};
use gesture_forge::vision::VisionError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    /// A verification command ran and reported failure.
    Check,
    Config,
    Data,
    Training,
}

impl FailureKind {
    pub fn code(self) -> u8 {
        match self {
            FailureKind::Check => 1,
            FailureKind::Config => 2,
            FailureKind::Data => 3,
            FailureKind::Training => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: FailureKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: FailureKind, error: impl Into<anyhow::Error>) -> Self {
        Self { kind, error: error.into() }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Self::new(FailureKind::Config, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self::new(FailureKind::Data, anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.code())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::new(FailureKind::Data, e)
    }
}

impl From<VisionError> for CliError {
    fn from(e: VisionError) -> Self {
        Self::new(FailureKind::Data, e)
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::new(FailureKind::Data, e)
    }
}

fn model_kind(e: &ModelError) -> FailureKind {
    match e {
        ModelError::Config(_) => FailureKind::Config,
        ModelError::Dataset(_) | ModelError::Checkpoint(_) | ModelError::Transfer(_) => FailureKind::Data,
        _ => FailureKind::Training,
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::new(model_kind(&e), e)
    }
}

fn experiment_kind(e: &ExperimentError) -> FailureKind {
    match e {
        ExperimentError::Fold { source, .. } => experiment_kind(source),
        ExperimentError::Model(m) => model_kind(m),
        ExperimentError::Tensor(_) => FailureKind::Training,
        _ => FailureKind::Data,
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        Self::new(experiment_kind(&e), e)
    }
}
