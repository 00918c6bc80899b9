//! Participants, annotations and the leave-one-subject-out protocol.

pub mod annotation;
pub mod manifest;
pub mod protocol;

use std::path::PathBuf;

use thiserror::Error;

use crate::vision::VisionError;

pub use annotation::{
    frame_time, ingest_annotations, parse_annotation_document, AnnotationEvent, AnnotationFile, FieldError, FrameLabel,
    LabelCounts,
};
pub use manifest::{load_manifest, save_manifest, Cohort, DatasetManifest, Gender, GestureClass, Participant, DEFAULT_FPS};
pub use protocol::{
    add_misc_class, build_scenario, load_frame_tensor, load_training_samples, loso_splits, sample_digest, Fold, Sample,
    Scenario, ScenarioSets, TRAINING_CLASSES,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid manifest: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("annotation error: {0}")]
    Annotation(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("leakage: {0}")]
    Leakage(String),
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: VisionError },
}
