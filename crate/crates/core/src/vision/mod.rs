//! Frames to network inputs: decoding, face detection, cropping, augmentation.

pub mod augment;
pub mod cascade;
pub mod image;
pub mod integral;
pub mod preprocess;
pub mod resize;

use std::path::PathBuf;

use thiserror::Error;

pub use augment::{apply_augment, augment, AugmentParams, Fill};
pub use cascade::{
    detect_faces, group_detections, parse_cascade_xml, raw_detections, BoundingBox, CascadeError, CascadeModel,
    DetectParams, HaarRect, Stage, WeakClassifier,
};
pub use image::{decode_image, encode_bmp, encode_ppm, to_grayscale, GrayImage, ImageBuffer, ImageError};
pub use integral::{integral_image, IntegralImage};
pub use preprocess::{list_frames, preprocess_frames, read_image, PreprocessReport};
pub use resize::{crop_resize, resize_image, tensor_to_image, CROP_SIZE};

#[derive(Debug, Error)]
pub enum VisionError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("{}: {source}", path.display())]
    Frame { path: PathBuf, source: ImageError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}
