//! Frame directory to face crops: detect, keep the largest face, resample.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::vision::{
    crop_resize, decode_image, detect_faces, encode_ppm, tensor_to_image, CascadeModel, DetectParams, ImageBuffer,
    VisionError, CROP_SIZE,
};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub frames_total: usize,
    pub faces_found: usize,
    pub frames_skipped: usize,
    /// Frames without a detection, by file name.
    pub skipped: Vec<String>,
}

/// Image files (`.ppm`, `.bmp`) directly inside `dir`, sorted by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, VisionError> {
    let io = |e| VisionError::Io { path: dir.to_path_buf(), source: e };
    let mut frames = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("ppm" | "bmp")) {
            frames.push(path);
        }
    }
    frames.sort();
    Ok(frames)
}

pub fn read_image(path: &Path) -> Result<ImageBuffer, VisionError> {
    let bytes = fs::read(path).map_err(|e| VisionError::Io { path: path.to_path_buf(), source: e })?;
    decode_image(&bytes).map_err(|e| VisionError::Frame { path: path.to_path_buf(), source: e })
}

/// Crops the largest detected face of every frame in `frames_dir` to a
/// 32x32 PPM in `out_dir` under the frame's stem. Frames are all decoded
/// before any detection runs, so an unreadable frame fails up front.
pub fn preprocess_frames(
    frames_dir: &Path,
    cascade: &CascadeModel,
    params: &DetectParams,
    out_dir: &Path,
) -> Result<PreprocessReport, VisionError> {
    cascade.validate()?;
    let paths = list_frames(frames_dir)?;
    let images = paths.iter().map(|p| read_image(p)).collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(out_dir).map_err(|e| VisionError::Io { path: out_dir.to_path_buf(), source: e })?;
    let mut report = PreprocessReport { frames_total: paths.len(), ..Default::default() };
    for (path, img) in paths.iter().zip(&images) {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let faces = detect_faces(img, cascade, params)?;
        let Some(face) = faces.first() else {
            log::debug!("no face in {name}");
            report.frames_skipped += 1;
            report.skipped.push(name);
            continue;
        };
        if faces.len() > 1 {
            log::debug!("{name}: {} faces, keeping the largest", faces.len());
        }
        let crop = tensor_to_image(&crop_resize::<f32>(img, face, CROP_SIZE)?)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let dst = out_dir.join(format!("{stem}.ppm"));
        fs::write(&dst, encode_ppm(&crop)).map_err(|e| VisionError::Io { path: dst.clone(), source: e })?;
        report.faces_found += 1;
    }
    log::info!(
        "preprocessed {} frames: {} faces, {} skipped",
        report.frames_total,
        report.faces_found,
        report.frames_skipped
    );
    Ok(report)
}
