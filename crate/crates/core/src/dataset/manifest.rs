//! Participant manifests: who was recorded and which frame files belong to
//! which class.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetError;

pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GestureClass {
    Neutral,
    TongueOut,
    Smiling,
    MouthOpening,
}

impl GestureClass {
    pub const ALL: [GestureClass; 4] =
        [GestureClass::Neutral, GestureClass::TongueOut, GestureClass::Smiling, GestureClass::MouthOpening];

    pub fn name(self) -> &'static str {
        match self {
            GestureClass::Neutral => "neutral",
            GestureClass::TongueOut => "tongue_out",
            GestureClass::Smiling => "smiling",
            GestureClass::MouthOpening => "mouth_opening",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Network label: 1 for tongue-out, 0 for every other class.
    pub fn binary_label(self) -> usize {
        usize::from(self == GestureClass::TongueOut)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    Adult,
    Child,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub cohort: Cohort,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_years: Option<u32>,
    /// Frame files per class, relative to the manifest's directory once
    /// loaded from disk.
    #[serde(default)]
    pub frames: BTreeMap<GestureClass, Vec<PathBuf>>,
}

impl Participant {
    pub fn count(&self, class: GestureClass) -> usize {
        self.frames.get(&class).map_or(0, Vec::len)
    }

    pub fn frames_of(&self, class: GestureClass) -> &[PathBuf] {
        self.frames.get(&class).map_or(&[], Vec::as_slice)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub participants: Vec<Participant>,
    /// Directory that relative frame paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

// Loose shape used to report every offender instead of the first serde error.
#[derive(Deserialize)]
struct RawManifest {
    #[serde(default = "default_fps")]
    fps: f64,
    participants: Vec<RawParticipant>,
}

#[derive(Deserialize)]
struct RawParticipant {
    id: String,
    cohort: Cohort,
    #[serde(default)]
    gender: Option<Gender>,
    #[serde(default)]
    age_years: Option<u32>,
    #[serde(default)]
    frames: BTreeMap<String, Vec<PathBuf>>,
}

impl DatasetManifest {
    pub fn participant(&self, id: &str) -> Option<&Participant> {
        self.participants.iter().find(|p| p.id == id)
    }

    pub fn cohort(&self, cohort: Cohort) -> impl Iterator<Item = &Participant> {
        self.participants.iter().filter(move |p| p.cohort == cohort)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    /// Per-participant class counts, in manifest order.
    pub fn counts(&self) -> Vec<(String, BTreeMap<GestureClass, usize>)> {
        self.participants
            .iter()
            .map(|p| (p.id.clone(), GestureClass::ALL.iter().map(|&c| (c, p.count(c))).collect()))
            .collect()
    }

    /// Parses and validates a manifest without touching the file system.
    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self, DatasetError> {
        let raw: RawManifest = serde_json::from_str(text)?;
        let mut problems = Vec::new();
        if !(raw.fps > 0.0 && raw.fps.is_finite()) {
            problems.push(format!("fps must be positive, got {}", raw.fps));
        }
        let mut seen = BTreeSet::new();
        let mut participants = Vec::with_capacity(raw.participants.len());
        for p in raw.participants {
            if p.id.trim().is_empty() {
                problems.push("participant with an empty id".to_string());
            }
            if !seen.insert(p.id.clone()) {
                problems.push(format!("duplicate participant id {}", p.id));
            }
            let mut frames = BTreeMap::new();
            for (name, paths) in p.frames {
                match GestureClass::from_name(&name) {
                    Some(c) => {
                        frames.insert(c, paths);
                    }
                    None => problems.push(format!("participant {}: unknown class {name:?}", p.id)),
                }
            }
            participants.push(Participant { id: p.id, cohort: p.cohort, gender: p.gender, age_years: p.age_years, frames });
        }
        if !problems.is_empty() {
            return Err(DatasetError::Validation(problems));
        }
        Ok(Self { fps: raw.fps, participants, root: root.into() })
    }

    /// Every referenced frame that does not exist, as validation messages.
    pub fn missing_files(&self) -> Vec<String> {
        let mut missing = Vec::new();
        for p in &self.participants {
            for (class, paths) in &p.frames {
                for path in paths {
                    if !self.resolve(path).is_file() {
                        missing.push(format!("participant {} ({}): missing file {}", p.id, class.name(), path.display()));
                    }
                }
            }
        }
        missing
    }
}

/// Loads a manifest, resolving frame paths against its directory and
/// checking that every file exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = DatasetManifest::from_json(&text, root)?;
    let missing = manifest.missing_files();
    if !missing.is_empty() {
        return Err(DatasetError::Validation(missing));
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text).map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })
}
