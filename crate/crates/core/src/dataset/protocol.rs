//! Leave-one-subject-out folds and the four training scenarios built on them.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::manifest::{Cohort, DatasetManifest, GestureClass, Participant};
use crate::dataset::DatasetError;
use crate::model::TrainSample;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vision::{decode_image, resize_image, CROP_SIZE};

/// Classes the network is trained on; the auxiliary ones only enter tests.
pub const TRAINING_CLASSES: [GestureClass; 2] = [GestureClass::Neutral, GestureClass::TongueOut];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// One fold per participant of `cohort`, in manifest order.
pub fn loso_splits(manifest: &DatasetManifest, cohort: Cohort) -> Result<Vec<Fold>, DatasetError> {
    let ids: Vec<&str> = manifest.cohort(cohort).map(|p| p.id.as_str()).collect();
    if ids.len() < 2 {
        return Err(DatasetError::Split(format!(
            "leave-one-subject-out needs at least 2 participants, found {}",
            ids.len()
        )));
    }
    Ok(ids
        .iter()
        .enumerate()
        .map(|(fold_id, test)| Fold {
            fold_id,
            train: ids.iter().filter(|id| *id != test).map(|s| s.to_string()).collect(),
            test: vec![test.to_string()],
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Scenario {
    /// Train on adults, test on each child.
    AdultsOnly,
    /// Train on the other children.
    ChildrenOnly,
    /// Train on adults and the other children together.
    Combined,
    /// Pretrain on adults, fine-tune on the other children.
    Transfer,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::AdultsOnly, Scenario::ChildrenOnly, Scenario::Combined, Scenario::Transfer];

    pub fn id(self) -> u8 {
        match self {
            Scenario::AdultsOnly => 1,
            Scenario::ChildrenOnly => 2,
            Scenario::Combined => 3,
            Scenario::Transfer => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.id() == id)
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s.id()
    }
}

impl TryFrom<u8> for Scenario {
    type Error = String;
    fn try_from(id: u8) -> Result<Self, String> {
        Scenario::from_id(id).ok_or_else(|| format!("unknown scenario {id}; expected 1-4"))
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub participant_id: String,
    pub class: GestureClass,
    /// Resolved frame path.
    pub path: PathBuf,
}

impl Sample {
    pub fn label(&self) -> usize {
        self.class.binary_label()
    }
}

fn samples_of(manifest: &DatasetManifest, p: &Participant, classes: &[GestureClass]) -> Vec<Sample> {
    classes
        .iter()
        .flat_map(|&class| {
            p.frames_of(class).iter().map(move |path| Sample {
                participant_id: p.id.clone(),
                class,
                path: manifest.resolve(path),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSets {
    pub scenario: Scenario,
    pub fold_id: usize,
    /// Adult samples used before fine-tuning; empty unless scenario 4.
    pub pretrain: Vec<Sample>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl ScenarioSets {
    pub fn participants(samples: &[Sample]) -> BTreeSet<&str> {
        samples.iter().map(|s| s.participant_id.as_str()).collect()
    }

    /// Errors if a test participant contributes to any training portion.
    pub fn check_leakage(&self) -> Result<(), DatasetError> {
        let test = Self::participants(&self.test);
        for (name, set) in [("pretrain", &self.pretrain), ("train", &self.train)] {
            let leaked: Vec<&str> = Self::participants(set).intersection(&test).copied().collect();
            if !leaked.is_empty() {
                return Err(DatasetError::Leakage(format!(
                    "fold {}: test participants {leaked:?} appear in the {name} set",
                    self.fold_id
                )));
            }
        }
        Ok(())
    }
}

fn child<'a>(children: &'a DatasetManifest, id: &str) -> Result<&'a Participant, DatasetError> {
    match children.participant(id) {
        Some(p) if p.cohort == Cohort::Child => Ok(p),
        Some(_) => Err(DatasetError::Leakage(format!("participant {id} in the children manifest is not a child"))),
        None => Err(DatasetError::Split(format!("participant {id} is not in the children manifest"))),
    }
}

/// Assembles the training and test samples of one fold. Only neutral and
/// tongue-out frames are used; see [`add_misc_class`] for the others.
pub fn build_scenario(
    scenario: Scenario,
    fold: &Fold,
    adults: &DatasetManifest,
    children: &DatasetManifest,
) -> Result<ScenarioSets, DatasetError> {
    if fold.test.iter().any(|t| fold.train.contains(t)) {
        return Err(DatasetError::Leakage(format!("fold {} lists a participant on both sides", fold.fold_id)));
    }
    let child_ids: BTreeSet<&str> = children.participants.iter().map(|p| p.id.as_str()).collect();
    let mut adult_samples = Vec::new();
    if scenario != Scenario::ChildrenOnly {
        for p in &adults.participants {
            if p.cohort != Cohort::Adult {
                return Err(DatasetError::Leakage(format!("participant {} in the adult manifest is not an adult", p.id)));
            }
            if child_ids.contains(p.id.as_str()) {
                return Err(DatasetError::Leakage(format!("participant id {} appears in both cohorts", p.id)));
            }
            adult_samples.extend(samples_of(adults, p, &TRAINING_CLASSES));
        }
    }
    let mut child_train = Vec::new();
    if scenario != Scenario::AdultsOnly {
        for id in &fold.train {
            child_train.extend(samples_of(children, child(children, id)?, &TRAINING_CLASSES));
        }
    }
    let mut test = Vec::new();
    for id in &fold.test {
        test.extend(samples_of(children, child(children, id)?, &TRAINING_CLASSES));
    }
    let (pretrain, train) = match scenario {
        Scenario::AdultsOnly => (Vec::new(), adult_samples),
        Scenario::ChildrenOnly => (Vec::new(), child_train),
        Scenario::Combined => {
            adult_samples.extend(child_train);
            (Vec::new(), adult_samples)
        }
        Scenario::Transfer => (adult_samples, child_train),
    };
    let sets = ScenarioSets { scenario, fold_id: fold.fold_id, pretrain, train, test };
    sets.check_leakage()?;
    Ok(sets)
}

/// Appends the test participants' smiling and mouth-opening frames to the
/// test set as negatives.
pub fn add_misc_class(test: &[Sample], manifest: &DatasetManifest) -> Vec<Sample> {
    let mut out = test.to_vec();
    let ids: BTreeSet<&str> = ScenarioSets::participants(test);
    for id in ids {
        let Some(p) = manifest.participant(id) else {
            log::warn!("misc class: participant {id} not in manifest");
            continue;
        };
        let extra = samples_of(manifest, p, &[GestureClass::Smiling, GestureClass::MouthOpening]);
        if extra.is_empty() {
            log::warn!("misc class: participant {id} has no smiling or mouth-opening frames");
        }
        out.extend(extra);
    }
    out
}

/// Order-sensitive digest of a sample list.
pub fn sample_digest(samples: &[Sample]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for s in samples {
        h.update(s.participant_id.as_bytes());
        h.update(&[0, s.class as u8]);
        h.update(s.path.to_string_lossy().as_bytes());
        h.update(&[0]);
    }
    h.finalize()
}

/// Loads a frame as a 1x3x32x32 tensor in [0,1], resizing other sizes.
pub fn load_frame_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>, DatasetError> {
    let bytes = fs::read(path).map_err(|e| DatasetError::Io { path: path.to_path_buf(), source: e })?;
    let img = decode_image(&bytes).map_err(|e| DatasetError::Image { path: path.to_path_buf(), source: e.into() })?;
    resize_image(&img, CROP_SIZE).map_err(|e| DatasetError::Image { path: path.to_path_buf(), source: e })
}

/// Loads every sample's frame, grouping by participant for the stratified
/// validation split.
pub fn load_training_samples<T: Scalar>(samples: &[Sample]) -> Result<Vec<TrainSample<T>>, DatasetError> {
    samples
        .iter()
        .map(|s| {
            Ok(TrainSample { input: load_frame_tensor(&s.path)?, label: s.label(), group: s.participant_id.clone() })
        })
        .collect()
}
