//! A separable stand-in for the private recordings: cartoon faces whose
//! tongue-out frames carry a rendered blob below the mouth.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{save_manifest, Cohort, DatasetManifest, Gender, GestureClass, Participant, DEFAULT_FPS};
use crate::experiments::ExperimentError;
use crate::vision::{encode_ppm, ImageBuffer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub children: usize,
    pub adults: usize,
    /// Frames per participant and class.
    pub neutral: usize,
    pub tongue_out: usize,
    pub smiling: usize,
    pub mouth_opening: usize,
    pub size: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { children: 5, adults: 17, neutral: 40, tongue_out: 20, smiling: 8, mouth_opening: 8, size: 32, seed: 2024 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticDataset {
    pub adults: PathBuf,
    pub children: PathBuf,
}

/// Per-participant appearance.
#[derive(Clone, Copy, Debug)]
struct Style {
    background: [f64; 3],
    skin: [f64; 3],
    dx: f64,
    dy: f64,
    scale: f64,
}

impl Style {
    fn draw(cohort: Cohort, rng: &mut ChaCha8Rng) -> Self {
        // red stays below green or blue so no background reads as tongue-coloured
        let (g, b) = (rng.random_range(40.0..210.0), rng.random_range(40.0..210.0));
        let background = [rng.random_range(10.0..f64::min(g, b).max(40.0)), g, b];
        let tone = rng.random_range(0.0..1.0);
        let skin = [150.0 + 80.0 * tone, 110.0 + 70.0 * tone, 80.0 + 60.0 * tone];
        let scale = match cohort {
            Cohort::Adult => rng.random_range(0.95..1.1),
            Cohort::Child => rng.random_range(0.75..0.9),
        };
        Self { background, skin, dx: rng.random_range(-3.0..3.0), dy: rng.random_range(-3.0..3.0), scale }
    }
}

fn render(style: &Style, class: GestureClass, size: u32, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let s = f64::from(size) / 32.0;
    let cx = (16.0 + style.dx + rng.random_range(-1.0..1.0)) * s;
    let cy = (14.0 + style.dy + rng.random_range(-1.0..1.0)) * s;
    let k = style.scale * s;
    let light = rng.random_range(-12.0..12.0);
    let (rx, ry) = (10.5 * k, 12.5 * k);
    let dark = [40.0, 20.0, 25.0];
    let tongue = [225.0, 55.0, 95.0];
    let mut noise = ChaCha8Rng::seed_from_u64(rng.random());
    ImageBuffer::from_fn(size, size, |x, y| {
        let (px, py) = (f64::from(x) + 0.5, f64::from(y) + 0.5);
        let (u, v) = ((px - cx) / k, (py - cy) / k);
        let mut c = style.background;
        if (u * k / rx).powi(2) + (v * k / ry).powi(2) <= 1.0 {
            c = style.skin;
        }
        // eyes
        if ((u - 4.0).powi(2) + (v + 4.0).powi(2)).sqrt() < 1.4 || ((u + 4.0).powi(2) + (v + 4.0).powi(2)).sqrt() < 1.4 {
            c = dark;
        }
        let mouth = match class {
            GestureClass::Neutral | GestureClass::TongueOut => u.abs() <= 3.0 && (v - 5.0).abs() <= 0.6,
            GestureClass::Smiling => u.abs() <= 4.5 && (v - (4.0 + 0.12 * (20.0 - u * u).max(0.0) * 0.5)).abs() <= 0.7,
            GestureClass::MouthOpening => (u / 2.6).powi(2) + ((v - 5.5) / 2.2).powi(2) <= 1.0,
        };
        if mouth {
            c = dark;
        }
        if class == GestureClass::TongueOut && (u.powi(2) + ((v - 7.5) / 1.3).powi(2)).sqrt() <= 2.6 {
            c = tongue;
        }
        let mut out = [0u8; 3];
        for (o, ch) in out.iter_mut().zip(c) {
            *o = (ch + light + noise.random_range(-8.0..8.0)).clamp(0.0, 255.0).round() as u8;
        }
        out
    })
}

fn write_cohort(
    root: &Path,
    cohort: Cohort,
    count: usize,
    spec: &SyntheticSpec,
    rng: &mut ChaCha8Rng,
) -> Result<DatasetManifest, ExperimentError> {
    let (prefix, dir) = match cohort {
        Cohort::Adult => ("P", "adults"),
        Cohort::Child => ("C", "children"),
    };
    let mut participants = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("{prefix}{:02}", i + 1);
        let style = Style::draw(cohort, rng);
        let pdir = root.join(dir).join(&id);
        fs::create_dir_all(&pdir).map_err(|e| ExperimentError::Io { path: pdir.clone(), source: e })?;
        let mut frames = BTreeMap::new();
        for (class, n) in [
            (GestureClass::Neutral, spec.neutral),
            (GestureClass::TongueOut, spec.tongue_out),
            (GestureClass::Smiling, spec.smiling),
            (GestureClass::MouthOpening, spec.mouth_opening),
        ] {
            let mut paths = Vec::with_capacity(n);
            for k in 0..n {
                let name = format!("{}_{k:04}.ppm", class.name());
                let img = render(&style, class, spec.size, rng);
                let path = pdir.join(&name);
                fs::write(&path, encode_ppm(&img)).map_err(|e| ExperimentError::Io { path: path.clone(), source: e })?;
                paths.push(PathBuf::from(dir).join(&id).join(name));
            }
            frames.insert(class, paths);
        }
        let (gender, age_years) = match cohort {
            Cohort::Adult => (None, None),
            Cohort::Child => (Some(if i % 2 == 0 { Gender::M } else { Gender::F }), Some(6 + (i as u32 * 3) % 11)),
        };
        participants.push(Participant { id, cohort, gender, age_years, frames });
    }
    Ok(DatasetManifest { fps: DEFAULT_FPS, participants, root: root.to_path_buf() })
}

/// Writes frames under `root` plus `adults.json` and `children.json`.
pub fn generate_synthetic(root: &Path, spec: &SyntheticSpec) -> Result<SyntheticDataset, ExperimentError> {
    if spec.size < 8 {
        return Err(ExperimentError::Report(format!("synthetic frame size {} is below 8", spec.size)));
    }
    fs::create_dir_all(root).map_err(|e| ExperimentError::Io { path: root.to_path_buf(), source: e })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let adults = write_cohort(root, Cohort::Adult, spec.adults, spec, &mut rng)?;
    let children = write_cohort(root, Cohort::Child, spec.children, spec, &mut rng)?;
    let out = SyntheticDataset { adults: root.join("adults.json"), children: root.join("children.json") };
    save_manifest(&adults, &out.adults)?;
    save_manifest(&children, &out.children)?;
    Ok(out)
}
