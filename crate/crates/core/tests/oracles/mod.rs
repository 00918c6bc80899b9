//! Brute-force reference implementations shared by the integration tests.
//! Nothing here calls into the kernels it checks.
#![allow(dead_code)]

use std::path::PathBuf;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gesture_forge::vision::cascade::ScaledCascade;
use gesture_forge::vision::{CascadeModel, GrayImage, ImageBuffer};
use gesture_forge::{Shape, Tensor};

pub fn fixture(name: &str) -> PathBuf {
    // resolves from any crate in the workspace
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures")).join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: Shape, lo: f32, hi: f32, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

// --- kernels ---

/// Six nested loops over a zero-padded input, in f64.
pub fn conv_reference(
    input: &Tensor<f32>,
    weights: &Tensor<f32>,
    bias: &[f32],
    pad: usize,
    stride: usize,
) -> Vec<f64> {
    let s = input.shape();
    let ws = weights.shape();
    let oh = (s.h + 2 * pad - ws.h) / stride + 1;
    let ow = (s.w + 2 * pad - ws.w) / stride + 1;
    let mut out = Vec::with_capacity(s.n * ws.n * oh * ow);
    for n in 0..s.n {
        for f in 0..ws.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[f] as f64;
                    for c in 0..s.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                acc += input.get(n, c, iy as usize, ix as usize) as f64
                                    * weights.get(f, c, ky, kx) as f64;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Window maxima by direct scan, floor geometry.
pub fn pool_reference(input: &Tensor<f32>, size: usize, stride: usize) -> Vec<f32> {
    let s = input.shape();
    let oh = (s.h - size) / stride + 1;
    let ow = (s.w - size) / stride + 1;
    let mut out = Vec::new();
    for n in 0..s.n {
        for c in 0..s.c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut m = f32::NEG_INFINITY;
                    for dy in 0..size {
                        for dx in 0..size {
                            m = m.max(input.get(n, c, oy * stride + dy, ox * stride + dx));
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    out
}

/// Two-pass per-channel mean and biased variance over (N, H, W).
pub fn channel_stats(input: &Tensor<f32>) -> Vec<(f64, f64)> {
    let s = input.shape();
    (0..s.c)
        .map(|c| {
            let mut vals = Vec::new();
            for n in 0..s.n {
                for y in 0..s.h {
                    for x in 0..s.w {
                        vals.push(input.get(n, c, y, x) as f64);
                    }
                }
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            (mean, var)
        })
        .collect()
}

/// Batch norm with batch statistics, `gamma * (x - mu) / sqrt(var + eps) + beta`.
pub fn batchnorm_reference(input: &Tensor<f32>, gamma: &[f32], beta: &[f32], eps: f64) -> Vec<f64> {
    let s = input.shape();
    let stats = channel_stats(input);
    let mut out = Vec::with_capacity(s.len());
    for n in 0..s.n {
        for c in 0..s.c {
            let (mu, var) = stats[c];
            for y in 0..s.h {
                for x in 0..s.w {
                    let v = input.get(n, c, y, x) as f64;
                    out.push(gamma[c] as f64 * (v - mu) / (var + eps).sqrt() + beta[c] as f64);
                }
            }
        }
    }
    out
}

// --- vision ---

pub fn pixel_rect_sum(g: &GrayImage, x: u32, y: u32, w: u32, h: u32) -> u64 {
    let mut s = 0u64;
    for yy in y..y + h {
        for xx in x..x + w {
            s += g.get(xx, yy) as u64;
        }
    }
    s
}

pub fn pixel_rect_sq_sum(g: &GrayImage, x: u32, y: u32, w: u32, h: u32) -> u64 {
    let mut s = 0u64;
    for yy in y..y + h {
        for xx in x..x + w {
            s += (g.get(xx, yy) as u64).pow(2);
        }
    }
    s
}

/// Every stage sum of the window at `(x, y)`, from pixel loops; `None` for
/// flat windows.
pub fn window_stage_sums(cascade: &ScaledCascade, g: &GrayImage, x: u32, y: u32) -> Option<Vec<f64>> {
    let (w, h) = cascade.window;
    let area = w as u128 * h as u128;
    let s = pixel_rect_sum(g, x, y, w, h) as u128;
    let sq = pixel_rect_sq_sum(g, x, y, w, h) as u128;
    let norm = ((area * sq - s * s) as f64).sqrt();
    if norm == 0.0 {
        return None;
    }
    let mut sums = Vec::new();
    for stage in &cascade.stages {
        let mut total = 0.0;
        for c in &stage.classifiers {
            let mut raw = 0.0;
            for r in &c.rects {
                raw += r.weight * pixel_rect_sum(g, x + r.x, y + r.y, r.width, r.height) as f64;
            }
            total += if raw / norm < c.threshold { c.left } else { c.right };
        }
        sums.push(total);
    }
    Some(sums)
}

/// Accepts when every stage sum reaches its threshold; the score is the sum
/// of the margins.
pub fn window_score(cascade: &ScaledCascade, g: &GrayImage, x: u32, y: u32) -> Option<f64> {
    let sums = window_stage_sums(cascade, g, x, y)?;
    let margins: Vec<f64> = sums.iter().zip(&cascade.stages).map(|(s, st)| s - st.threshold).collect();
    margins.iter().all(|m| *m >= 0.0).then(|| margins.iter().sum())
}

pub fn cascade_counts(model: &CascadeModel) -> (usize, usize) {
    (model.stages.len(), model.classifier_count())
}

/// Pixel-center bilinear resample of a box to `size x size`, edge-clamped,
/// in [0, 1].
pub fn bilinear_reference(img: &ImageBuffer, bx: u32, by: u32, bw: u32, bh: u32, size: u32) -> Vec<f64> {
    let mut out = vec![0.0; 3 * (size * size) as usize];
    for ch in 0..3 {
        for oy in 0..size {
            for ox in 0..size {
                let sx = (ox as f64 + 0.5) * bw as f64 / size as f64 - 0.5;
                let sy = (oy as f64 + 0.5) * bh as f64 / size as f64 - 0.5;
                let sx = sx.clamp(0.0, (bw - 1) as f64);
                let sy = sy.clamp(0.0, (bh - 1) as f64);
                let (x0, y0) = (sx.floor(), sy.floor());
                let (x1, y1) = ((x0 + 1.0).min((bw - 1) as f64), (y0 + 1.0).min((bh - 1) as f64));
                let (tx, ty) = (sx - x0, sy - y0);
                let p = |x: f64, y: f64| img.pixel(bx + x as u32, by + y as u32)[ch] as f64;
                let v = (1.0 - ty) * ((1.0 - tx) * p(x0, y0) + tx * p(x1, y0))
                    + ty * ((1.0 - tx) * p(x0, y1) + tx * p(x1, y1));
                out[(ch as u32 * size * size + oy * size + ox) as usize] = v / 255.0;
            }
        }
    }
    out
}

// --- metrics ---

/// The five metrics from per-sample counting in exact arithmetic, in the
/// order accuracy, sensitivity, specificity, precision, f1. `None` marks a
/// zero denominator.
pub fn brute_metrics(predictions: &[usize], labels: &[usize]) -> [Option<Ratio<i64>>; 5] {
    let (mut tp, mut fp, mut tn, mut fn_) = (0i64, 0i64, 0i64, 0i64);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == 1, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: i64, b: i64| (b != 0).then(|| Ratio::new(a, b));
    let accuracy = ratio(tp + tn, tp + tn + fp + fn_);
    let sensitivity = ratio(tp, tp + fn_);
    let specificity = ratio(tn, tn + fp);
    let precision = ratio(tp, tp + fp);
    // harmonic mean of precision and sensitivity, from its definition
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(s)) if p + s != Ratio::from_integer(0) => Some(Ratio::from_integer(2) * p * s / (p + s)),
        _ => None,
    };
    [accuracy, sensitivity, specificity, precision, f1]
}

/// Mean and sample standard deviation (n - 1), written out longhand.
pub fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

// --- cohort fixtures ---

/// Per-participant frame counts and annotation-event tallies of the bundled
/// cohort fixture.
pub struct CohortCounts {
    pub raw: serde_json::Value,
}

impl CohortCounts {
    pub fn load() -> Self {
        let text = std::fs::read_to_string(fixture("cohort_counts.json")).expect("cohort fixture");
        Self { raw: serde_json::from_str(&text).expect("cohort fixture is JSON") }
    }

    fn rows(&self, key: &str) -> &Vec<serde_json::Value> {
        self.raw[key].as_array().expect("fixture rows")
    }

    /// `(id, neutral, tongue_out)` per adult.
    pub fn adults(&self) -> Vec<(String, usize, usize)> {
        self.rows("adults")
            .iter()
            .map(|r| (r[0].as_str().unwrap().to_string(), r[1].as_u64().unwrap() as usize, r[2].as_u64().unwrap() as usize))
            .collect()
    }

    /// `(id, gender, age, neutral, tongue_out)` per child.
    pub fn children(&self) -> Vec<(String, String, u64, usize, usize)> {
        self.rows("children")
            .iter()
            .map(|r| {
                (
                    r[0].as_str().unwrap().to_string(),
                    r[1].as_str().unwrap().to_string(),
                    r[2].as_u64().unwrap(),
                    r[3].as_u64().unwrap() as usize,
                    r[4].as_u64().unwrap() as usize,
                )
            })
            .collect()
    }

    /// `(id, [(events, frames); 3])` per child, for tongue-out, smiling and
    /// mouth opening.
    pub fn events(&self) -> Vec<(String, [(usize, usize); 3])> {
        self.rows("events")
            .iter()
            .map(|r| {
                let pair = |v: &serde_json::Value| (v[0].as_u64().unwrap() as usize, v[1].as_u64().unwrap() as usize);
                (r[0].as_str().unwrap().to_string(), [pair(&r[1]), pair(&r[2]), pair(&r[3])])
            })
            .collect()
    }

    pub fn pair(&self, key: &str) -> (usize, usize) {
        let v = &self.raw[key];
        (v[0].as_u64().unwrap() as usize, v[1].as_u64().unwrap() as usize)
    }

    /// Manifest JSON with `count` placeholder paths per class.
    fn manifest_json(participants: Vec<serde_json::Value>) -> String {
        serde_json::json!({ "fps": 30.0, "participants": participants }).to_string()
    }

    fn paths(id: &str, class: &str, count: usize) -> Vec<String> {
        (0..count).map(|i| format!("{id}/{class}/{i:05}.ppm")).collect()
    }

    pub fn adult_manifest_json(&self) -> String {
        let ps = self
            .adults()
            .into_iter()
            .map(|(id, n, t)| {
                serde_json::json!({
                    "id": id, "cohort": "adult",
                    "frames": { "neutral": Self::paths(&id, "neutral", n), "tongue_out": Self::paths(&id, "tongue_out", t) }
                })
            })
            .collect();
        Self::manifest_json(ps)
    }

    /// Children with their smiling and mouth-opening frames as well.
    pub fn child_manifest_json(&self) -> String {
        let events = self.events();
        let ps = self
            .children()
            .into_iter()
            .map(|(id, gender, age, n, t)| {
                let ev = &events.iter().find(|e| e.0 == id).expect("events for every child").1;
                serde_json::json!({
                    "id": id, "cohort": "child", "gender": gender, "age_years": age,
                    "frames": {
                        "neutral": Self::paths(&id, "neutral", n),
                        "tongue_out": Self::paths(&id, "tongue_out", t),
                        "smiling": Self::paths(&id, "smiling", ev[1].1),
                        "mouth_opening": Self::paths(&id, "mouth_opening", ev[2].1),
                    }
                })
            })
            .collect();
        Self::manifest_json(ps)
    }

    pub fn manifests(&self) -> (gesture_forge::dataset::DatasetManifest, gesture_forge::dataset::DatasetManifest) {
        use gesture_forge::dataset::DatasetManifest;
        (
            DatasetManifest::from_json(&self.adult_manifest_json(), "/fixture/adults").unwrap(),
            DatasetManifest::from_json(&self.child_manifest_json(), "/fixture/children").unwrap(),
        )
    }
}
