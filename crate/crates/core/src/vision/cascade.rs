//! Boosted Haar cascades: the old-style XML schema, window evaluation over
//! integral images, and multi-scale detection with neighbor grouping.

use thiserror::Error;

use crate::vision::image::{to_grayscale, ImageBuffer};
use crate::vision::integral::IntegralImage;

#[derive(Debug, Error, PartialEq)]
pub enum CascadeError {
    #[error("malformed cascade XML: {0}")]
    Xml(String),
    #[error("cascade element {path}: {message}")]
    Invalid { path: String, message: String },
    #[error("degenerate cascade: {0}")]
    Degenerate(String),
}

fn invalid(path: &str, message: impl Into<String>) -> CascadeError {
    CascadeError::Invalid { path: path.to_string(), message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HaarRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakClassifier {
    pub rects: Vec<HaarRect>,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub threshold: f64,
    pub classifiers: Vec<WeakClassifier>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel {
    pub window: (u32, u32),
    pub stages: Vec<Stage>,
}

impl CascadeModel {
    pub fn classifier_count(&self) -> usize {
        self.stages.iter().map(|s| s.classifiers.len()).sum()
    }

    pub fn validate(&self) -> Result<(), CascadeError> {
        let (w, h) = self.window;
        if w == 0 || h == 0 {
            return Err(CascadeError::Degenerate(format!("window {w}x{h}")));
        }
        if self.stages.is_empty() {
            return Err(CascadeError::Degenerate("no stages".into()));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.classifiers.is_empty() {
                return Err(CascadeError::Degenerate(format!("stage {i} has no classifiers")));
            }
            for c in &stage.classifiers {
                if c.rects.is_empty() {
                    return Err(CascadeError::Degenerate(format!("stage {i} has a feature without rectangles")));
                }
                for r in &c.rects {
                    if r.width == 0 || r.height == 0 || r.x + r.width > w || r.y + r.height > h {
                        return Err(CascadeError::Degenerate(format!("stage {i} rectangle {r:?} leaves the window")));
                    }
                }
            }
        }
        Ok(())
    }

    /// The cascade resampled to a window `scale` times the base size.
    pub fn scaled(&self, scale: f64) -> ScaledCascade {
        let win_w = ((self.window.0 as f64 * scale).round() as u32).max(1);
        let win_h = ((self.window.1 as f64 * scale).round() as u32).max(1);
        let stages = self
            .stages
            .iter()
            .map(|st| ScaledStage {
                threshold: st.threshold,
                classifiers: st
                    .classifiers
                    .iter()
                    .map(|c| ScaledClassifier {
                        rects: scale_rects(&c.rects, scale, win_w, win_h),
                        threshold: c.threshold,
                        left: c.left,
                        right: c.right,
                    })
                    .collect(),
            })
            .collect();
        ScaledCascade { scale, window: (win_w, win_h), stages }
    }
}

fn scale_rects(rects: &[HaarRect], scale: f64, win_w: u32, win_h: u32) -> Vec<HaarRect> {
    let area = |r: &HaarRect| (r.width as f64) * (r.height as f64);
    let balanced = rects.iter().map(|r| r.weight * area(r)).sum::<f64>() == 0.0;
    let mut out: Vec<HaarRect> = rects
        .iter()
        .map(|r| {
            let x = ((r.x as f64 * scale).round() as u32).min(win_w - 1);
            let y = ((r.y as f64 * scale).round() as u32).min(win_h - 1);
            let width = ((r.width as f64 * scale).round() as u32).clamp(1, win_w - x);
            let height = ((r.height as f64 * scale).round() as u32).clamp(1, win_h - y);
            HaarRect { x, y, width, height, weight: r.weight }
        })
        .collect();
    // Rounding breaks the zero-sum balance of the weighted areas; restore it
    // through the first rectangle.
    if balanced && out.len() > 1 && scale != 1.0 {
        let rest: f64 = out[1..].iter().map(|r| r.weight * area(r)).sum();
        out[0].weight = -rest / area(&out[0]);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaledClassifier {
    pub rects: Vec<HaarRect>,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaledStage {
    pub threshold: f64,
    pub classifiers: Vec<ScaledClassifier>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaledCascade {
    pub scale: f64,
    pub window: (u32, u32),
    pub stages: Vec<ScaledStage>,
}

impl ScaledCascade {
    /// `sqrt(A * sum(x^2) - sum(x)^2)` for the window at `(x, y)`; zero for
    /// flat windows. Feature sums divided by this equal `sum / (A * sigma)`.
    pub fn norm_factor(&self, ii: &IntegralImage, x: u32, y: u32) -> f64 {
        let (w, h) = self.window;
        let area = w as u128 * h as u128;
        let s = ii.rect_sum(x, y, w, h) as u128;
        let sq = ii.rect_sq_sum(x, y, w, h) as u128;
        ((area * sq - s * s) as f64).sqrt()
    }

    fn stage_sum(&self, stage: &ScaledStage, ii: &IntegralImage, x: u32, y: u32, norm: f64) -> f64 {
        stage
            .classifiers
            .iter()
            .map(|c| {
                let raw: f64 =
                    c.rects.iter().map(|r| r.weight * ii.rect_sum(x + r.x, y + r.y, r.width, r.height) as f64).sum();
                if raw / norm < c.threshold {
                    c.left
                } else {
                    c.right
                }
            })
            .sum()
    }

    /// Evaluates stages in order, stopping at the first rejecting one.
    /// Returns the accumulated stage margin when every stage passes.
    pub fn evaluate(&self, ii: &IntegralImage, x: u32, y: u32) -> Option<f64> {
        let norm = self.norm_factor(ii, x, y);
        if norm == 0.0 {
            return None;
        }
        let mut score = 0.0;
        for stage in &self.stages {
            let margin = self.stage_sum(stage, ii, x, y, norm) - stage.threshold;
            if margin < 0.0 {
                return None;
            }
            score += margin;
        }
        Some(score)
    }

    /// Every stage sum for the window, without early rejection; `None` for
    /// flat windows.
    pub fn stage_sums(&self, ii: &IntegralImage, x: u32, y: u32) -> Option<Vec<f64>> {
        let norm = self.norm_factor(ii, x, y);
        if norm == 0.0 {
            return None;
        }
        Some(self.stages.iter().map(|s| self.stage_sum(s, ii, x, y, norm)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    /// Accumulated stage margin.
    pub score: f64,
}

impl BoundingBox {
    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.width).min(other.x + other.width);
        let y1 = (self.y + self.height).min(other.y + other.height);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = (x1 - x0) as f64 * (y1 - y0) as f64;
        inter / (self.area() as f64 + other.area() as f64 - inter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectParams {
    pub scale_step: f64,
    pub min_neighbors: usize,
    /// Smallest window considered; the cascade window when `None`.
    pub min_size: Option<(u32, u32)>,
    pub max_size: Option<(u32, u32)>,
    /// Minimum overlap for two hits to count as neighbors.
    pub group_iou: f64,
    /// Window stride in pixels per unit of scale while the scale is at most
    /// 2; beyond that the stride is one pixel per unit of scale (OpenCV's
    /// rule). 1 visits every position at the base scale.
    pub step: f64,
}

impl DetectParams {
    /// Sliding stride for windows `scale` times the base size.
    pub fn stride(&self, scale: f64) -> u32 {
        let per_unit = if scale > 2.0 { 1.0 } else { self.step };
        ((per_unit * scale).round() as u32).max(1)
    }
}

impl Default for DetectParams {
    fn default() -> Self {
        Self { scale_step: 1.1, min_neighbors: 3, min_size: None, max_size: None, group_iou: 0.5, step: 2.0 }
    }
}

/// Every accepted window over the scale pyramid, on the stride grid of
/// [`DetectParams::stride`].
pub fn raw_detections(
    ii: &IntegralImage,
    cascade: &CascadeModel,
    params: &DetectParams,
) -> Result<Vec<BoundingBox>, CascadeError> {
    cascade.validate()?;
    if !(params.scale_step > 1.0) {
        return Err(CascadeError::Degenerate(format!("scale step {} must exceed 1", params.scale_step)));
    }
    if !(params.step > 0.0) {
        return Err(CascadeError::Degenerate(format!("window step {} must be positive", params.step)));
    }
    let (img_w, img_h) = (ii.width(), ii.height());
    let mut hits = Vec::new();
    let mut scale = 1.0f64;
    loop {
        let sc = cascade.scaled(scale);
        let (w, h) = sc.window;
        if w > img_w || h > img_h || params.max_size.is_some_and(|(mw, mh)| w > mw || h > mh) {
            break;
        }
        let too_small = params.min_size.is_some_and(|(mw, mh)| w < mw || h < mh);
        if !too_small {
            let stride = params.stride(scale);
            let mut y = 0;
            while y + h <= img_h {
                let mut x = 0;
                while x + w <= img_w {
                    if let Some(score) = sc.evaluate(ii, x, y) {
                        hits.push(BoundingBox { x, y, width: w, height: h, score });
                    }
                    x += stride;
                }
                y += stride;
            }
        }
        scale *= params.scale_step;
    }
    Ok(hits)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Clusters hits whose IoU reaches `iou`, drops clusters with fewer than
/// `min_neighbors` members and averages the rest. Sorted by descending area.
pub fn group_detections(hits: &[BoundingBox], min_neighbors: usize, iou: f64) -> Vec<BoundingBox> {
    let n = hits.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if hits[i].iou(&hits[j]) >= iou {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let r = find(&mut parent, i);
        clusters[r].push(i);
    }
    let mut out: Vec<BoundingBox> = clusters
        .into_iter()
        .filter(|c| !c.is_empty() && c.len() >= min_neighbors)
        .map(|c| {
            let k = c.len() as f64;
            let mean = |f: fn(&BoundingBox) -> u32| (c.iter().map(|&i| f(&hits[i]) as f64).sum::<f64>() / k).round() as u32;
            BoundingBox {
                x: mean(|b| b.x),
                y: mean(|b| b.y),
                width: mean(|b| b.width).max(1),
                height: mean(|b| b.height).max(1),
                score: c.iter().map(|&i| hits[i].score).fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.area()
            .cmp(&a.area())
            .then(b.score.total_cmp(&a.score))
            .then((a.y, a.x).cmp(&(b.y, b.x)))
    });
    out
}

/// Multi-scale detection. Images smaller than the cascade window yield no
/// boxes.
pub fn detect_faces(
    img: &ImageBuffer,
    cascade: &CascadeModel,
    params: &DetectParams,
) -> Result<Vec<BoundingBox>, CascadeError> {
    cascade.validate()?;
    if img.width() < cascade.window.0 || img.height() < cascade.window.1 {
        return Ok(Vec::new());
    }
    let ii = IntegralImage::new(&to_grayscale(img));
    let hits = raw_detections(&ii, cascade, params)?;
    let mut boxes = group_detections(&hits, params.min_neighbors, params.group_iou);
    // averaging cannot leave the image, but keep the bound explicit
    for b in &mut boxes {
        b.x = b.x.min(img.width() - 1);
        b.y = b.y.min(img.height() - 1);
        b.width = b.width.min(img.width() - b.x);
        b.height = b.height.min(img.height() - b.y);
    }
    Ok(boxes)
}

// --- XML ---

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str, path: &str) -> Result<roxmltree::Node<'a, 'i>, CascadeError> {
    node.children()
        .find(|c| c.is_element() && c.has_tag_name(name))
        .ok_or_else(|| invalid(path, format!("missing <{name}>")))
}

fn elements<'a, 'i>(node: roxmltree::Node<'a, 'i>) -> impl Iterator<Item = roxmltree::Node<'a, 'i>> {
    node.children().filter(|c| c.is_element())
}

fn text_of<'a>(node: roxmltree::Node<'a, '_>) -> &'a str {
    node.text().unwrap_or("").trim()
}

fn number(node: roxmltree::Node<'_, '_>, path: &str) -> Result<f64, CascadeError> {
    let t = text_of(node);
    t.parse::<f64>().map_err(|_| invalid(path, format!("expected a number, found {t:?}")))
}

fn parse_rect(text: &str, path: &str, window: (u32, u32)) -> Result<HaarRect, CascadeError> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() != 5 {
        return Err(invalid(path, format!("rectangle needs 5 values, found {:?}", text)));
    }
    let int = |s: &str| s.parse::<u32>().map_err(|_| invalid(path, format!("bad rectangle coordinate {s:?}")));
    let weight = parts[4]
        .parse::<f64>()
        .map_err(|_| invalid(path, format!("bad rectangle weight {:?}", parts[4])))?;
    let r = HaarRect { x: int(parts[0])?, y: int(parts[1])?, width: int(parts[2])?, height: int(parts[3])?, weight };
    if r.width == 0 || r.height == 0 {
        return Err(invalid(path, "empty rectangle"));
    }
    if r.x + r.width > window.0 || r.y + r.height > window.1 {
        return Err(invalid(
            path,
            format!(
                "rectangle {}x{} at ({}, {}) exceeds the {}x{} window",
                r.width, r.height, r.x, r.y, window.0, window.1
            ),
        ));
    }
    Ok(r)
}

/// Parses the old-style Haar cascade schema (`<size>`, `<stages>` of
/// `<trees>` whose nodes are single-split stumps).
pub fn parse_cascade_xml(text: &str) -> Result<CascadeModel, CascadeError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| CascadeError::Xml(e.to_string()))?;
    let storage = doc.root_element();
    let root = elements(storage).next().ok_or_else(|| invalid(storage.tag_name().name(), "no cascade element"))?;
    let base = root.tag_name().name().to_string();
    let size_path = format!("{base}/size");
    let size = child(root, "size", &base)?;
    let dims: Vec<u32> = text_of(size).split_whitespace().filter_map(|s| s.parse().ok()).collect();
    let window = match dims[..] {
        [w, h] if w > 0 && h > 0 => (w, h),
        _ => return Err(invalid(&size_path, format!("expected two positive integers, found {:?}", text_of(size)))),
    };
    let stages_path = format!("{base}/stages");
    let stages_node = child(root, "stages", &base)?;
    let mut stages = Vec::new();
    for (si, stage) in elements(stages_node).enumerate() {
        let sp = format!("{stages_path}/_[{si}]");
        let trees = child(stage, "trees", &sp)?;
        let mut classifiers = Vec::new();
        for (ti, tree) in elements(trees).enumerate() {
            let tp = format!("{sp}/trees/_[{ti}]");
            let nodes: Vec<_> = elements(tree).collect();
            if nodes.len() != 1 {
                return Err(invalid(&tp, format!("only single-node trees are supported, found {} nodes", nodes.len())));
            }
            let node = nodes[0];
            let np = format!("{tp}/_[0]");
            for branch in ["left_node", "right_node"] {
                if node.children().any(|c| c.has_tag_name(branch)) {
                    return Err(invalid(&np, format!("<{branch}> trees are not supported")));
                }
            }
            let feature = child(node, "feature", &np)?;
            let fp = format!("{np}/feature");
            if let Some(t) = feature.children().find(|c| c.has_tag_name("tilted")) {
                if text_of(t) != "0" {
                    return Err(invalid(&format!("{fp}/tilted"), "tilted features are not supported"));
                }
            }
            let rects_node = child(feature, "rects", &fp)?;
            let mut rects = Vec::new();
            for (ri, r) in elements(rects_node).enumerate() {
                rects.push(parse_rect(text_of(r), &format!("{fp}/rects/_[{ri}]"), window)?);
            }
            if rects.is_empty() {
                return Err(invalid(&format!("{fp}/rects"), "feature has no rectangles"));
            }
            classifiers.push(WeakClassifier {
                rects,
                threshold: number(child(node, "threshold", &np)?, &format!("{np}/threshold"))?,
                left: number(child(node, "left_val", &np)?, &format!("{np}/left_val"))?,
                right: number(child(node, "right_val", &np)?, &format!("{np}/right_val"))?,
            });
        }
        if classifiers.is_empty() {
            return Err(invalid(&format!("{sp}/trees"), "stage has no classifiers"));
        }
        let threshold = number(child(stage, "stage_threshold", &sp)?, &format!("{sp}/stage_threshold"))?;
        stages.push(Stage { threshold, classifiers });
    }
    if stages.is_empty() {
        return Err(invalid(&stages_path, "cascade has no stages"));
    }
    Ok(CascadeModel { window, stages })
}
