//! Gesture events marked on a video and their expansion into per-frame labels.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::manifest::{GestureClass, DEFAULT_FPS};
use crate::dataset::DatasetError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub gesture: GestureClass,
    pub start_frame: u64,
    pub end_frame: u64,
    pub start_time_s: f64,
    pub end_time_s: f64,
}

impl AnnotationEvent {
    /// Event with times derived from the frame indices.
    pub fn new(gesture: GestureClass, start_frame: u64, end_frame: u64, fps: f64) -> Self {
        Self {
            gesture,
            start_frame,
            end_frame,
            start_time_s: frame_time(start_frame, fps),
            end_time_s: frame_time(end_frame, fps),
        }
    }
}

/// Seconds at which frame `frame` starts.
pub fn frame_time(frame: u64, fps: f64) -> f64 {
    frame as f64 / fps
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub video_id: String,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub events: Vec<AnnotationEvent>,
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

/// A problem with one field of an annotation document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl AnnotationFile {
    /// Recomputes every event's times from its frames and `fps`.
    pub fn recompute_times(&mut self) {
        for e in &mut self.events {
            e.start_time_s = frame_time(e.start_frame, self.fps);
            e.end_time_s = frame_time(e.end_frame, self.fps);
        }
    }

    /// Structural checks; with `frame_count` also range checks. Times must
    /// agree with the frames to within half a frame.
    pub fn validate(&self, frame_count: Option<u64>) -> Vec<FieldError> {
        let mut errors = Vec::new();
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            errors.push(FieldError::new("fps", format!("must be positive, got {}", self.fps)));
            return errors;
        }
        let tolerance = 0.5 / self.fps;
        for (i, e) in self.events.iter().enumerate() {
            let f = |name: &str| format!("events[{i}].{name}");
            if e.gesture == GestureClass::Neutral {
                errors.push(FieldError::new(f("gesture"), "neutral is not an event gesture"));
            }
            if e.start_frame > e.end_frame {
                errors.push(FieldError::new(
                    f("start_frame"),
                    format!("start_frame {} is after end_frame {}", e.start_frame, e.end_frame),
                ));
            }
            if let Some(n) = frame_count {
                if e.end_frame >= n {
                    errors.push(FieldError::new(f("end_frame"), format!("frame {} is beyond the last frame {}", e.end_frame, n.saturating_sub(1))));
                }
            }
            for (name, t, frame) in [("start_time_s", e.start_time_s, e.start_frame), ("end_time_s", e.end_time_s, e.end_frame)] {
                if !((t - frame_time(frame, self.fps)).abs() <= tolerance) {
                    errors.push(FieldError::new(f(name), format!("{t} s does not match frame {frame} at {} fps", self.fps)));
                }
            }
        }
        for (i, j) in same_gesture_overlaps(&self.events) {
            errors.push(FieldError::new(
                format!("events[{j}]"),
                format!("overlaps events[{i}] of the same gesture"),
            ));
        }
        errors
    }
}

/// Pairs `(i, j)` of same-gesture events whose frame intervals intersect.
fn same_gesture_overlaps(events: &[AnnotationEvent]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| (events[i].gesture, events[i].start_frame, events[i].end_frame, i));
    let mut out = Vec::new();
    for w in order.windows(2) {
        let (a, b) = (&events[w[0]], &events[w[1]]);
        if a.gesture == b.gesture && b.start_frame <= a.end_frame {
            out.push((w[0].min(w[1]), w[0].max(w[1])));
        }
    }
    out
}

/// Parses a client document, collecting every field problem instead of
/// stopping at the first. Times are optional and recomputed from frames.
pub fn parse_annotation_document(value: &Value, video_id: &str) -> Result<AnnotationFile, Vec<FieldError>> {
    let mut errors = Vec::new();
    let Some(obj) = value.as_object() else {
        return Err(vec![FieldError::new("$", "expected a JSON object")]);
    };
    if let Some(id) = obj.get("video_id") {
        match id.as_str() {
            Some(s) if s == video_id => {}
            Some(s) => errors.push(FieldError::new("video_id", format!("{s:?} does not match the video {video_id:?}"))),
            None => errors.push(FieldError::new("video_id", "expected a string")),
        }
    }
    let fps = match obj.get("fps") {
        None => DEFAULT_FPS,
        Some(v) => match v.as_f64() {
            Some(f) if f > 0.0 && f.is_finite() => f,
            _ => {
                errors.push(FieldError::new("fps", "expected a positive number"));
                DEFAULT_FPS
            }
        },
    };
    let mut events = Vec::new();
    match obj.get("events") {
        None => {}
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                let f = |name: &str| format!("events[{i}].{name}");
                let Some(ev) = item.as_object() else {
                    errors.push(FieldError::new(format!("events[{i}]"), "expected an object"));
                    continue;
                };
                let gesture = match ev.get("gesture").and_then(Value::as_str) {
                    Some(name) => match GestureClass::from_name(name) {
                        Some(GestureClass::Neutral) | None => {
                            errors.push(FieldError::new(
                                f("gesture"),
                                format!("{name:?} is not one of tongue_out, smiling, mouth_opening"),
                            ));
                            None
                        }
                        Some(g) => Some(g),
                    },
                    None => {
                        errors.push(FieldError::new(f("gesture"), "required string"));
                        None
                    }
                };
                let mut frame = |name: &str| match ev.get(name) {
                    Some(v) => match v.as_u64() {
                        Some(n) => Some(n),
                        None => {
                            errors.push(FieldError::new(f(name), "expected a non-negative integer"));
                            None
                        }
                    },
                    None => {
                        errors.push(FieldError::new(f(name), "required"));
                        None
                    }
                };
                let start = frame("start_frame");
                let end = frame("end_frame");
                if let (Some(g), Some(s), Some(e)) = (gesture, start, end) {
                    events.push(AnnotationEvent::new(g, s, e, fps));
                }
            }
        }
        Some(_) => errors.push(FieldError::new("events", "expected an array")),
    }
    let file = AnnotationFile { video_id: video_id.to_string(), fps, events };
    if errors.is_empty() {
        errors = file.validate(None);
    }
    if errors.is_empty() {
        Ok(file)
    } else {
        Err(errors)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameLabel {
    Class(GestureClass),
    /// Within the guard band of an event boundary.
    Excluded,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub neutral: usize,
    pub tongue_out: usize,
    pub smiling: usize,
    pub mouth_opening: usize,
    pub excluded: usize,
}

impl LabelCounts {
    pub fn of(labels: &[FrameLabel]) -> Self {
        let mut c = Self::default();
        for l in labels {
            match l {
                FrameLabel::Class(GestureClass::Neutral) => c.neutral += 1,
                FrameLabel::Class(GestureClass::TongueOut) => c.tongue_out += 1,
                FrameLabel::Class(GestureClass::Smiling) => c.smiling += 1,
                FrameLabel::Class(GestureClass::MouthOpening) => c.mouth_opening += 1,
                FrameLabel::Excluded => c.excluded += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.neutral + self.tongue_out + self.smiling + self.mouth_opening + self.excluded
    }
}

/// Where different gestures overlap, the higher-priority one labels the frame.
fn priority(g: GestureClass) -> u8 {
    match g {
        GestureClass::TongueOut => 3,
        GestureClass::MouthOpening => 2,
        GestureClass::Smiling => 1,
        GestureClass::Neutral => 0,
    }
}

/// Expands events into one label per frame. Frames inside an event carry its
/// gesture; frames outside every event but within `guard` frames of an event
/// boundary are excluded; the rest are neutral.
pub fn ingest_annotations(events: &[AnnotationEvent], frame_count: u64, guard: u64) -> Result<Vec<FrameLabel>, DatasetError> {
    for (i, e) in events.iter().enumerate() {
        if e.gesture == GestureClass::Neutral {
            return Err(DatasetError::Annotation(format!("event {i} has the neutral gesture")));
        }
        if e.start_frame > e.end_frame {
            return Err(DatasetError::Annotation(format!(
                "event {i}: start frame {} after end frame {}",
                e.start_frame, e.end_frame
            )));
        }
        if e.end_frame >= frame_count {
            return Err(DatasetError::Annotation(format!(
                "event {i}: frame {} out of range for {frame_count} frames",
                e.end_frame
            )));
        }
    }
    if let Some(&(i, j)) = same_gesture_overlaps(events).first() {
        return Err(DatasetError::Annotation(format!("events {i} and {j} overlap with the same gesture")));
    }
    let n = frame_count as usize;
    let mut labels = vec![FrameLabel::Class(GestureClass::Neutral); n];
    let mut inside = vec![false; n];
    for e in events {
        for f in e.start_frame as usize..=e.end_frame as usize {
            let replace = match labels[f] {
                FrameLabel::Class(cur) => !inside[f] || priority(e.gesture) > priority(cur),
                FrameLabel::Excluded => true,
            };
            if replace {
                labels[f] = FrameLabel::Class(e.gesture);
            }
            inside[f] = true;
        }
    }
    if guard > 0 {
        for e in events {
            let before = e.start_frame.saturating_sub(guard)..e.start_frame;
            let after = e.end_frame + 1..(e.end_frame + 1 + guard).min(frame_count);
            for f in before.chain(after) {
                if !inside[f as usize] {
                    labels[f as usize] = FrameLabel::Excluded;
                }
            }
        }
    }
    Ok(labels)
}
