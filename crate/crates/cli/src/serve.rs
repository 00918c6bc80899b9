//! HTTP backend of the annotation tool.
//!
//! Videos are directories of frame images under the video root, optionally
//! with a `video.json` holding `{"fps": ...}`. Annotation documents live in
//! the annotation root as `<video_id>.json`.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;

use gesture_forge::dataset::{parse_annotation_document, AnnotationFile, FieldError, DEFAULT_FPS};
use gesture_forge::vision::{encode_bmp, list_frames, read_image};

const FALLBACK_INDEX: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>gesture-forge annotator</title></head>\n<body><p>Annotator assets are not installed. Start the service with <code>--static-dir</code> pointing at the built UI.</p>\n<p>API: <a href=\"/api/videos\">/api/videos</a></p></body></html>\n";

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    video_root: PathBuf,
    annotation_root: PathBuf,
    static_dir: Option<PathBuf>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoInfo {
    pub video_id: String,
    pub frame_count: usize,
    pub fps: f64,
}

#[derive(Deserialize)]
struct VideoMeta {
    #[serde(default = "default_fps")]
    fps: f64,
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

impl AppState {
    pub fn new(video_root: PathBuf, annotation_root: PathBuf, static_dir: Option<PathBuf>) -> Self {
        Self { inner: Arc::new(Inner { video_root, annotation_root, static_dir, locks: Mutex::new(HashMap::new()) }) }
    }

    fn video_dir(&self, id: &str) -> Option<PathBuf> {
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && !id.starts_with('.');
        let dir = self.inner.video_root.join(id);
        (valid && dir.is_dir()).then_some(dir)
    }

    fn frames(&self, id: &str) -> Option<Vec<PathBuf>> {
        list_frames(&self.video_dir(id)?).ok()
    }

    fn info(&self, id: &str) -> Option<VideoInfo> {
        let dir = self.video_dir(id)?;
        let frames = list_frames(&dir).ok()?;
        let fps = std::fs::read_to_string(dir.join("video.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<VideoMeta>(&t).ok())
            .map_or(DEFAULT_FPS, |m| m.fps);
        Some(VideoInfo { video_id: id.to_string(), frame_count: frames.len(), fps })
    }

    pub fn videos(&self) -> Vec<VideoInfo> {
        let mut ids: Vec<String> = std::fs::read_dir(&self.inner.video_root)
            .into_iter()
            .flatten()
            .flatten()
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        ids.iter().filter_map(|id| self.info(id)).collect()
    }

    fn annotation_path(&self, id: &str) -> PathBuf {
        self.inner.annotation_root.join(format!("{id}.json"))
    }

    async fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        self.inner.locks.lock().await.entry(id.to_string()).or_default().clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/videos", get(list_videos))
        .route("/api/videos/{id}/frames/{n}", get(get_frame))
        .route("/api/videos/{id}/events", get(get_events).put(put_events))
        .route("/", get(index))
        .route("/{*path}", get(static_file))
        .with_state(state)
}

fn not_found(what: impl std::fmt::Display) -> Response {
    (StatusCode::NOT_FOUND, Json(json!({ "error": format!("{what} not found") }))).into_response()
}

fn unprocessable(errors: Vec<FieldError>) -> Response {
    (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "errors": errors }))).into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    log::error!("{e}");
    (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({ "error": e.to_string() }))).into_response()
}

async fn list_videos(State(state): State<AppState>) -> Response {
    Json(state.videos()).into_response()
}

async fn get_frame(State(state): State<AppState>, UrlPath((id, n)): UrlPath<(String, String)>) -> Response {
    let Some(frames) = state.frames(&id) else {
        return not_found(format!("video {id}"));
    };
    let Some(path) = n.parse::<usize>().ok().and_then(|n| frames.get(n)) else {
        return not_found(format!("frame {n} of video {id}"));
    };
    let img = match read_image(path) {
        Ok(img) => img,
        Err(e) => return internal(e),
    };
    let etag = std::fs::metadata(path)
        .ok()
        .and_then(|m| m.modified().ok())
        .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
        .map(|d| format!("\"{id}-{n}-{}\"", d.as_nanos()));
    let mut resp = Response::new(Body::from(encode_bmp(&img)));
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/bmp"));
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static("public, max-age=3600"));
    if let Some(tag) = etag.and_then(|t| HeaderValue::from_str(&t).ok()) {
        h.insert(header::ETAG, tag);
    }
    resp
}

fn read_document(state: &AppState, info: &VideoInfo) -> Result<AnnotationFile, String> {
    let path = state.annotation_path(&info.video_id);
    match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Ok(AnnotationFile { video_id: info.video_id.clone(), fps: info.fps, events: Vec::new() })
        }
        Err(e) => Err(format!("{}: {e}", path.display())),
    }
}

async fn get_events(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(info) = state.info(&id) else {
        return not_found(format!("video {id}"));
    };
    // readers never need the lock: documents are replaced by rename
    match read_document(&state, &info) {
        Ok(doc) => Json(doc).into_response(),
        Err(e) => internal(e),
    }
}

/// Writes `text` next to `path` and renames it into place.
fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

async fn put_events(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let Some(info) = state.info(&id) else {
        return not_found(format!("video {id}"));
    };
    let value: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return unprocessable(vec![FieldError { field: "$".into(), message: format!("malformed JSON: {e}") }]),
    };
    if let Some(fps) = value.get("fps").and_then(Value::as_f64) {
        if (fps - info.fps).abs() > 1e-9 {
            return unprocessable(vec![FieldError {
                field: "fps".into(),
                message: format!("video {id} plays at {} fps, not {fps}", info.fps),
            }]);
        }
    }
    let mut doc = match parse_annotation_document(&value, &id) {
        Ok(doc) => doc,
        Err(errors) => return unprocessable(errors),
    };
    doc.fps = info.fps;
    doc.recompute_times();
    let errors = doc.validate(Some(info.frame_count as u64));
    if !errors.is_empty() {
        return unprocessable(errors);
    }
    let text = match serde_json::to_string_pretty(&doc) {
        Ok(t) => t + "\n",
        Err(e) => return internal(e),
    };
    let lock = state.lock(&id).await;
    let _guard = lock.lock().await;
    let path = state.annotation_path(&id);
    match tokio::task::spawn_blocking(move || write_atomic(&path, &text)).await {
        Ok(Ok(())) => Json(doc).into_response(),
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        _ => "application/octet-stream",
    }
}

fn serve_static(state: &AppState, rel: &str) -> Response {
    let Some(dir) = &state.inner.static_dir else {
        return if rel == "index.html" {
            ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], FALLBACK_INDEX).into_response()
        } else {
            not_found(rel)
        };
    };
    if rel.split('/').any(|part| part.is_empty() || part == ".." || part.starts_with('.')) {
        return not_found(rel);
    }
    let path = dir.join(rel);
    match std::fs::read(&path) {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => not_found(rel),
    }
}

async fn index(State(state): State<AppState>) -> Response {
    serve_static(&state, "index.html")
}

async fn static_file(State(state): State<AppState>, UrlPath(path): UrlPath<String>) -> Response {
    serve_static(&state, &path)
}
