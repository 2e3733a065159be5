//! HTTP service for the slice viewer.
//!
//! | method | path | result |
//! |---|---|---|
//! | GET | `/api/volumes` | `[{id, dims, spacing}]` |
//! | GET | `/api/volumes/{id}/slice?view=&index=&wl=&ww=` | 8-bit PNG |
//! | POST | `/api/volumes/{id}/samonai` | `{job_id}` (409 while a job is active) |
//! | GET | `/api/jobs/{id}` | job record |
//! | DELETE | `/api/jobs/{id}` | cancel |
//! | GET | `/api/volumes/{id}/mask/slice?view=&index=` | RGBA overlay PNG |
//! | GET | `/api/volumes/{id}/mask` | NIfTI-1 label mask |

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use super::jobs::{JobError, JobRecord, JobRegistry, JobStatus};
use super::{discover_cases, sha256_hex, PipelineError, RunConfig};
use crate::promptseg::{segmenter_by_name, Polarity, PromptPoint, Segmenter2D};
use crate::samonai::{samonai_segment_cancellable, PropagationConfig, SamonaiError};
use crate::volgrid::{
    extract_slice, load_mask, load_volume, mask_to_nifti_bytes, Image2D, Label, Mask3D, SliceAddress, View, Volume3D,
};

/// Shared service state.
pub struct AppState {
    pub volumes: BTreeMap<String, Arc<Volume3D>>,
    pub masks: RwLock<HashMap<String, Arc<Mask3D>>>,
    pub jobs: Mutex<JobRegistry>,
    /// Permits bound the number of propagations running at once.
    pub workers: Arc<Semaphore>,
    pub segmenter: Arc<dyn Segmenter2D>,
    pub samonai: PropagationConfig,
}

impl AppState {
    pub fn new(
        volumes: BTreeMap<String, Volume3D>,
        segmenter: Arc<dyn Segmenter2D>,
        samonai: PropagationConfig,
        workers: usize,
    ) -> Self {
        Self {
            volumes: volumes.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
            masks: RwLock::new(HashMap::new()),
            jobs: Mutex::new(JobRegistry::new()),
            workers: Arc::new(Semaphore::new(workers.max(1))),
            segmenter,
            samonai,
        }
    }

    /// Loads every image of the data root, and its label file as the
    /// initial mask.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let mut volumes = BTreeMap::new();
        let mut masks = HashMap::new();
        for case in discover_cases(&cfg.data_root)? {
            volumes.insert(case.case_id.clone(), load_volume(&case.image)?);
            if let Some(l) = &case.label {
                masks.insert(case.case_id.clone(), Arc::new(load_mask(l)?));
            }
        }
        let seg: Arc<dyn Segmenter2D> = Arc::from(segmenter_by_name(&cfg.segmenter)?);
        let state = Self::new(volumes, seg, cfg.samonai.clone(), cfg.server.workers);
        *state.masks.write().expect("fresh lock") = masks;
        Ok(state)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        let status = match e {
            JobError::NotFound(_) => StatusCode::NOT_FOUND,
            JobError::Busy { .. } | JobError::Finished(_) | JobError::InvalidTransition { .. } => StatusCode::CONFLICT,
        };
        Self::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeInfo {
    pub id: String,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
pub struct SliceQuery {
    pub view: View,
    pub index: usize,
    pub wl: Option<f64>,
    pub ww: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct MaskSliceQuery {
    pub view: View,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub view: View,
    pub index: usize,
    pub points: Vec<PromptPoint>,
    /// Structure the result is stored as.
    #[serde(default = "default_structure")]
    pub structure: Label,
}

fn default_structure() -> Label {
    Label::Tumor
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: u64,
}

/// Maps `[wl - ww/2, wl + ww/2]` linearly onto 0..=255, clamping outside.
pub fn window_level(img: &Image2D, wl: f64, ww: f64) -> Vec<u8> {
    let lo = wl - ww / 2.0;
    img.data.iter().map(|&v| ((v - lo) / ww * 255.0).round().clamp(0.0, 255.0) as u8).collect()
}

/// Overlay colour and opacity of each label.
pub fn label_rgba(l: Label) -> [u8; 4] {
    match l {
        Label::Background => [0, 0, 0, 0],
        Label::Liver => [0, 200, 0, 110],
        Label::Tumor => [230, 30, 30, 170],
        Label::Spleen => [40, 90, 230, 110],
    }
}

fn png(color: image::ExtendedColorType, width: usize, height: usize, bytes: &[u8]) -> ApiResult<Response> {
    let mut out = Cursor::new(Vec::new());
    image::write_buffer_with_format(&mut out, bytes, width as u32, height as u32, color, image::ImageFormat::Png)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], out.into_inner()).into_response())
}

fn volume(state: &AppState, id: &str) -> ApiResult<Arc<Volume3D>> {
    state.volumes.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("unknown volume {id}")))
}

async fn list_volumes(State(s): State<Arc<AppState>>) -> Json<Vec<VolumeInfo>> {
    Json(s.volumes.iter().map(|(id, v)| VolumeInfo { id: id.clone(), dims: v.dims(), spacing: v.spacing() }).collect())
}

async fn get_slice(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<SliceQuery>,
) -> ApiResult<Response> {
    let v = volume(&s, &id)?;
    let img = extract_slice(&v, SliceAddress::new(q.view, q.index)).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (lo, hi) = v.min_max();
    let wl = q.wl.unwrap_or(0.5 * (lo + hi));
    let ww = q.ww.unwrap_or(if hi > lo { hi - lo } else { 1.0 });
    if !(ww > 0.0 && ww.is_finite() && wl.is_finite()) {
        return Err(ApiError::bad_request("window width must be positive"));
    }
    png(image::ExtendedColorType::L8, img.cols, img.rows, &window_level(&img, wl, ww))
}

async fn get_mask_slice(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<MaskSliceQuery>,
) -> ApiResult<Response> {
    let v = volume(&s, &id)?;
    let mask = s.masks.read().expect("mask lock").get(&id).cloned().ok_or_else(|| ApiError::not_found(format!("no mask for {id}")))?;
    let addr = SliceAddress::new(q.view, q.index);
    addr.validate(v.dims()).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (rows, cols) = SliceAddress::shape(q.view, v.dims());
    let mut rgba = Vec::with_capacity(rows * cols * 4);
    for r in 0..rows {
        for c in 0..cols {
            let [x, y, z] = addr.voxel(r, c);
            rgba.extend(label_rgba(mask.get(x, y, z)));
        }
    }
    png(image::ExtendedColorType::Rgba8, cols, rows, &rgba)
}

async fn get_mask(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    volume(&s, &id)?;
    let mask = s.masks.read().expect("mask lock").get(&id).cloned().ok_or_else(|| ApiError::not_found(format!("no mask for {id}")))?;
    let disposition = format!("attachment; filename=\"{id}_mask.nii\"");
    Ok((
        [(header::CONTENT_TYPE, "application/octet-stream".to_string()), (header::CONTENT_DISPOSITION, disposition)],
        mask_to_nifti_bytes(&mask),
    )
        .into_response())
}

fn validate_request(v: &Volume3D, req: &PromptRequest) -> ApiResult<()> {
    let addr = SliceAddress::new(req.view, req.index);
    addr.validate(v.dims()).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (rows, cols) = SliceAddress::shape(req.view, v.dims());
    if let Some(p) = req.points.iter().find(|p| p.row >= rows || p.col >= cols) {
        return Err(ApiError::bad_request(format!("point ({}, {}) outside the {rows}x{cols} slice", p.row, p.col)));
    }
    if !req.points.iter().any(|p| p.polarity == Polarity::Positive) {
        return Err(ApiError::bad_request("at least one positive point is required"));
    }
    if req.structure == Label::Background {
        return Err(ApiError::bad_request("structure must not be background"));
    }
    Ok(())
}

async fn post_samonai(
    State(s): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<PromptRequest>,
) -> ApiResult<(StatusCode, Json<JobCreated>)> {
    let v = volume(&s, &id)?;
    validate_request(&v, &req)?;
    let digest = sha256_hex(serde_json::to_string(&(&id, &req)).expect("serializable request").as_bytes());
    let (rec, cancel) = s.jobs.lock().expect("job lock").submit("samonai", &id, digest)?;
    tokio::spawn(run_job(s.clone(), rec.id, id, v, req, cancel));
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id: rec.id })))
}

async fn run_job(s: Arc<AppState>, job: u64, vid: String, v: Arc<Volume3D>, req: PromptRequest, cancel: Arc<AtomicBool>) {
    let Ok(_permit) = s.workers.clone().acquire_owned().await else { return };
    // a job canceled while queued is already terminal
    if s.jobs.lock().expect("job lock").transition(job, JobStatus::Running).is_err() {
        return;
    }
    let seg = s.segmenter.clone();
    let cfg = s.samonai.clone();
    let flag = cancel.clone();
    let volume = v.clone();
    let req2 = req.clone();
    let result = tokio::task::spawn_blocking(move || {
        samonai_segment_cancellable(&volume, SliceAddress::new(req2.view, req2.index), &req2.points, seg.as_ref(), &cfg, Some(&flag))
    })
    .await;
    let mut jobs = s.jobs.lock().expect("job lock");
    match result {
        Ok(Ok(r)) if !cancel.load(std::sync::atomic::Ordering::SeqCst) => {
            s.masks.write().expect("mask lock").insert(vid.clone(), Arc::new(r.mask.to_mask(req.structure)));
            if let Ok(rec) = jobs.transition(job, JobStatus::Done) {
                rec.output = Some(format!("/api/volumes/{vid}/mask"));
            }
        }
        Ok(Ok(_)) | Ok(Err(SamonaiError::Cancelled)) => {
            let _ = jobs.transition(job, JobStatus::Canceled);
        }
        Ok(Err(e)) => {
            if let Ok(rec) = jobs.transition(job, JobStatus::Failed) {
                rec.error = Some(e.to_string());
            }
        }
        Err(e) => {
            if let Ok(rec) = jobs.transition(job, JobStatus::Failed) {
                rec.error = Some(format!("worker panicked: {e}"));
            }
        }
    }
}

async fn get_job(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<JobRecord>> {
    s.jobs.lock().expect("job lock").get(id).cloned().map(Json).ok_or_else(|| ApiError::from(JobError::NotFound(id)))
}

async fn delete_job(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<JobRecord>> {
    Ok(Json(s.jobs.lock().expect("job lock").cancel(id)?))
}

/// API routes, plus viewer assets from `static_dir` for every other path.
pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/volumes", get(list_volumes))
        .route("/api/volumes/{id}/slice", get(get_slice))
        .route("/api/volumes/{id}/samonai", axum::routing::post(post_samonai))
        .route("/api/volumes/{id}/mask", get(get_mask))
        .route("/api/volumes/{id}/mask/slice", get(get_mask_slice))
        .route("/api/jobs/{id}", get(get_job).delete(delete_job))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `cfg.server.addr` and serves until the process ends.
pub async fn serve(cfg: &RunConfig) -> Result<(), PipelineError> {
    let state = Arc::new(AppState::from_config(cfg)?);
    let app = router(state, cfg.server.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(&cfg.server.addr)
        .await
        .map_err(|source| PipelineError::Io { path: cfg.server.addr.clone(), source })?;
    axum::serve(listener, app).await.map_err(|source| PipelineError::Io { path: cfg.server.addr.clone(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_level_mapping() {
        let img = Image2D::new(1, 5, vec![-100.0, 0.0, 50.0, 100.0, 300.0]).unwrap();
        assert_eq!(window_level(&img, 50.0, 100.0), vec![0, 0, 128, 255, 255]);
    }
}
