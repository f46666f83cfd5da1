//! Local HTTP service for browsing slides and running inference jobs.
//!
//! Endpoints (JSON unless noted):
//!
//! - `GET  /api/slides`, `GET /api/slides/{id}`: level geometry and resolution
//! - `GET  /api/slides/{id}/tiles/{level}/{x}/{y}`: 256 x 256 PNG tile
//! - `GET  /api/models`
//! - `POST /api/infer` `{slide_id, model_name, region?}` -> `{job_id}`
//! - `GET  /api/jobs/{job_id}` -> `{status, report?, geojson?, error?}`
//!
//! At most one job per slide is queued or running at a time; a second
//! submission gets 409. Inference and tile decoding run on the blocking pool.

mod region;

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use slidespin::engine::{discover_slides, run_loaded, LoadedModel, RunOptions, RunReport};
use slidespin::slide::{open_slide, LevelInfo, SlidePyramid};
use slidespin::zoo::MANIFEST_FILE;

pub use region::{parse_region, RegionError};

pub const TILE_SIZE: u32 = 256;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("slide {id}: {message}")]
    Slide { id: String, message: String },
}

/// A model directory that could not be loaded; reported, not fatal.
#[derive(Debug, Clone, Serialize)]
pub struct SkippedModel {
    pub dir: PathBuf,
    pub reason: String,
}

struct SlideEntry {
    path: PathBuf,
    pyramid: Arc<SlidePyramid>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub job_id: String,
    pub slide_id: String,
    pub model_name: String,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geojson: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Default)]
struct Jobs {
    by_id: HashMap<String, Job>,
    /// slide id -> job id of its queued or running job.
    active: HashMap<String, String>,
}

/// Slides, models and the job registry.
pub struct Service {
    slides: BTreeMap<String, SlideEntry>,
    models: BTreeMap<String, Arc<LoadedModel>>,
    skipped: Vec<SkippedModel>,
    jobs: Mutex<Jobs>,
    next_job: AtomicU64,
    run_options: RunOptions,
}

impl Service {
    /// Opens every slide in `slides_dir` and loads every valid bundle
    /// directory directly under `models_dir` (or `models_dir` itself when
    /// it is a bundle).
    pub fn new(models_dir: &Path, slides_dir: &Path) -> Result<Service, ServiceError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ServiceError::Io { path, source }
        };
        let mut slides = BTreeMap::new();
        for (id, path) in discover_slides(slides_dir).map_err(io_err(slides_dir))? {
            let pyramid = open_slide(&path).map_err(|e| ServiceError::Slide {
                id: id.clone(),
                message: e.to_string(),
            })?;
            slides.insert(
                id,
                SlideEntry {
                    path,
                    pyramid: Arc::new(pyramid),
                },
            );
        }

        let mut candidates = Vec::new();
        if models_dir.join(MANIFEST_FILE).is_file() {
            candidates.push(models_dir.to_path_buf());
        } else {
            for entry in std::fs::read_dir(models_dir).map_err(io_err(models_dir))? {
                let path = entry.map_err(io_err(models_dir))?.path();
                if path.join(MANIFEST_FILE).is_file() {
                    candidates.push(path);
                }
            }
            candidates.sort();
        }
        let mut models = BTreeMap::new();
        let mut skipped = Vec::new();
        for dir in candidates {
            match LoadedModel::load(&dir) {
                Ok(m) if models.contains_key(m.name()) => skipped.push(SkippedModel {
                    reason: format!("duplicate model name {}", m.name()),
                    dir,
                }),
                Ok(m) => {
                    models.insert(m.name().to_string(), Arc::new(m));
                }
                Err(e) => skipped.push(SkippedModel {
                    dir,
                    reason: e.to_string(),
                }),
            }
        }
        Ok(Service {
            slides,
            models,
            skipped,
            jobs: Mutex::new(Jobs::default()),
            next_job: AtomicU64::new(1),
            run_options: RunOptions::default(),
        })
    }

    /// Options applied to every job (batch size, threads, thumbnail size).
    pub fn with_run_options(mut self, options: RunOptions) -> Self {
        self.run_options = options;
        self
    }

    pub fn skipped_models(&self) -> &[SkippedModel] {
        &self.skipped
    }

    pub fn slide_ids(&self) -> impl Iterator<Item = &str> {
        self.slides.keys().map(String::as_str)
    }

    pub fn model_names(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn job(&self, job_id: &str) -> Option<Job> {
        self.jobs.lock().unwrap().by_id.get(job_id).cloned()
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/slides", get(list_slides))
        .route("/api/slides/{id}", get(slide_detail))
        .route("/api/slides/{id}/tiles/{level}/{x}/{y}", get(tile))
        .route("/api/models", get(list_models))
        .route("/api/infer", post(submit))
        .route("/api/jobs/{id}", get(job_status))
        .with_state(service)
}

/// Serves until the process is stopped.
pub async fn serve(service: Service, addr: SocketAddr) -> io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(service))).await
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize)]
struct SlideInfo {
    id: String,
    width: u32,
    height: u32,
    mpp_x: Option<f64>,
    mpp_y: Option<f64>,
    tile_size: u32,
    levels: Vec<LevelInfo>,
}

fn slide_info(id: &str, entry: &SlideEntry) -> SlideInfo {
    let s = &entry.pyramid;
    let (width, height) = s.dimensions();
    SlideInfo {
        id: id.to_string(),
        width,
        height,
        mpp_x: s.mpp_x(),
        mpp_y: s.mpp_y(),
        tile_size: TILE_SIZE,
        levels: s.levels().to_vec(),
    }
}

fn find_slide<'a>(svc: &'a Service, id: &str) -> ApiResult<&'a SlideEntry> {
    svc.slides
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown slide {id}")))
}

async fn list_slides(State(svc): State<Arc<Service>>) -> Json<Vec<SlideInfo>> {
    Json(svc.slides.iter().map(|(id, e)| slide_info(id, e)).collect())
}

async fn slide_detail(State(svc): State<Arc<Service>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SlideInfo>> {
    Ok(Json(slide_info(&id, find_slide(&svc, &id)?)))
}

/// Tile `(x, y)` of the 256-pixel grid of `level`, white beyond the edge.
async fn tile(
    State(svc): State<Arc<Service>>,
    UrlPath((id, level, x, y)): UrlPath<(String, usize, u32, u32)>,
) -> ApiResult<Response> {
    let slide = Arc::clone(&find_slide(&svc, &id)?.pyramid);
    let info = *slide
        .levels()
        .get(level)
        .ok_or_else(|| ApiError::not_found(format!("slide {id} has no level {level}")))?;
    if x >= info.width.div_ceil(TILE_SIZE) || y >= info.height.div_ceil(TILE_SIZE) {
        return Err(ApiError::not_found(format!("tile ({x}, {y}) is outside level {level}")));
    }
    let png = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, String> {
        let x0 = (x as f64 * TILE_SIZE as f64 * info.downsample).round() as u32;
        let y0 = (y as f64 * TILE_SIZE as f64 * info.downsample).round() as u32;
        let patch = slide
            .read_region(level, x0, y0, TILE_SIZE, TILE_SIZE)
            .map_err(|e| e.to_string())?;
        encode_png(&patch.pixels, patch.width, patch.height).map_err(|e| e.to_string())
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

fn encode_png(rgb: &[u8], width: u32, height: u32) -> image::ImageResult<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(rgb, width, height, image::ExtendedColorType::Rgb8)?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ModelInfo {
    model_name: String,
    description: String,
    class_names: Vec<String>,
    encoder_id: String,
    embed_dim: usize,
    patch_size_px: u32,
    spacing_mpp: Option<f64>,
}

async fn list_models(State(svc): State<Arc<Service>>) -> Json<Vec<ModelInfo>> {
    Json(
        svc.models
            .values()
            .map(|m| ModelInfo {
                model_name: m.name().to_string(),
                description: m.manifest.description.clone(),
                class_names: m.manifest.class_names.clone(),
                encoder_id: m.manifest.encoder.encoder_id.clone(),
                embed_dim: m.manifest.encoder.embed_dim,
                patch_size_px: m.manifest.patch.patch_size_px,
                spacing_mpp: m.manifest.patch.spacing_mpp,
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
pub struct InferRequest {
    pub slide_id: String,
    pub model_name: String,
    #[serde(default)]
    pub region: Option<Value>,
}

async fn submit(State(svc): State<Arc<Service>>, Json(req): Json<InferRequest>) -> ApiResult<Response> {
    let slide_path = find_slide(&svc, &req.slide_id)?.path.clone();
    let model = Arc::clone(
        svc.models
            .get(&req.model_name)
            .ok_or_else(|| ApiError::not_found(format!("unknown model {}", req.model_name)))?,
    );
    let region = match &req.region {
        None | Some(Value::Null) => None,
        Some(v) => Some(parse_region(v).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?),
    };

    let job_id = {
        let mut jobs = svc.jobs.lock().unwrap();
        if let Some(active) = jobs.active.get(&req.slide_id) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("job {active} is still running for slide {}", req.slide_id),
            ));
        }
        let job_id = format!("job-{}", svc.next_job.fetch_add(1, Ordering::Relaxed));
        jobs.active.insert(req.slide_id.clone(), job_id.clone());
        jobs.by_id.insert(
            job_id.clone(),
            Job {
                job_id: job_id.clone(),
                slide_id: req.slide_id.clone(),
                model_name: req.model_name.clone(),
                status: JobStatus::Queued,
                report: None,
                geojson: None,
                error: None,
            },
        );
        job_id
    };

    let options = RunOptions {
        region,
        ..svc.run_options.clone()
    };
    let (svc2, id2, slide_id) = (Arc::clone(&svc), job_id.clone(), req.slide_id.clone());
    tokio::task::spawn_blocking(move || {
        set_status(&svc2, &id2, JobStatus::Running);
        let outcome = run_loaded(&slide_path, &model, &options);
        let mut jobs = svc2.jobs.lock().unwrap();
        if let Some(job) = jobs.by_id.get_mut(&id2) {
            match outcome {
                Ok(out) => {
                    job.geojson = Some(out.geojson());
                    job.report = Some(out.report);
                    job.status = JobStatus::Done;
                }
                Err(e) => {
                    job.error = Some(e.to_string());
                    job.status = JobStatus::Error;
                }
            }
        }
        jobs.active.remove(&slide_id);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({"job_id": job_id}))).into_response())
}

fn set_status(svc: &Service, job_id: &str, status: JobStatus) {
    if let Some(job) = svc.jobs.lock().unwrap().by_id.get_mut(job_id) {
        job.status = status;
    }
}

async fn job_status(State(svc): State<Arc<Service>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Job>> {
    svc.job(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))
}
