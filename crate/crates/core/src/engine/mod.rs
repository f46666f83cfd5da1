//! End-to-end specimen-level inference.
//!
//! `resolve bundle -> open slide -> detect tissue -> plan patches -> embed -> aggregate`,
//! with each stage timed on a monotonic clock.

mod geojson;
mod metrics;

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::aggregator::{forward, AggregatorError, AggregatorWeights, InferenceResult};
use crate::encoder::{
    embed_batch, load_encoder, EmbedOptions, Encoder, EncoderError, EncoderSpec, DEFAULT_BATCH_SIZE,
    REFERENCE_ENCODER_ID,
};
use crate::geometry::Polygon;
use crate::patching::{empty_plan, plan_patches, PatchError, PatchGeometry, PatchPlan, PatchSpec};
use crate::slide::{open_slide, SlideError, SlidePyramid};
use crate::tissue::{detect_tissue, TissueError, TissueMask, DEFAULT_THUMBNAIL_MAX_DIM};
use crate::zoo::{resolve_model, verify_bundle, ModelManifest, ModelRef, ZooError};

pub use geojson::{export_geojson, GeoJsonError};
pub use metrics::{compute_metrics, Metrics, MetricsError};

/// Predicted class reported when no patch passes the tissue filter.
pub const INDETERMINATE: &str = "indeterminate";
pub const NO_TISSUE_WARNING: &str = "no tissue: no patch passed the tissue filter";

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("resolve: {0}")]
    Resolve(#[from] ZooError),
    #[error("open: {0}")]
    Open(#[source] SlideError),
    #[error("tissue: {0}")]
    Tissue(#[source] TissueError),
    #[error("plan: {0}")]
    Plan(#[source] PatchError),
    #[error("embed: {0}")]
    Embed(#[source] EncoderError),
    #[error("aggregate: {0}")]
    Aggregate(#[source] AggregatorError),
    #[error("invalid options: {0}")]
    Options(String),
}

impl EngineError {
    pub fn stage(&self) -> &'static str {
        match self {
            EngineError::Resolve(_) => "resolve",
            EngineError::Open(_) => "open",
            EngineError::Tissue(_) => "tissue",
            EngineError::Plan(_) => "plan",
            EngineError::Embed(_) => "embed",
            EngineError::Aggregate(_) => "aggregate",
            EngineError::Options(_) => "options",
        }
    }

    /// True when the failure is caused by what the user passed in (missing
    /// or malformed slide, bundle or option) rather than by the pipeline.
    pub fn is_input_error(&self) -> bool {
        match self {
            EngineError::Resolve(ZooError::Fetch { .. }) => false,
            EngineError::Resolve(ZooError::Io { .. }) => false,
            EngineError::Resolve(_) => true,
            EngineError::Open(SlideError::ReadFailure(_)) => false,
            EngineError::Open(_) => true,
            EngineError::Plan(PatchError::BadSpacing { .. } | PatchError::InvalidSpec(_)) => true,
            EngineError::Embed(EncoderError::UnknownEncoder(_) | EncoderError::ShapeMismatch(_)) => true,
            EngineError::Options(_) => true,
            _ => false,
        }
    }
}

/// Per-stage wall time in milliseconds (fractional, monotonic clock).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageDurations {
    pub resolve: f64,
    pub open: f64,
    pub tissue: f64,
    pub plan: f64,
    pub embed: f64,
    pub aggregate: f64,
    pub total: f64,
}

impl StageDurations {
    pub fn stages(&self) -> [(&'static str, f64); 6] {
        [
            ("resolve", self.resolve),
            ("open", self.open),
            ("tissue", self.tissue),
            ("plan", self.plan),
            ("embed", self.embed),
            ("aggregate", self.aggregate),
        ]
    }

    pub fn stage_sum(&self) -> f64 {
        self.stages().iter().map(|(_, d)| d).sum()
    }

    pub fn stage_max(&self) -> f64 {
        self.stages().iter().map(|(_, d)| *d).fold(0.0, f64::max)
    }
}

/// Resolved parameters a run used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParameters {
    pub patch: PatchSpec,
    pub encoder: EncoderSpec,
    pub geometry: PatchGeometry,
    pub batch_size: usize,
    pub threads: Option<usize>,
    pub thumbnail_max_dim: u32,
    pub otsu_threshold: u8,
    pub region_restricted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub slide_path: String,
    pub model_name: String,
    pub predicted_class: String,
    pub result: InferenceResult,
    pub n_patches: usize,
    pub durations_ms: StageDurations,
    pub parameters: RunParameters,
    pub warnings: Vec<String>,
    /// Wall-clock start of the run, milliseconds since the Unix epoch.
    pub timestamp_unix_ms: u64,
}

/// Optional overrides of the bundle's patch settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchOverrides {
    pub patch_size_px: Option<u32>,
    pub tissue_threshold: Option<f64>,
    pub spacing_mpp: Option<f64>,
    pub stride_px: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub overrides: PatchOverrides,
    pub batch_size: usize,
    pub threads: Option<usize>,
    pub thumbnail_max_dim: u32,
    /// Restrict inference to patches whose center lies inside this polygon.
    pub region: Option<Polygon>,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            overrides: PatchOverrides::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            threads: None,
            thumbnail_max_dim: DEFAULT_THUMBNAIL_MAX_DIM,
            region: None,
            cache_dir: None,
        }
    }
}

/// Everything a run produced, including intermediates useful for export.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub plan: PatchPlan,
    pub mask: TissueMask,
}

impl RunOutcome {
    pub fn geojson(&self) -> serde_json::Value {
        export_geojson(&self.plan, &self.report.result, &self.report).expect("plan and attention agree")
    }
}

/// A verified bundle with its aggregator loaded. The encoder is loaded on
/// first use and then shared.
pub struct LoadedModel {
    pub dir: PathBuf,
    pub manifest: ModelManifest,
    pub weights: AggregatorWeights,
    encoder: OnceLock<Result<Encoder, String>>,
}

impl std::fmt::Debug for LoadedModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadedModel")
            .field("dir", &self.dir)
            .field("model_name", &self.manifest.model_name)
            .finish_non_exhaustive()
    }
}

impl LoadedModel {
    pub fn load(bundle_dir: &Path) -> Result<Self, ZooError> {
        let v = verify_bundle(bundle_dir)?;
        Ok(LoadedModel {
            dir: v.dir,
            manifest: v.manifest,
            weights: v.weights,
            encoder: OnceLock::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.manifest.model_name
    }

    /// The bundle's encoder, loaded once.
    pub fn encoder(&self) -> Result<&Encoder, EngineError> {
        self.encoder
            .get_or_init(|| load_encoder(&self.manifest.encoder, &self.dir).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|msg| EngineError::Embed(EncoderError::UnknownEncoder(msg.clone())))
    }

    fn effective_specs(&self, overrides: &PatchOverrides) -> Result<(PatchSpec, EncoderSpec), EngineError> {
        let mut patch = self.manifest.patch.clone();
        let mut encoder = self.manifest.encoder.clone();
        if let Some(t) = overrides.tissue_threshold {
            patch.tissue_threshold = t;
        }
        if let Some(s) = overrides.spacing_mpp {
            patch.spacing_mpp = Some(s);
        }
        if let Some(s) = overrides.stride_px {
            patch.stride_px = Some(s);
        }
        if let Some(size) = overrides.patch_size_px {
            if size != encoder.input_size && encoder.encoder_id != REFERENCE_ENCODER_ID {
                return Err(EngineError::Options(format!(
                    "patch size {size} conflicts with encoder {} input size {}",
                    encoder.encoder_id, encoder.input_size
                )));
            }
            patch.patch_size_px = size;
            encoder.input_size = size;
        }
        patch.validate().map_err(EngineError::Plan)?;
        Ok((patch, encoder))
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Resolves the bundle, then runs the full pipeline on `wsi`.
pub fn run_inference(wsi: &Path, model: &ModelRef, options: &RunOptions) -> Result<RunOutcome, EngineError> {
    let start = Instant::now();
    let cache = options.cache_dir.clone().unwrap_or_else(crate::zoo::default_cache_dir);
    let dir = resolve_model(model, &cache)?;
    let loaded = LoadedModel::load(&dir)?;
    let resolve_ms = ms_since(start);
    run_with_model(wsi, &loaded, options, start, resolve_ms)
}

/// Runs the pipeline with an already loaded bundle.
pub fn run_loaded(wsi: &Path, model: &LoadedModel, options: &RunOptions) -> Result<RunOutcome, EngineError> {
    run_with_model(wsi, model, options, Instant::now(), 0.0)
}

fn run_with_model(
    wsi: &Path,
    model: &LoadedModel,
    options: &RunOptions,
    start: Instant,
    resolve_ms: f64,
) -> Result<RunOutcome, EngineError> {
    let timestamp_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    if options.batch_size == 0 {
        return Err(EngineError::Options("batch size must be >= 1".into()));
    }
    if options.threads == Some(0) {
        return Err(EngineError::Options("thread count must be >= 1".into()));
    }
    let (patch_spec, encoder_spec) = model.effective_specs(&options.overrides)?;
    let mut durations = StageDurations {
        resolve: resolve_ms,
        ..Default::default()
    };

    let t = Instant::now();
    let slide: SlidePyramid = open_slide(wsi).map_err(EngineError::Open)?;
    durations.open = ms_since(t);

    let t = Instant::now();
    let mask = detect_tissue(&slide, options.thumbnail_max_dim).map_err(EngineError::Tissue)?;
    durations.tissue = ms_since(t);

    let t = Instant::now();
    let plan = match plan_patches(&slide, &mask, &patch_spec) {
        Ok(p) => p,
        Err(PatchError::EmptyPlan) => empty_plan(&slide, &patch_spec).map_err(EngineError::Plan)?,
        Err(e) => return Err(EngineError::Plan(e)),
    };
    let plan = match &options.region {
        Some(region) => plan.restrict_to(region),
        None => plan,
    };
    durations.plan = ms_since(t);

    let parameters = RunParameters {
        patch: patch_spec.clone(),
        encoder: encoder_spec.clone(),
        geometry: plan.geometry,
        batch_size: options.batch_size,
        threads: options.threads,
        thumbnail_max_dim: options.thumbnail_max_dim,
        otsu_threshold: mask.threshold_used,
        region_restricted: options.region.is_some(),
    };

    let mut warnings = Vec::new();
    let result = if plan.is_empty() {
        warnings.push(NO_TISSUE_WARNING.to_string());
        InferenceResult::indeterminate(&model.weights.class_names)
    } else {
        let t = Instant::now();
        let overridden;
        let encoder = if encoder_spec == model.manifest.encoder {
            model.encoder()?
        } else {
            // Patch-size override on the reference encoder.
            overridden = load_encoder(&encoder_spec, &model.dir).map_err(EngineError::Embed)?;
            &overridden
        };
        let embeddings = embed_batch(
            encoder,
            &plan,
            &slide,
            EmbedOptions {
                batch_size: options.batch_size,
                threads: options.threads,
            },
        )
        .map_err(EngineError::Embed)?;
        durations.embed = ms_since(t);

        let t = Instant::now();
        let r = forward(&model.weights, &embeddings).map_err(EngineError::Aggregate)?;
        durations.aggregate = ms_since(t);
        r
    };
    durations.total = ms_since(start);

    let predicted_class = result.predicted_class().unwrap_or(INDETERMINATE).to_string();
    let report = RunReport {
        slide_path: wsi.display().to_string(),
        model_name: model.manifest.model_name.clone(),
        predicted_class,
        n_patches: plan.len(),
        result,
        durations_ms: durations,
        parameters,
        warnings,
        timestamp_unix_ms,
    };
    Ok(RunOutcome { report, plan, mask })
}

/// Slides in a directory: tiled TIFF files and directory pyramids, sorted by id.
/// The id is the file stem or directory name.
pub fn discover_slides(dir: &Path) -> std::io::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if name.starts_with('.') {
            continue;
        }
        if path.is_dir() {
            if path.join("pyramid.json").is_file() {
                out.push((name.to_string(), path));
            }
        } else {
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.to_ascii_lowercase());
            if matches!(ext.as_deref(), Some("tif" | "tiff" | "svs")) {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(name).to_string();
                out.push((stem, path));
            }
        }
    }
    out.sort();
    Ok(out)
}
