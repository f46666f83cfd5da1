//! Patch encoders: pixels in, fixed-dimension embeddings out.
//!
//! Two backends exist. `reference-v1` is a weight-free, fully deterministic
//! encoder (band means of the grayscale patch) that lets bundles be
//! self-contained. `onnx:<file>` runs an ONNX model from the bundle
//! directory on normalized NCHW float input.

#[cfg(feature = "onnx")]
mod onnx;
mod reference;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::patching::{load_patch, PatchError, PatchPlan};
use crate::slide::{RasterPatch, SlidePyramid};

pub use reference::reference_encode;

pub const REFERENCE_ENCODER_ID: &str = "reference-v1";
pub const DEFAULT_NORM_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const DEFAULT_NORM_STD: [f32; 3] = [0.229, 0.224, 0.225];
pub const DEFAULT_BATCH_SIZE: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("unknown encoder {0}")]
    UnknownEncoder(String),
    #[error("encoder shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("patch is {got}x{got_h}, encoder expects {want}x{want}")]
    SizeMismatch { got: u32, got_h: u32, want: u32 },
    #[error("invalid encoder spec: {0}")]
    InvalidSpec(String),
    #[error("batch size must be >= 1")]
    InvalidBatchSize,
    #[error("non-finite embedding value for patch {index}")]
    NonFinite { index: usize },
    #[error("encoding patch {index}: {message}")]
    Backend { index: usize, message: String },
    #[error(transparent)]
    Patch(#[from] PatchError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub encoder_id: String,
    pub embed_dim: usize,
    pub input_size: u32,
    pub norm_mean: [f32; 3],
    pub norm_std: [f32; 3],
}

impl EncoderSpec {
    pub fn reference(embed_dim: usize, input_size: u32) -> Self {
        EncoderSpec {
            encoder_id: REFERENCE_ENCODER_ID.to_string(),
            embed_dim,
            input_size,
            norm_mean: DEFAULT_NORM_MEAN,
            norm_std: DEFAULT_NORM_STD,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.embed_dim == 0 {
            return Err(EncoderError::InvalidSpec("embed_dim must be >= 1".into()));
        }
        if self.input_size == 0 {
            return Err(EncoderError::InvalidSpec("input_size must be >= 1".into()));
        }
        if self.norm_std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(EncoderError::InvalidSpec(format!(
                "norm_std components must be > 0, got {:?}",
                self.norm_std
            )));
        }
        if self.norm_mean.iter().any(|m| !m.is_finite()) {
            return Err(EncoderError::InvalidSpec("norm_mean must be finite".into()));
        }
        Ok(())
    }
}

/// A loaded encoder backend. Implementations are immutable after load.
pub trait PatchEncoder: Send + Sync {
    fn embed_dim(&self) -> usize;

    /// Encodes a batch of `input_size` square patches into one row each.
    /// `first_index` is the plan index of `patches[0]`, used in errors.
    fn encode(&self, patches: &[RasterPatch], first_index: usize) -> Result<Vec<Vec<f32>>, EncoderError>;
}

/// Handle returned by [`load_encoder`].
pub struct Encoder {
    spec: EncoderSpec,
    backend: Box<dyn PatchEncoder>,
}

impl std::fmt::Debug for Encoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encoder")
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

impl Encoder {
    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn embed_dim(&self) -> usize {
        self.backend.embed_dim()
    }

    pub fn encode(&self, patches: &[RasterPatch], first_index: usize) -> Result<Vec<Vec<f32>>, EncoderError> {
        for p in patches {
            check_size(p, self.spec.input_size)?;
        }
        self.backend.encode(patches, first_index)
    }
}

/// Resolves `spec.encoder_id` to a backend. ONNX files are looked up
/// relative to `bundle_dir`.
pub fn load_encoder(spec: &EncoderSpec, bundle_dir: &Path) -> Result<Encoder, EncoderError> {
    spec.validate()?;
    let backend: Box<dyn PatchEncoder> = if spec.encoder_id == REFERENCE_ENCODER_ID {
        Box::new(reference::ReferenceEncoder::new(spec.embed_dim))
    } else if let Some(file) = spec.encoder_id.strip_prefix("onnx:") {
        let path: PathBuf = bundle_dir.join(file);
        if !path.is_file() {
            return Err(EncoderError::UnknownEncoder(format!(
                "{}: model file {} not found",
                spec.encoder_id,
                path.display()
            )));
        }
        load_onnx(spec, &path)?
    } else {
        return Err(EncoderError::UnknownEncoder(spec.encoder_id.clone()));
    };
    Ok(Encoder {
        spec: spec.clone(),
        backend,
    })
}

#[cfg(feature = "onnx")]
fn load_onnx(spec: &EncoderSpec, path: &Path) -> Result<Box<dyn PatchEncoder>, EncoderError> {
    Ok(Box::new(onnx::OnnxEncoder::load(spec, path)?))
}

#[cfg(not(feature = "onnx"))]
fn load_onnx(spec: &EncoderSpec, _path: &Path) -> Result<Box<dyn PatchEncoder>, EncoderError> {
    Err(EncoderError::UnknownEncoder(format!(
        "{}: built without the `onnx` feature",
        spec.encoder_id
    )))
}

fn check_size(patch: &RasterPatch, size: u32) -> Result<(), EncoderError> {
    if patch.width != size || patch.height != size {
        return Err(EncoderError::SizeMismatch {
            got: patch.width,
            got_h: patch.height,
            want: size,
        });
    }
    Ok(())
}

/// Channel-first float tensor: `(pixel / 255 - mean[c]) / std[c]`.
pub fn normalize(patch: &RasterPatch, spec: &EncoderSpec) -> Result<Vec<f32>, EncoderError> {
    check_size(patch, spec.input_size)?;
    let plane = patch.width as usize * patch.height as usize;
    let mut out = vec![0f32; 3 * plane];
    normalize_into(patch, spec, &mut out);
    Ok(out)
}

pub(crate) fn normalize_into(patch: &RasterPatch, spec: &EncoderSpec, out: &mut [f32]) {
    let plane = patch.width as usize * patch.height as usize;
    for (i, px) in patch.pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = (px[c] as f32 / 255.0 - spec.norm_mean[c]) / spec.norm_std[c];
        }
    }
}

/// `N x D` embeddings, row `i` belonging to plan patch `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub n_patches: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn empty(dim: usize) -> Self {
        EmbeddingMatrix {
            n_patches: 0,
            dim,
            values: Vec::new(),
        }
    }

    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.len(), dim, "row length does not match dim");
            values.extend_from_slice(r);
        }
        EmbeddingMatrix {
            n_patches: rows.len(),
            dim,
            values,
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim.max(1)).take(self.n_patches)
    }

    /// Reorders rows so that new row `k` is old row `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let rows: Vec<Vec<f32>> = order.iter().map(|&i| self.row(i).to_vec()).collect();
        Self::from_rows(self.dim, &rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedOptions {
    pub batch_size: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            batch_size: DEFAULT_BATCH_SIZE,
            threads: None,
        }
    }
}

/// Embeds every planned patch. Patches are loaded lazily per batch and
/// batches may run in parallel, but rows always come back in plan order.
pub fn embed_batch(
    encoder: &Encoder,
    plan: &PatchPlan,
    slide: &SlidePyramid,
    options: EmbedOptions,
) -> Result<EmbeddingMatrix, EncoderError> {
    if options.batch_size == 0 {
        return Err(EncoderError::InvalidBatchSize);
    }
    let dim = encoder.embed_dim();
    if plan.is_empty() {
        return Ok(EmbeddingMatrix::empty(dim));
    }
    let starts: Vec<usize> = (0..plan.len()).step_by(options.batch_size).collect();
    let run_batch = |&start: &usize| -> Result<Vec<Vec<f32>>, EncoderError> {
        let end = (start + options.batch_size).min(plan.len());
        let patches = (start..end)
            .map(|i| load_patch(slide, plan, i))
            .collect::<Result<Vec<_>, _>>()?;
        let rows = encoder.encode(&patches, start)?;
        if rows.len() != patches.len() {
            return Err(EncoderError::ShapeMismatch(format!(
                "encoder returned {} rows for {} patches",
                rows.len(),
                patches.len()
            )));
        }
        for (k, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(EncoderError::ShapeMismatch(format!(
                    "row {} has {} values, expected {dim}",
                    start + k,
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EncoderError::NonFinite { index: start + k });
            }
        }
        Ok(rows)
    };
    let batches: Vec<Vec<Vec<f32>>> = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| EncoderError::Backend {
                index: 0,
                message: format!("thread pool: {e}"),
            })?
            .install(|| starts.par_iter().map(run_batch).collect::<Result<_, _>>())?,
        None => starts.par_iter().map(run_batch).collect::<Result<_, _>>()?,
    };
    let mut values = Vec::with_capacity(plan.len() * dim);
    for row in batches.into_iter().flatten() {
        values.extend_from_slice(&row);
    }
    Ok(EmbeddingMatrix {
        n_patches: plan.len(),
        dim,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let spec = EncoderSpec {
            norm_mean: [0.5; 3],
            norm_std: [0.5; 3],
            ..EncoderSpec::reference(4, 32)
        };
        let white = normalize(&RasterPatch::filled(32, 32, [255; 3]), &spec).unwrap();
        assert!(white.iter().all(|&v| v == 1.0));
        let black = normalize(&RasterPatch::filled(32, 32, [0; 3]), &spec).unwrap();
        assert!(black.iter().all(|&v| v == -1.0));
        let spec = EncoderSpec {
            norm_std: [0.25; 3],
            ..spec
        };
        let mid = normalize(&RasterPatch::filled(32, 32, [128; 3]), &spec).unwrap();
        assert!(mid.iter().all(|&v| (v - 0.007843).abs() < 1e-5), "{}", mid[0]);
    }

    #[test]
    fn normalize_is_channel_first() {
        let spec = EncoderSpec {
            norm_mean: [0.0; 3],
            norm_std: [1.0; 3],
            ..EncoderSpec::reference(4, 32)
        };
        let t = normalize(&RasterPatch::filled(32, 32, [255, 0, 51]), &spec).unwrap();
        let plane = 32 * 32;
        assert_eq!(t.len(), 3 * plane);
        assert!(t[..plane].iter().all(|&v| v == 1.0));
        assert!(t[plane..2 * plane].iter().all(|&v| v == 0.0));
        assert!(t[2 * plane..].iter().all(|&v| (v - 0.2).abs() < 1e-7));
    }

    #[test]
    fn normalize_rejects_wrong_size() {
        let spec = EncoderSpec::reference(4, 32);
        assert!(matches!(
            normalize(&RasterPatch::filled(16, 32, [0; 3]), &spec),
            Err(EncoderError::SizeMismatch { .. })
        ));
    }

    #[test]
    fn reference_needs_no_files() {
        let enc = load_encoder(&EncoderSpec::reference(16, 64), Path::new("/nonexistent")).unwrap();
        assert_eq!(enc.embed_dim(), 16);
    }

    #[test]
    fn unknown_and_missing_encoders() {
        let mut spec = EncoderSpec::reference(8, 64);
        spec.encoder_id = "uni-v9".into();
        assert!(matches!(
            load_encoder(&spec, Path::new(".")),
            Err(EncoderError::UnknownEncoder(_))
        ));
        spec.encoder_id = "onnx:missing.onnx".into();
        let dir = tempfile::tempdir().unwrap();
        match load_encoder(&spec, dir.path()) {
            Err(EncoderError::UnknownEncoder(msg)) => {
                assert!(
                    msg.contains(&dir.path().join("missing.onnx").display().to_string()),
                    "{msg}"
                )
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_norm_std_rejected() {
        let mut spec = EncoderSpec::reference(8, 64);
        spec.norm_std = [0.2, 0.0, 0.2];
        assert!(matches!(spec.validate(), Err(EncoderError::InvalidSpec(_))));
    }
}
