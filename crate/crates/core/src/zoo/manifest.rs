//! `manifest.json` parsing and validation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ZooError;
use crate::encoder::{EncoderSpec, DEFAULT_NORM_MEAN, DEFAULT_NORM_STD};
use crate::patching::{PatchSpec, DEFAULT_TISSUE_THRESHOLD, MIN_PATCH_SIZE};

pub const SCHEMA_VERSION: u32 = 1;
pub const AGGREGATOR_ROLE: &str = "aggregator";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleFile {
    pub path: String,
    pub sha256: String,
}

/// A validated model manifest with defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub schema_version: u32,
    pub model_name: String,
    pub description: String,
    pub encoder: EncoderSpec,
    pub patch: PatchSpec,
    pub class_names: Vec<String>,
    pub files: BTreeMap<String, BundleFile>,
}

impl ModelManifest {
    pub fn aggregator_file(&self) -> &BundleFile {
        &self.files[AGGREGATOR_ROLE]
    }

    /// Serializes to the on-disk layout.
    pub fn to_json(&self) -> String {
        let raw = serde_json::json!({
            "schema_version": self.schema_version,
            "model_name": self.model_name,
            "description": self.description,
            "encoder": {
                "encoder_id": self.encoder.encoder_id,
                "embed_dim": self.encoder.embed_dim,
                "input_size": self.encoder.input_size,
                "norm_mean": shortest(self.encoder.norm_mean),
                "norm_std": shortest(self.encoder.norm_std),
            },
            "patch": {
                "patch_size_px": self.patch.patch_size_px,
                "spacing_mpp": self.patch.spacing_mpp,
                "tissue_threshold": self.patch.tissue_threshold,
                "stride_px": self.patch.stride_px,
            },
            "class_names": self.class_names,
            "files": self.files,
        });
        serde_json::to_string_pretty(&raw).expect("manifest serializes")
    }
}

/// f32 values as the shortest decimals that read back to the same f32,
/// so 0.485 is written as 0.485 rather than its widened f64 expansion.
fn shortest(v: [f32; 3]) -> [f64; 3] {
    v.map(|x| x.to_string().parse().expect("f32 display parses"))
}

#[derive(Deserialize)]
struct RawManifest {
    schema_version: Option<u32>,
    model_name: Option<String>,
    description: Option<String>,
    encoder: Option<RawEncoder>,
    patch: Option<RawPatch>,
    class_names: Option<Vec<String>>,
    files: Option<BTreeMap<String, RawFile>>,
}

#[derive(Deserialize)]
struct RawEncoder {
    encoder_id: Option<String>,
    embed_dim: Option<usize>,
    input_size: Option<u32>,
    norm_mean: Option<[f32; 3]>,
    norm_std: Option<[f32; 3]>,
}

#[derive(Deserialize)]
struct RawPatch {
    patch_size_px: Option<u32>,
    spacing_mpp: Option<f64>,
    tissue_threshold: Option<f64>,
    stride_px: Option<u32>,
}

#[derive(Deserialize)]
struct RawFile {
    path: Option<String>,
    sha256: Option<String>,
}

fn missing(name: &str, problems: &mut Vec<String>) {
    problems.push(format!("{name}: missing"));
}

pub fn is_canonical_sha256(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Relative, forward-slash path with no `..`, `.` or empty components.
fn is_safe_relative(path: &str) -> bool {
    !path.is_empty()
        && !path.starts_with('/')
        && !path.contains('\\')
        && path.split('/').all(|c| !c.is_empty() && c != "." && c != "..")
}

/// Parses manifest text. Every field problem is reported at once in
/// [`ZooError::Field`].
pub fn parse_manifest(text: &str) -> Result<ModelManifest, ZooError> {
    let raw: RawManifest = serde_json::from_str(text).map_err(|e| ZooError::Parse(e.to_string()))?;
    match raw.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(v) => return Err(ZooError::Schema(v.to_string())),
        None => return Err(ZooError::Schema("missing schema_version".into())),
    }
    let mut problems: Vec<String> = Vec::new();

    let model_name = raw.model_name.unwrap_or_default();
    if model_name.trim().is_empty() {
        missing("model_name", &mut problems);
    }

    let patch = match raw.patch {
        None => {
            missing("patch", &mut problems);
            None
        }
        Some(p) => {
            let size = p.patch_size_px.unwrap_or(0);
            if p.patch_size_px.is_none() {
                missing("patch.patch_size_px", &mut problems);
            } else if size < MIN_PATCH_SIZE {
                problems.push(format!("patch.patch_size_px: must be >= {MIN_PATCH_SIZE}, got {size}"));
            }
            let threshold = p.tissue_threshold.unwrap_or(DEFAULT_TISSUE_THRESHOLD);
            if !(0.0..=1.0).contains(&threshold) {
                problems.push(format!("patch.tissue_threshold: must be in [0, 1], got {threshold}"));
            }
            if let Some(s) = p.spacing_mpp {
                if !(s.is_finite() && s > 0.0) {
                    problems.push(format!("patch.spacing_mpp: must be positive, got {s}"));
                }
            }
            if p.stride_px == Some(0) {
                problems.push("patch.stride_px: must be >= 1".into());
            }
            Some(PatchSpec {
                patch_size_px: size,
                spacing_mpp: p.spacing_mpp,
                tissue_threshold: threshold,
                stride_px: p.stride_px,
            })
        }
    };

    let encoder = match raw.encoder {
        None => {
            missing("encoder", &mut problems);
            None
        }
        Some(e) => {
            let id = e.encoder_id.unwrap_or_default();
            if id.is_empty() {
                missing("encoder.encoder_id", &mut problems);
            }
            let dim = e.embed_dim.unwrap_or(0);
            if e.embed_dim.is_none() {
                missing("encoder.embed_dim", &mut problems);
            } else if dim == 0 {
                problems.push("encoder.embed_dim: must be >= 1".into());
            }
            let patch_size = patch.as_ref().map(|p| p.patch_size_px).unwrap_or(0);
            let input_size = e.input_size.unwrap_or(patch_size);
            if patch.is_some() && input_size != patch_size {
                problems.push(format!(
                    "encoder.input_size: {input_size} differs from patch.patch_size_px {patch_size}"
                ));
            }
            let norm_std = e.norm_std.unwrap_or(DEFAULT_NORM_STD);
            if norm_std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                problems.push(format!("encoder.norm_std: components must be > 0, got {norm_std:?}"));
            }
            Some(EncoderSpec {
                encoder_id: id,
                embed_dim: dim,
                input_size,
                norm_mean: e.norm_mean.unwrap_or(DEFAULT_NORM_MEAN),
                norm_std,
            })
        }
    };

    let class_names = raw.class_names.unwrap_or_default();
    if class_names.is_empty() {
        missing("class_names", &mut problems);
    } else if class_names.len() < 2 {
        problems.push("class_names: at least 2 classes required".into());
    } else if class_names.iter().any(|c| c.is_empty()) {
        problems.push("class_names: empty class name".into());
    }

    let mut files = BTreeMap::new();
    match raw.files {
        None => missing("files", &mut problems),
        Some(raw_files) => {
            if !raw_files.contains_key(AGGREGATOR_ROLE) {
                missing("files.aggregator", &mut problems);
            }
            for (role, f) in raw_files {
                let path = f.path.unwrap_or_default();
                let sha = f.sha256.unwrap_or_default();
                if !is_safe_relative(&path) {
                    problems.push(format!(
                        "files.{role}.path: must be a relative path inside the bundle, got {path:?}"
                    ));
                }
                if !is_canonical_sha256(&sha) {
                    problems.push(format!(
                        "files.{role}.sha256: must be 64 lowercase hex characters, got {sha:?}"
                    ));
                }
                files.insert(role, BundleFile { path, sha256: sha });
            }
        }
    }

    if !problems.is_empty() {
        return Err(ZooError::Field(problems));
    }
    Ok(ModelManifest {
        schema_version: SCHEMA_VERSION,
        model_name,
        description: raw.description.unwrap_or_default(),
        encoder: encoder.expect("checked above"),
        patch: patch.expect("checked above"),
        class_names,
        files,
    })
}
