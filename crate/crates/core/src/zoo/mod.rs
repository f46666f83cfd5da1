//! Self-contained model bundles: validation, resolution, download and cache.
//!
//! A bundle is a directory holding `manifest.json`, `aggregator.json` and
//! optionally `encoder.onnx` and a README. Remote bundles are plain HTTP(S)
//! directories; every file is fetched from `<base>/<path>` and checked
//! against the manifest's sha256 before the cached copy is marked complete.

mod fetch;
pub mod manifest;

use std::fmt;
use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::aggregator::{load_aggregator_str, AggregatorError, AggregatorWeights};

pub use fetch::{cache_key, canonical_url, COMPLETE_MARKER};
pub use manifest::{parse_manifest, BundleFile, ModelManifest, AGGREGATOR_ROLE, SCHEMA_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CACHE_ENV: &str = "SLIDESPIN_CACHE";

#[derive(Debug, thiserror::Error)]
pub enum ZooError {
    #[error("cannot parse manifest: {0}")]
    Parse(String),
    #[error("unsupported manifest schema_version {0}")]
    Schema(String),
    #[error("invalid manifest fields: {}", .0.join("; "))]
    Field(Vec<String>),
    #[error("fetching {url}: {message}")]
    Fetch { url: String, message: String },
    #[error("checksum mismatch for {file}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("incomplete bundle: {0}")]
    IncompleteBundle(String),
    #[error("bundle cross-check failed: {0}")]
    CrossCheck(String),
    #[error("aggregator weights: {0}")]
    Aggregator(#[from] AggregatorError),
    #[error("invalid model reference: {0}")]
    InvalidRef(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("bundle has {} problems: {}", .0.len(), .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<ZooError>),
}

impl ZooError {
    pub(crate) fn io(context: impl fmt::Display, source: io::Error) -> Self {
        ZooError::Io {
            context: context.to_string(),
            source,
        }
    }

    /// Every individual problem, flattening [`ZooError::Invalid`].
    pub fn problems(&self) -> Vec<&ZooError> {
        match self {
            ZooError::Invalid(v) => v.iter().collect(),
            other => vec![other],
        }
    }
}

/// Where a bundle lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelRef {
    Local(PathBuf),
    /// Base URL of a bundle directory.
    Remote(String),
}

impl FromStr for ModelRef {
    type Err = ZooError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(ZooError::InvalidRef("empty reference".into()));
        }
        let lower = s.to_ascii_lowercase();
        if lower.starts_with("https://") || lower.starts_with("http://") {
            let rest = &s[s.find("://").unwrap() + 3..];
            if rest.trim_matches('/').is_empty() {
                return Err(ZooError::InvalidRef(format!("{s}: missing host")));
            }
            Ok(ModelRef::Remote(s.to_string()))
        } else if lower.contains("://") {
            Err(ZooError::InvalidRef(format!("{s}: only http(s) URLs are supported")))
        } else {
            Ok(ModelRef::Local(PathBuf::from(s)))
        }
    }
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelRef::Local(p) => write!(f, "{}", p.display()),
            ModelRef::Remote(u) => f.write_str(u),
        }
    }
}

/// `$SLIDESPIN_CACHE`, else `$XDG_CACHE_HOME/slidespin`, else `~/.cache/slidespin`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    if let Some(xdg) = std::env::var_os("XDG_CACHE_HOME") {
        return PathBuf::from(xdg).join("slidespin");
    }
    match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(".cache").join("slidespin"),
        None => std::env::temp_dir().join("slidespin-cache"),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// A bundle that passed every check.
#[derive(Debug, Clone)]
pub struct VerifiedBundle {
    pub dir: PathBuf,
    pub manifest: ModelManifest,
    pub weights: AggregatorWeights,
}

/// Parses the manifest, checks every listed file's presence and checksum,
/// loads the aggregator and cross-checks it against the manifest.
///
/// A single problem is returned as its own error; several are wrapped in
/// [`ZooError::Invalid`].
pub fn verify_bundle(dir: &Path) -> Result<VerifiedBundle, ZooError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = match std::fs::read_to_string(&manifest_path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(ZooError::IncompleteBundle(format!(
                "{} has no {MANIFEST_FILE}",
                dir.display()
            )));
        }
        Err(e) => return Err(ZooError::io(manifest_path.display(), e)),
    };
    let manifest = parse_manifest(&text)?;

    let mut problems = Vec::new();
    for (role, file) in &manifest.files {
        let path = dir.join(&file.path);
        match sha256_file(&path) {
            Ok(actual) if actual == file.sha256 => {}
            Ok(actual) => problems.push(ZooError::ChecksumMismatch {
                file: file.path.clone(),
                expected: file.sha256.clone(),
                actual,
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                problems.push(ZooError::IncompleteBundle(format!("missing {role} file {}", file.path)))
            }
            Err(e) => problems.push(ZooError::io(path.display(), e)),
        }
    }

    let mut weights = None;
    if problems.is_empty() {
        let agg_path = dir.join(&manifest.aggregator_file().path);
        match std::fs::read_to_string(&agg_path) {
            Err(e) => problems.push(ZooError::io(agg_path.display(), e)),
            Ok(text) => match load_aggregator_str(&text) {
                Err(e) => problems.push(e.into()),
                Ok(w) => {
                    if w.embed_dim != manifest.encoder.embed_dim {
                        problems.push(ZooError::CrossCheck(format!(
                            "manifest encoder.embed_dim = {} but aggregator D = {}",
                            manifest.encoder.embed_dim, w.embed_dim
                        )));
                    }
                    if w.n_classes != manifest.class_names.len() {
                        problems.push(ZooError::CrossCheck(format!(
                            "manifest lists {} class_names but aggregator C = {}",
                            manifest.class_names.len(),
                            w.n_classes
                        )));
                    } else if w.class_names != manifest.class_names {
                        problems.push(ZooError::CrossCheck(format!(
                            "class_names differ: manifest {:?}, aggregator {:?}",
                            manifest.class_names, w.class_names
                        )));
                    }
                    weights = Some(w);
                }
            },
        }
    }

    match problems.len() {
        0 => Ok(VerifiedBundle {
            dir: dir.to_path_buf(),
            manifest,
            weights: weights.expect("loaded when no problems"),
        }),
        1 => Err(problems.pop().unwrap()),
        _ => Err(ZooError::Invalid(problems)),
    }
}

/// Returns a local directory holding a verified copy of the bundle.
///
/// Local references are verified in place. Remote references are cached
/// under `cache_dir/<sha256 of canonical URL>`; a cached copy carrying the
/// completion marker is reused without any network access.
pub fn resolve_model(model: &ModelRef, cache_dir: &Path) -> Result<PathBuf, ZooError> {
    match model {
        ModelRef::Local(dir) => {
            if !dir.is_dir() {
                return Err(ZooError::IncompleteBundle(format!(
                    "{} is not a directory",
                    dir.display()
                )));
            }
            verify_bundle(dir)?;
            Ok(dir.clone())
        }
        ModelRef::Remote(url) => fetch::resolve_remote(url, cache_dir),
    }
}

/// Writes `manifest.json` for the files already present in `dir`, filling
/// in their checksums. Returns the manifest written.
pub fn write_manifest(dir: &Path, mut manifest: ModelManifest) -> Result<ModelManifest, ZooError> {
    for file in manifest.files.values_mut() {
        let path = dir.join(&file.path);
        file.sha256 = sha256_file(&path).map_err(|e| ZooError::io(path.display(), e))?;
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_json()).map_err(|e| ZooError::io(path.display(), e))?;
    Ok(manifest)
}
