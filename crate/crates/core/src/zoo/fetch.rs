use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::Path;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{parse_manifest, verify_bundle, ZooError, MANIFEST_FILE};

/// Written last, once every file of a cached bundle has been verified.
pub const COMPLETE_MARKER: &str = ".complete";

const MAX_REDIRECTS: u32 = 5;

/// Lowercases scheme and host and drops trailing slashes.
pub fn canonical_url(url: &str) -> String {
    let url = url.trim().trim_end_matches('/');
    match url.find("://") {
        None => url.to_string(),
        Some(i) => {
            let scheme = url[..i].to_ascii_lowercase();
            let rest = &url[i + 3..];
            let (host, path) = match rest.find('/') {
                Some(j) => (&rest[..j], &rest[j..]),
                None => (rest, ""),
            };
            format!("{scheme}://{}{path}", host.to_ascii_lowercase())
        }
    }
}

/// Cache directory name for a bundle URL.
pub fn cache_key(url: &str) -> String {
    hex::encode(Sha256::digest(canonical_url(url).as_bytes()))
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .max_redirects(MAX_REDIRECTS)
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(600)))
        .build()
        .into()
}

fn get(agent: &ureq::Agent, url: &str) -> Result<ureq::http::Response<ureq::Body>, ZooError> {
    let fetch_err = |message: String| ZooError::Fetch {
        url: url.to_string(),
        message,
    };
    let resp = agent.get(url).call().map_err(|e| fetch_err(e.to_string()))?;
    if resp.status() != 200 {
        return Err(fetch_err(format!("HTTP {}", resp.status())));
    }
    Ok(resp)
}

pub(super) fn resolve_remote(url: &str, cache_dir: &Path) -> Result<std::path::PathBuf, ZooError> {
    fs::create_dir_all(cache_dir).map_err(|e| ZooError::io(cache_dir.display(), e))?;
    let key = cache_key(url);
    let dir = cache_dir.join(&key);
    let lock_path = cache_dir.join(format!("{key}.lock"));
    let lock = File::create(&lock_path).map_err(|e| ZooError::io(lock_path.display(), e))?;
    lock.lock().map_err(|e| ZooError::io(lock_path.display(), e))?;

    if dir.join(COMPLETE_MARKER).is_file() && verify_bundle(&dir).is_ok() {
        return Ok(dir);
    }
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| ZooError::io(dir.display(), e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| ZooError::io(dir.display(), e))?;

    let base = canonical_url(url);
    let agent = agent();
    let manifest_url = format!("{base}/{MANIFEST_FILE}");
    let text = get(&agent, &manifest_url)?
        .body_mut()
        .read_to_string()
        .map_err(|e| ZooError::Fetch {
            url: manifest_url.clone(),
            message: e.to_string(),
        })?;
    let manifest = parse_manifest(&text)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, &text).map_err(|e| ZooError::io(manifest_path.display(), e))?;

    for file in manifest.files.values() {
        let file_url = format!("{base}/{}", file.path);
        let dest = dir.join(&file.path);
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(|e| ZooError::io(parent.display(), e))?;
        }
        let mut resp = get(&agent, &file_url)?;
        let partial = dest.with_extension("partial");
        let actual = download(resp.body_mut().as_reader(), &partial).map_err(|e| ZooError::Fetch {
            url: file_url.clone(),
            message: e.to_string(),
        })?;
        if actual != file.sha256 {
            let _ = fs::remove_file(&partial);
            return Err(ZooError::ChecksumMismatch {
                file: file.path.clone(),
                expected: file.sha256.clone(),
                actual,
            });
        }
        fs::rename(&partial, &dest).map_err(|e| ZooError::io(dest.display(), e))?;
    }

    verify_bundle(&dir)?;
    let marker = dir.join(COMPLETE_MARKER);
    let mut f = File::create(&marker).map_err(|e| ZooError::io(marker.display(), e))?;
    f.write_all(canonical_url(url).as_bytes())
        .and_then(|_| f.sync_all())
        .map_err(|e| ZooError::io(marker.display(), e))?;
    Ok(dir)
}

/// Streams `body` to `dest`, returning the sha256 of what was written.
fn download(mut body: impl Read, dest: &Path) -> io::Result<String> {
    let mut out = File::create(dest)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = body.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        out.write_all(&buf[..n])?;
    }
    out.sync_all()?;
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalization() {
        assert_eq!(
            canonical_url("  HTTPS://Models.Example.ORG/Demo/Bundle/// "),
            "https://models.example.org/Demo/Bundle"
        );
        assert_eq!(cache_key("https://a.b/x"), cache_key("HTTPS://A.B/x/"));
        assert_ne!(cache_key("https://a.b/x"), cache_key("https://a.b/X"));
    }
}
