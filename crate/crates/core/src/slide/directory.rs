//! Directory pyramid: `pyramid.json` plus raw `level_{i}.rgb` files.

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LevelRect, RegionSink, SlideError};

pub const MANIFEST: &str = "pyramid.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PyramidDoc {
    pub levels: Vec<LevelDims>,
    pub tile: u32,
    pub mpp: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LevelDims {
    pub width: u32,
    pub height: u32,
}

pub fn level_file_name(index: usize) -> String {
    format!("level_{index}.rgb")
}

pub(crate) struct DirectoryPyramid {
    dims: Vec<(u32, u32)>,
    files: Vec<File>,
    tile: u32,
    mpp: Option<f64>,
}

impl DirectoryPyramid {
    pub fn open(dir: &Path) -> Result<Self, SlideError> {
        let manifest = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&manifest).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                SlideError::UnsupportedFormat(format!("{} is a directory without {MANIFEST}", dir.display()))
            } else {
                SlideError::ReadFailure(format!("{}: {e}", manifest.display()))
            }
        })?;
        let doc: PyramidDoc = serde_json::from_str(&text)
            .map_err(|e| SlideError::CorruptHeader(format!("{}: {e}", manifest.display())))?;
        if doc.tile == 0 {
            return Err(SlideError::CorruptHeader("tile size must be positive".into()));
        }
        let mut files = Vec::with_capacity(doc.levels.len());
        for (i, l) in doc.levels.iter().enumerate() {
            let path = dir.join(level_file_name(i));
            let f = File::open(&path).map_err(|e| SlideError::CorruptHeader(format!("{}: {e}", path.display())))?;
            let len = f.metadata().map_err(|e| SlideError::ReadFailure(e.to_string()))?.len();
            let want = l.width as u64 * l.height as u64 * 3;
            if len != want {
                return Err(SlideError::CorruptHeader(format!(
                    "{} has {len} bytes, expected {want} for {}x{}",
                    path.display(),
                    l.width,
                    l.height
                )));
            }
            files.push(f);
        }
        Ok(DirectoryPyramid {
            dims: doc.levels.iter().map(|l| (l.width, l.height)).collect(),
            files,
            tile: doc.tile,
            mpp: doc.mpp,
        })
    }

    pub fn dims(&self) -> &[(u32, u32)] {
        &self.dims
    }

    pub fn tile(&self) -> u32 {
        self.tile
    }

    pub fn mpp(&self) -> Option<f64> {
        self.mpp
    }

    pub fn read(&self, level: usize, rect: LevelRect, sink: &mut RegionSink<'_>) -> Result<(), SlideError> {
        let (w, _) = self.dims[level];
        let file = &self.files[level];
        let mut row = vec![0u8; rect.w as usize * 3];
        for ly in rect.y..rect.y + rect.h {
            let offset = (ly as u64 * w as u64 + rect.x as u64) * 3;
            file.read_exact_at(&mut row, offset)
                .map_err(|e| SlideError::ReadFailure(format!("level {level} row {ly}: {e}")))?;
            sink.put_row(rect.x, ly, &row);
        }
        Ok(())
    }
}
