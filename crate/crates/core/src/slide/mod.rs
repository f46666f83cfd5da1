//! Pyramidal whole-slide image access.
//!
//! A [`SlidePyramid`] is a handle to a multi-resolution image. Opening a slide
//! only reads headers; pixels are decoded on demand by [`SlidePyramid::read_region`].
//!
//! Two on-disk layouts are understood:
//!
//! - tiled pyramidal TIFF (8-bit RGB or RGBA, uncompressed, deflate or JPEG),
//!   where every tiled IFD is one pyramid level;
//! - a directory pyramid: `pyramid.json` plus one raw `level_{i}.rgb` file per level.
//!
//! All coordinates passed in are level-0 pixels. They are mapped onto a
//! level with `floor(x / downsample)`.

mod directory;
mod resample;
mod tiff;
pub mod writer;

use std::path::{Path, PathBuf};

pub use resample::box_resize;

/// Background value used for pixels outside the slide.
pub const BACKGROUND: u8 = 255;

#[derive(Debug, thiserror::Error)]
pub enum SlideError {
    #[error("slide not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported slide format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt slide header: {0}")]
    CorruptHeader(String),
    #[error("invalid level {level} (slide has {count} levels)")]
    InvalidLevel { level: usize, count: usize },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("failed to read slide pixels: {0}")]
    ReadFailure(String),
}

/// Geometry of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LevelInfo {
    pub index: usize,
    pub width: u32,
    pub height: u32,
    /// Level-0 width divided by this level's width. Exactly 1 for level 0.
    pub downsample: f64,
}

/// An 8-bit RGB pixel buffer cut out of a slide.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterPatch {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB bytes, `width * height * 3` long.
    pub pixels: Vec<u8>,
    pub origin_level0: (u32, u32),
    pub level: usize,
}

impl RasterPatch {
    pub const CHANNELS: usize = 3;

    /// A patch filled with a single RGB value.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        RasterPatch {
            width,
            height,
            pixels,
            origin_level0: (0, 0),
            level: 0,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

enum Backend {
    Directory(directory::DirectoryPyramid),
    Tiff(tiff::TiffPyramid),
}

/// Handle to an opened multi-resolution slide.
///
/// The handle is `Send + Sync`; concurrent [`read_region`](Self::read_region)
/// calls are allowed.
pub struct SlidePyramid {
    path: PathBuf,
    levels: Vec<LevelInfo>,
    mpp: Option<(f64, f64)>,
    tile_width: u32,
    tile_height: u32,
    backend: Backend,
}

impl std::fmt::Debug for SlidePyramid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlidePyramid")
            .field("path", &self.path)
            .field("levels", &self.levels)
            .field("mpp", &self.mpp)
            .field("tile", &(self.tile_width, self.tile_height))
            .finish()
    }
}

/// Opens a slide from either a tiled TIFF file or a directory pyramid.
pub fn open_slide(path: impl AsRef<Path>) -> Result<SlidePyramid, SlideError> {
    SlidePyramid::open(path)
}

impl SlidePyramid {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, SlideError> {
        let path = path.as_ref();
        let meta = std::fs::metadata(path).map_err(|_| SlideError::NotFound(path.to_path_buf()))?;
        let (dims, mpp, tile, backend) = if meta.is_dir() {
            let d = directory::DirectoryPyramid::open(path)?;
            let dims = d.dims().to_vec();
            let mpp = d.mpp().map(|m| (m, m));
            let tile = (d.tile(), d.tile());
            (dims, mpp, tile, Backend::Directory(d))
        } else {
            let t = tiff::TiffPyramid::open(path)?;
            let dims = t.dims().to_vec();
            let mpp = t.mpp();
            let tile = t.tile();
            (dims, mpp, tile, Backend::Tiff(t))
        };
        let levels = build_levels(&dims)?;
        if let Some((mx, my)) = mpp {
            if !(mx.is_finite() && my.is_finite() && mx > 0.0 && my > 0.0) {
                return Err(SlideError::CorruptHeader(format!("invalid mpp ({mx}, {my})")));
            }
        }
        Ok(SlidePyramid {
            path: path.to_path_buf(),
            levels,
            mpp,
            tile_width: tile.0,
            tile_height: tile.1,
            backend,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn levels(&self) -> &[LevelInfo] {
        &self.levels
    }

    pub fn level(&self, index: usize) -> Result<&LevelInfo, SlideError> {
        self.levels.get(index).ok_or(SlideError::InvalidLevel {
            level: index,
            count: self.levels.len(),
        })
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Level-0 (width, height).
    pub fn dimensions(&self) -> (u32, u32) {
        (self.levels[0].width, self.levels[0].height)
    }

    pub fn mpp_x(&self) -> Option<f64> {
        self.mpp.map(|m| m.0)
    }

    pub fn mpp_y(&self) -> Option<f64> {
        self.mpp.map(|m| m.1)
    }

    pub fn tile_size(&self) -> (u32, u32) {
        (self.tile_width, self.tile_height)
    }

    /// Reads a `w x h` RGB region at `level`, with `(x, y)` given in level-0
    /// coordinates. Parts of the region outside the level are white.
    pub fn read_region(&self, level: usize, x: u32, y: u32, w: u32, h: u32) -> Result<RasterPatch, SlideError> {
        let info = *self.level(level)?;
        if w == 0 || h == 0 {
            return Err(SlideError::InvalidRegion(format!("empty region {w}x{h}")));
        }
        let lx = (x as f64 / info.downsample).floor() as u64;
        let ly = (y as f64 / info.downsample).floor() as u64;
        let mut patch = RasterPatch::filled(w, h, [BACKGROUND; 3]);
        patch.origin_level0 = (x, y);
        patch.level = level;

        // Intersection of the request with the level, in level coordinates.
        let x0 = lx.min(info.width as u64);
        let y0 = ly.min(info.height as u64);
        let x1 = (lx + w as u64).min(info.width as u64);
        let y1 = (ly + h as u64).min(info.height as u64);
        if x1 > x0 && y1 > y0 {
            let rect = LevelRect {
                x: x0 as u32,
                y: y0 as u32,
                w: (x1 - x0) as u32,
                h: (y1 - y0) as u32,
            };
            let dst_x = (x0 - lx) as usize;
            let dst_y = (y0 - ly) as usize;
            let mut sink = RegionSink {
                buf: &mut patch.pixels,
                stride: w as usize * 3,
                origin: (rect.x, rect.y),
                offset: (dst_x, dst_y),
            };
            match &self.backend {
                Backend::Directory(d) => d.read(level, rect, &mut sink)?,
                Backend::Tiff(t) => t.read(level, rect, &mut sink)?,
            }
        }
        Ok(patch)
    }

    /// Renders the whole slide so that `max(width, height) <= max_dim`.
    ///
    /// Reads the smallest level whose larger side is still at least
    /// `max_dim` (level 0 if none qualifies) and box-downsamples it. Never
    /// upsamples.
    pub fn get_thumbnail(&self, max_dim: u32) -> Result<RasterPatch, SlideError> {
        if max_dim < 16 {
            return Err(SlideError::InvalidRegion(format!(
                "thumbnail max_dim must be >= 16, got {max_dim}"
            )));
        }
        let source = self
            .levels
            .iter()
            .rev()
            .find(|l| l.width.max(l.height) >= max_dim)
            .unwrap_or(&self.levels[0]);
        let full = self.read_region(source.index, 0, 0, source.width, source.height)?;
        let (tw, th) = thumbnail_dims(source.width, source.height, max_dim);
        let mut thumb = box_resize(&full, tw, th);
        thumb.level = source.index;
        Ok(thumb)
    }
}

/// Target size for a thumbnail of a `w x h` image bounded by `max_dim`.
pub(crate) fn thumbnail_dims(w: u32, h: u32, max_dim: u32) -> (u32, u32) {
    let long = w.max(h);
    if long <= max_dim {
        return (w, h);
    }
    let scale = max_dim as f64 / long as f64;
    let tw = if w >= h {
        max_dim
    } else {
        ((w as f64 * scale).round() as u32).max(1)
    };
    let th = if h >= w {
        max_dim
    } else {
        ((h as f64 * scale).round() as u32).max(1)
    };
    (tw, th)
}

fn build_levels(dims: &[(u32, u32)]) -> Result<Vec<LevelInfo>, SlideError> {
    if dims.is_empty() {
        return Err(SlideError::CorruptHeader("slide has no levels".into()));
    }
    let (w0, _) = dims[0];
    let mut levels = Vec::with_capacity(dims.len());
    for (i, &(w, h)) in dims.iter().enumerate() {
        if w == 0 || h == 0 {
            return Err(SlideError::CorruptHeader(format!("level {i} has zero size {w}x{h}")));
        }
        if i > 0 {
            let (pw, ph) = dims[i - 1];
            if w >= pw || h >= ph {
                return Err(SlideError::CorruptHeader(format!(
                    "level {i} ({w}x{h}) is not smaller than level {} ({pw}x{ph})",
                    i - 1
                )));
            }
        }
        let downsample = if i == 0 { 1.0 } else { w0 as f64 / w as f64 };
        levels.push(LevelInfo {
            index: i,
            width: w,
            height: h,
            downsample,
        });
    }
    Ok(levels)
}

/// A rectangle in level coordinates, fully inside the level.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LevelRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

/// Destination for backend reads: rows of the level rectangle are copied
/// into the patch buffer at `offset`.
pub(crate) struct RegionSink<'a> {
    buf: &'a mut [u8],
    stride: usize,
    origin: (u32, u32),
    offset: (usize, usize),
}

impl RegionSink<'_> {
    /// Copies RGB bytes for level pixels `[lx, lx + n)` on level row `ly`.
    pub fn put_row(&mut self, lx: u32, ly: u32, rgb: &[u8]) {
        let dx = self.offset.0 + (lx - self.origin.0) as usize;
        let dy = self.offset.1 + (ly - self.origin.1) as usize;
        let start = dy * self.stride + dx * 3;
        self.buf[start..start + rgb.len()].copy_from_slice(rgb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use writer::{write_directory_pyramid, PyramidLevel};

    fn constant_level(w: u32, h: u32, v: u8) -> PyramidLevel {
        PyramidLevel::new(w, h, vec![v; (w * h * 3) as usize])
    }

    #[test]
    fn level_geometry_is_validated() {
        let levels = build_levels(&[(4096, 4096), (1024, 1024), (256, 256)]).unwrap();
        let ds: Vec<f64> = levels.iter().map(|l| l.downsample).collect();
        assert_eq!(ds, vec![1.0, 4.0, 16.0]);
        assert!(matches!(
            build_levels(&[(512, 512), (1024, 1024)]),
            Err(SlideError::CorruptHeader(_))
        ));
        assert!(matches!(
            build_levels(&[(512, 512), (256, 512)]),
            Err(SlideError::CorruptHeader(_))
        ));
    }

    #[test]
    fn thumbnail_dims_keep_aspect() {
        assert_eq!(thumbnail_dims(4096, 2048, 1024), (1024, 512));
        assert_eq!(thumbnail_dims(256, 256, 1024), (256, 256));
        assert_eq!(thumbnail_dims(1000, 3000, 100), (33, 100));
    }

    #[test]
    fn missing_path_is_not_found() {
        let err = open_slide("/definitely/not/here.tif").unwrap_err();
        assert!(matches!(err, SlideError::NotFound(_)));
    }

    #[test]
    fn read_region_maps_level0_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        // Level 1 encodes its own x coordinate in the red channel.
        let mut px = Vec::new();
        for _y in 0..64u32 {
            for x in 0..64u32 {
                px.extend_from_slice(&[x as u8, 0, 0]);
            }
        }
        let levels = vec![constant_level(256, 256, 0), PyramidLevel::new(64, 64, px)];
        write_directory_pyramid(dir.path(), &levels, 32, None).unwrap();
        let slide = open_slide(dir.path()).unwrap();
        assert_eq!(slide.levels()[1].downsample, 4.0);
        let p = slide.read_region(1, 41, 0, 4, 1).unwrap();
        // floor(41 / 4) = 10
        assert_eq!(p.pixel(0, 0), [10, 0, 0]);
        assert_eq!(p.pixel(3, 0), [13, 0, 0]);
        assert!(matches!(
            slide.read_region(2, 0, 0, 1, 1),
            Err(SlideError::InvalidLevel { level: 2, count: 2 })
        ));
    }

    #[test]
    fn region_past_edge_is_white() {
        let dir = tempfile::tempdir().unwrap();
        write_directory_pyramid(dir.path(), &[constant_level(64, 64, 37)], 32, None).unwrap();
        let slide = open_slide(dir.path()).unwrap();
        let p = slide.read_region(0, 32, 0, 64, 8).unwrap();
        for y in 0..8 {
            for x in 0..64 {
                let want = if x < 32 { [37; 3] } else { [255; 3] };
                assert_eq!(p.pixel(x, y), want, "({x},{y})");
            }
        }
        let outside = slide.read_region(0, 1000, 1000, 4, 4).unwrap();
        assert!(outside.pixels.iter().all(|&b| b == 255));
    }
}
