//! Writers for the two slide layouts the reader understands.
//!
//! These exist so fixtures and demo slides can be generated without any
//! external tooling. The TIFF writer emits classic little-endian TIFF with
//! one tiled IFD per level.

use std::io::{self, Write};
use std::path::Path;

use flate2::write::ZlibEncoder;

use super::directory::{level_file_name, LevelDims, PyramidDoc, MANIFEST};

/// One level's pixels, row-major RGB.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl PyramidLevel {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Self {
        assert_eq!(
            pixels.len(),
            width as usize * height as usize * 3,
            "pixel buffer does not match {width}x{height} RGB"
        );
        PyramidLevel { width, height, pixels }
    }

    /// Box-downsamples this level by an integer factor (sizes rounded down, at least 1).
    pub fn downsampled(&self, factor: u32) -> PyramidLevel {
        let w = (self.width / factor).max(1);
        let h = (self.height / factor).max(1);
        let src = super::RasterPatch {
            width: self.width,
            height: self.height,
            pixels: self.pixels.clone(),
            origin_level0: (0, 0),
            level: 0,
        };
        let r = super::box_resize(&src, w, h);
        PyramidLevel::new(w, h, r.pixels)
    }
}

/// Writes `pyramid.json` and `level_{i}.rgb` files into `dir` (created if missing).
pub fn write_directory_pyramid(dir: &Path, levels: &[PyramidLevel], tile: u32, mpp: Option<f64>) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let doc = PyramidDoc {
        levels: levels
            .iter()
            .map(|l| LevelDims {
                width: l.width,
                height: l.height,
            })
            .collect(),
        tile,
        mpp,
    };
    std::fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&doc)?)?;
    for (i, l) in levels.iter().enumerate() {
        std::fs::write(dir.join(level_file_name(i)), &l.pixels)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TiffCompression {
    None,
    Deflate,
}

#[derive(Debug, Clone, Copy)]
pub struct TiffOptions {
    pub tile: u32,
    pub compression: TiffCompression,
    /// Level-0 microns per pixel, written as resolution tags in pixels/cm.
    pub mpp: Option<f64>,
}

impl Default for TiffOptions {
    fn default() -> Self {
        TiffOptions {
            tile: 256,
            compression: TiffCompression::Deflate,
            mpp: None,
        }
    }
}

const SHORT: u16 = 3;
const LONG: u16 = 4;
const RATIONAL: u16 = 5;

struct Entry {
    tag: u16,
    kind: u16,
    count: u32,
    data: Vec<u8>,
}

impl Entry {
    fn shorts(tag: u16, v: &[u16]) -> Self {
        Entry {
            tag,
            kind: SHORT,
            count: v.len() as u32,
            data: v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn longs(tag: u16, v: &[u32]) -> Self {
        Entry {
            tag,
            kind: LONG,
            count: v.len() as u32,
            data: v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn rational(tag: u16, num: u32, den: u32) -> Self {
        let mut data = num.to_le_bytes().to_vec();
        data.extend_from_slice(&den.to_le_bytes());
        Entry {
            tag,
            kind: RATIONAL,
            count: 1,
            data,
        }
    }
}

/// Writes a tiled pyramidal TIFF. Levels are written in the given order with
/// no geometry validation, so malformed pyramids can be produced on purpose.
pub fn write_tiled_tiff(path: &Path, levels: &[PyramidLevel], opts: TiffOptions) -> io::Result<()> {
    assert!(opts.tile > 0, "tile size must be positive");
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    let mut prev_next_ptr = 4usize;

    for (li, level) in levels.iter().enumerate() {
        let t = opts.tile;
        let across = level.width.div_ceil(t);
        let down = level.height.div_ceil(t);
        let mut offsets = Vec::with_capacity((across * down) as usize);
        let mut counts = Vec::with_capacity((across * down) as usize);
        let mut tile_buf = vec![0u8; (t * t * 3) as usize];
        for ty in 0..down {
            for tx in 0..across {
                tile_buf.iter_mut().for_each(|b| *b = 0);
                for row in 0..t {
                    let y = ty * t + row;
                    if y >= level.height {
                        break;
                    }
                    let x0 = tx * t;
                    let n = t.min(level.width - x0) as usize;
                    let src = (y as usize * level.width as usize + x0 as usize) * 3;
                    let dst = row as usize * t as usize * 3;
                    tile_buf[dst..dst + n * 3].copy_from_slice(&level.pixels[src..src + n * 3]);
                }
                let encoded = match opts.compression {
                    TiffCompression::None => tile_buf.clone(),
                    TiffCompression::Deflate => {
                        let mut z = ZlibEncoder::new(Vec::new(), flate2::Compression::fast());
                        z.write_all(&tile_buf)?;
                        z.finish()?
                    }
                };
                align_word(&mut out);
                offsets.push(u32::try_from(out.len()).map_err(|_| too_big())?);
                counts.push(encoded.len() as u32);
                out.extend_from_slice(&encoded);
            }
        }

        let compression = match opts.compression {
            TiffCompression::None => 1,
            TiffCompression::Deflate => 8,
        };
        let mut entries = vec![
            Entry::longs(254, &[if li == 0 { 0 } else { 1 }]),
            Entry::longs(256, &[level.width]),
            Entry::longs(257, &[level.height]),
            Entry::shorts(258, &[8, 8, 8]),
            Entry::shorts(259, &[compression]),
            Entry::shorts(262, &[2]),
            Entry::shorts(277, &[3]),
            Entry::shorts(284, &[1]),
            Entry::longs(322, &[t]),
            Entry::longs(323, &[t]),
            Entry::longs(324, &offsets),
            Entry::longs(325, &counts),
        ];
        if let Some(mpp) = opts.mpp {
            let ds = levels[0].width as f64 / level.width as f64;
            let px_per_cm = 10_000.0 / (mpp * ds);
            let num = (px_per_cm * 1000.0).round() as u32;
            entries.push(Entry::rational(282, num, 1000));
            entries.push(Entry::rational(283, num, 1000));
            entries.push(Entry::shorts(296, &[3]));
        }
        entries.sort_by_key(|e| e.tag);

        align_word(&mut out);
        let ifd_start = out.len();
        let ifd_len = 2 + entries.len() * 12 + 4;
        let mut extra_at = ifd_start + ifd_len;
        let mut ifd = Vec::with_capacity(ifd_len);
        let mut extra = Vec::new();
        ifd.extend_from_slice(&(entries.len() as u16).to_le_bytes());
        for e in &entries {
            ifd.extend_from_slice(&e.tag.to_le_bytes());
            ifd.extend_from_slice(&e.kind.to_le_bytes());
            ifd.extend_from_slice(&e.count.to_le_bytes());
            if e.data.len() <= 4 {
                let mut v = e.data.clone();
                v.resize(4, 0);
                ifd.extend_from_slice(&v);
            } else {
                ifd.extend_from_slice(&(u32::try_from(extra_at).map_err(|_| too_big())?).to_le_bytes());
                extra.extend_from_slice(&e.data);
                if extra.len() % 2 == 1 {
                    extra.push(0);
                }
                extra_at = ifd_start + ifd_len + extra.len();
            }
        }
        let next_ptr_pos = ifd_start + ifd.len();
        ifd.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&ifd);
        out.extend_from_slice(&extra);

        let start = u32::try_from(ifd_start).map_err(|_| too_big())?;
        out[prev_next_ptr..prev_next_ptr + 4].copy_from_slice(&start.to_le_bytes());
        prev_next_ptr = next_ptr_pos;
    }
    std::fs::write(path, out)
}

fn align_word(out: &mut Vec<u8>) {
    if out.len() % 2 == 1 {
        out.push(0);
    }
}

fn too_big() -> io::Error {
    io::Error::new(io::ErrorKind::InvalidInput, "classic TIFF is limited to 4 GiB")
}
