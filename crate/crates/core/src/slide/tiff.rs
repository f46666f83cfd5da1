//! Tiled pyramidal TIFF backend.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use tiff::decoder::{ChunkType, Decoder, DecodingResult};
use tiff::tags::Tag;
use tiff::ColorType;

use super::{LevelRect, RegionSink, SlideError};

type TiffDecoder = Decoder<BufReader<File>>;

const COMPRESSION_NONE: u16 = 1;
const COMPRESSION_JPEG: u16 = 7;
const COMPRESSION_DEFLATE: u16 = 8;
const COMPRESSION_DEFLATE_OLD: u16 = 32946;

#[derive(Debug, Clone, Copy)]
struct TiffLevel {
    ifd: usize,
    width: u32,
    height: u32,
    tile_w: u32,
    tile_h: u32,
    channels: usize,
}

pub(crate) struct TiffPyramid {
    path: PathBuf,
    levels: Vec<TiffLevel>,
    dims: Vec<(u32, u32)>,
    mpp: Option<(f64, f64)>,
    // Idle decoders; each reader checks one out so concurrent reads never share state.
    pool: Mutex<Vec<TiffDecoder>>,
}

fn decoder_for(path: &Path) -> Result<TiffDecoder, SlideError> {
    let f = File::open(path).map_err(|_| SlideError::NotFound(path.to_path_buf()))?;
    Decoder::new(BufReader::new(f)).map_err(|e| SlideError::UnsupportedFormat(format!("{}: {e}", path.display())))
}

impl TiffPyramid {
    pub fn open(path: &Path) -> Result<Self, SlideError> {
        let mut dec = decoder_for(path)?;
        let mut levels = Vec::new();
        let mut mpp = None;
        let mut ifd = 0usize;
        loop {
            let tiled = dec.get_chunk_type() == ChunkType::Tile;
            if ifd == 0 {
                if !tiled {
                    return Err(SlideError::UnsupportedFormat(format!(
                        "{}: image is not tiled",
                        path.display()
                    )));
                }
                mpp = read_mpp(&mut dec);
            }
            if tiled {
                levels.push(describe_level(&mut dec, ifd, path)?);
            }
            if !dec.more_images() {
                break;
            }
            dec.next_image()
                .map_err(|e| SlideError::CorruptHeader(format!("IFD {}: {e}", ifd + 1)))?;
            ifd += 1;
        }
        let dims = levels.iter().map(|l| (l.width, l.height)).collect();
        Ok(TiffPyramid {
            path: path.to_path_buf(),
            levels,
            dims,
            mpp,
            pool: Mutex::new(vec![dec]),
        })
    }

    pub fn dims(&self) -> &[(u32, u32)] {
        &self.dims
    }

    pub fn mpp(&self) -> Option<(f64, f64)> {
        self.mpp
    }

    pub fn tile(&self) -> (u32, u32) {
        (self.levels[0].tile_w, self.levels[0].tile_h)
    }

    pub fn read(&self, level: usize, rect: LevelRect, sink: &mut RegionSink<'_>) -> Result<(), SlideError> {
        let info = self.levels[level];
        let mut dec = match self.pool.lock().unwrap().pop() {
            Some(d) => d,
            None => decoder_for(&self.path)?,
        };
        dec.seek_to_image(info.ifd)
            .map_err(|e| SlideError::ReadFailure(format!("seek to IFD {}: {e}", info.ifd)))?;

        let across = info.width.div_ceil(info.tile_w);
        let tx0 = rect.x / info.tile_w;
        let tx1 = (rect.x + rect.w - 1) / info.tile_w;
        let ty0 = rect.y / info.tile_h;
        let ty1 = (rect.y + rect.h - 1) / info.tile_h;
        let mut rgb = Vec::new();
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                let chunk = ty * across + tx;
                let (dw, _dh) = dec.chunk_data_dimensions(chunk);
                let data = match dec.read_chunk(chunk) {
                    Ok(DecodingResult::U8(v)) => v,
                    Ok(_) => {
                        return Err(SlideError::ReadFailure(format!("tile {chunk}: not 8-bit")));
                    }
                    Err(e) => {
                        return Err(SlideError::ReadFailure(format!("level {level} tile {chunk}: {e}")));
                    }
                };
                // Tile origin in level coordinates and its overlap with the request.
                let ox = tx * info.tile_w;
                let oy = ty * info.tile_h;
                let x0 = rect.x.max(ox);
                let x1 = (rect.x + rect.w).min(ox + dw);
                let y0 = rect.y.max(oy);
                let y1 = (rect.y + rect.h).min(oy + info.tile_h).min(info.height);
                if x1 <= x0 {
                    continue;
                }
                for ly in y0..y1 {
                    let row = (ly - oy) as usize * dw as usize;
                    rgb.clear();
                    for lx in x0..x1 {
                        let i = (row + (lx - ox) as usize) * info.channels;
                        rgb.extend_from_slice(&data[i..i + 3]);
                    }
                    sink.put_row(x0, ly, &rgb);
                }
            }
        }
        self.pool.lock().unwrap().push(dec);
        Ok(())
    }
}

fn describe_level(dec: &mut TiffDecoder, ifd: usize, path: &Path) -> Result<TiffLevel, SlideError> {
    let unsupported = |msg: String| SlideError::UnsupportedFormat(format!("{} IFD {ifd}: {msg}", path.display()));
    let (width, height) = dec
        .dimensions()
        .map_err(|e| SlideError::CorruptHeader(format!("IFD {ifd}: {e}")))?;
    let channels = match dec.colortype() {
        Ok(ColorType::RGB(8)) => 3,
        Ok(ColorType::RGBA(8)) => 4,
        Ok(other) => return Err(unsupported(format!("color type {other:?}"))),
        Err(e) => return Err(unsupported(e.to_string())),
    };
    let compression = dec
        .find_tag_unsigned::<u16>(Tag::Compression)
        .map_err(|e| SlideError::CorruptHeader(e.to_string()))?
        .unwrap_or(COMPRESSION_NONE);
    if !matches!(
        compression,
        COMPRESSION_NONE | COMPRESSION_JPEG | COMPRESSION_DEFLATE | COMPRESSION_DEFLATE_OLD
    ) {
        return Err(unsupported(format!("compression {compression}")));
    }
    let (tile_w, tile_h) = dec.chunk_dimensions();
    if tile_w == 0 || tile_h == 0 {
        return Err(SlideError::CorruptHeader(format!("IFD {ifd}: zero tile size")));
    }
    Ok(TiffLevel {
        ifd,
        width,
        height,
        tile_w,
        tile_h,
        channels,
    })
}

/// Microns per pixel from an Aperio-style `MPP = ` description, falling
/// back to the resolution tags.
fn read_mpp(dec: &mut TiffDecoder) -> Option<(f64, f64)> {
    if let Ok(Some(desc)) = dec.find_tag(Tag::ImageDescription) {
        if let Ok(text) = desc.into_string() {
            if let Some(m) = parse_description_mpp(&text) {
                return Some((m, m));
            }
        }
    }
    let unit = dec
        .find_tag_unsigned::<u16>(Tag::ResolutionUnit)
        .ok()
        .flatten()
        .unwrap_or(2);
    let microns_per_unit = match unit {
        2 => 25_400.0,
        3 => 10_000.0,
        _ => return None,
    };
    let xres = resolution(dec, Tag::XResolution)?;
    let yres = resolution(dec, Tag::YResolution).unwrap_or(xres);
    if xres > 0.0 && yres > 0.0 && xres.is_finite() && yres.is_finite() {
        Some((microns_per_unit / xres, microns_per_unit / yres))
    } else {
        None
    }
}

/// A resolution tag as a float; these are RATIONAL, which `get_tag_f64`
/// does not convert.
fn resolution(dec: &mut TiffDecoder, tag: Tag) -> Option<f64> {
    use ::tiff::decoder::ifd::Value;
    match dec.find_tag(tag).ok()?? {
        Value::Rational(n, d) if d != 0 => Some(n as f64 / d as f64),
        other => other.into_f64().ok(),
    }
}

fn parse_description_mpp(text: &str) -> Option<f64> {
    text.split('|').find_map(|field| {
        let (k, v) = field.split_once('=')?;
        if k.trim().eq_ignore_ascii_case("mpp") {
            v.trim().parse::<f64>().ok().filter(|m| *m > 0.0)
        } else {
            None
        }
    })
}
