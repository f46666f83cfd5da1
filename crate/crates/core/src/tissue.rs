//! Tissue detection on a slide thumbnail.
//!
//! The recipe is fixed: thumbnail, luma grayscale, Otsu threshold, keep
//! pixels at or below the threshold (tissue is darker than glass), 3x3
//! median filter, then a 3x3 closing. Borders replicate the edge pixel for
//! every neighbourhood operation.

use std::cmp::Ordering;

use num_bigint::BigUint;

use crate::geometry::Rect;
use crate::slide::{RasterPatch, SlideError, SlidePyramid};

pub const DEFAULT_THUMBNAIL_MAX_DIM: u32 = 2048;

#[derive(Debug, thiserror::Error)]
pub enum TissueError {
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error(transparent)]
    Slide(#[from] SlideError),
}

/// Single-channel 8-bit raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

/// Luma conversion: `round(0.299 R + 0.587 G + 0.114 B)`, computed in
/// integer arithmetic so rounding is exact.
pub fn to_grayscale(patch: &RasterPatch) -> GrayImage {
    let pixels = patch
        .pixels
        .chunks_exact(3)
        .map(|p| gray_value(p[0], p[1], p[2]))
        .collect();
    GrayImage {
        width: patch.width,
        height: patch.height,
        pixels,
    }
}

#[inline]
pub fn gray_value(r: u8, g: u8, b: u8) -> u8 {
    let v = (299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000;
    v.min(255) as u8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayHistogram {
    pub counts: [u64; 256],
}

impl GrayHistogram {
    pub fn from_counts(counts: [u64; 256]) -> Self {
        GrayHistogram { counts }
    }

    pub fn of(image: &GrayImage) -> Self {
        let mut counts = [0u64; 256];
        for &v in &image.pixels {
            counts[v as usize] += 1;
        }
        GrayHistogram { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Otsu threshold: the `t` maximizing between-class variance where class 0
/// is every intensity `<= t`. Ties go to the smallest `t`, so a histogram
/// with a single occupied bin yields 0.
///
/// Variances are compared exactly. With `n0, n1` class counts and `s0, s1`
/// intensity sums, the variance is proportional to
/// `(s0 n1 - s1 n0)^2 / (n0 n1)`, and two such fractions are compared by
/// cross-multiplication in arbitrary precision.
pub fn otsu_threshold(hist: &GrayHistogram) -> Result<u8, TissueError> {
    let total = hist.total();
    if total == 0 {
        return Err(TissueError::EmptyHistogram);
    }
    let total_sum: u128 = hist
        .counts
        .iter()
        .enumerate()
        .map(|(v, &c)| v as u128 * c as u128)
        .sum();

    let mut best_t = 0u8;
    // None means variance zero (one class empty).
    let mut best: Option<(BigUint, BigUint)> = None;
    let mut n0: u128 = 0;
    let mut s0: u128 = 0;
    for t in 0..256usize {
        n0 += hist.counts[t] as u128;
        s0 += t as u128 * hist.counts[t] as u128;
        let n1 = total as u128 - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1 = total_sum - s0;
        let a = BigUint::from(s0) * BigUint::from(n1);
        let b = BigUint::from(s1) * BigUint::from(n0);
        let diff = if a >= b { a - b } else { b - a };
        let num = &diff * &diff;
        let den = BigUint::from(n0) * BigUint::from(n1);
        let better = match &best {
            None => num > BigUint::ZERO,
            Some((bn, bd)) => (&num * bd).cmp(&(bn * &den)) == Ordering::Greater,
        };
        if better {
            best = Some((num, den));
            best_t = t as u8;
        }
    }
    Ok(best_t)
}

/// Binary tissue raster at thumbnail scale.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMask {
    pub width: u32,
    pub height: u32,
    /// Row-major, 1 = tissue.
    pub bits: Vec<u8>,
    /// Level-0 pixels per mask pixel.
    pub scale_x: f64,
    pub scale_y: f64,
    pub threshold_used: u8,
}

impl TissueMask {
    /// Builds a mask from raw bits covering a `level0_width x level0_height` slide.
    pub fn from_bits(width: u32, height: u32, bits: Vec<u8>, level0: (u32, u32), threshold_used: u8) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize, "mask size mismatch");
        TissueMask {
            width,
            height,
            bits,
            scale_x: level0.0 as f64 / width as f64,
            scale_y: level0.1 as f64 / height as f64,
            threshold_used,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize] != 0
    }

    pub fn tissue_pixels(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn fraction(&self) -> f64 {
        self.tissue_pixels() as f64 / self.bits.len() as f64
    }

    /// Fraction of tissue pixels among the mask pixels overlapping the
    /// level-0 rectangle.
    pub fn tissue_fraction(&self, rect: Rect) -> f64 {
        tissue_fraction(self, rect)
    }

    /// Binary PGM (P5) rendering, tissue white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.bits.iter().map(|&b| if b != 0 { 255 } else { 0 }));
        out
    }
}

/// Runs the full detection recipe on a slide.
pub fn detect_tissue(slide: &SlidePyramid, max_dim: u32) -> Result<TissueMask, TissueError> {
    let thumb = slide.get_thumbnail(max_dim)?;
    Ok(mask_from_thumbnail(&thumb, slide.dimensions()))
}

/// The detection recipe applied to an already rendered thumbnail.
pub fn mask_from_thumbnail(thumb: &RasterPatch, level0: (u32, u32)) -> TissueMask {
    let gray = to_grayscale(thumb);
    let t = otsu_threshold(&GrayHistogram::of(&gray)).expect("thumbnail is non-empty");
    let binary: Vec<u8> = gray.pixels.iter().map(|&g| (g <= t) as u8).collect();
    let (w, h) = (gray.width as usize, gray.height as usize);
    let filtered = median3x3(&binary, w, h);
    let closed = erode3x3(&dilate3x3(&filtered, w, h), w, h);
    TissueMask::from_bits(gray.width, gray.height, closed, level0, t)
}

fn neighbourhood(bits: &[u8], w: usize, h: usize, x: usize, y: usize) -> impl Iterator<Item = u8> + '_ {
    let xs = [x.saturating_sub(1), x, (x + 1).min(w - 1)];
    let ys = [y.saturating_sub(1), y, (y + 1).min(h - 1)];
    ys.into_iter()
        .flat_map(move |yy| xs.into_iter().map(move |xx| bits[yy * w + xx]))
}

fn map3x3(bits: &[u8], w: usize, h: usize, f: impl Fn(usize) -> u8) -> Vec<u8> {
    let mut out = vec![0u8; bits.len()];
    for y in 0..h {
        for x in 0..w {
            let ones = neighbourhood(bits, w, h, x, y).filter(|&b| b != 0).count();
            out[y * w + x] = f(ones);
        }
    }
    out
}

/// Majority of the 3x3 neighbourhood.
pub fn median3x3(bits: &[u8], w: usize, h: usize) -> Vec<u8> {
    map3x3(bits, w, h, |ones| (ones >= 5) as u8)
}

pub fn dilate3x3(bits: &[u8], w: usize, h: usize) -> Vec<u8> {
    map3x3(bits, w, h, |ones| (ones > 0) as u8)
}

pub fn erode3x3(bits: &[u8], w: usize, h: usize) -> Vec<u8> {
    map3x3(bits, w, h, |ones| (ones == 9) as u8)
}

/// Fraction of mask pixels overlapping `rect` that are tissue. The rect is
/// mapped to mask pixels `[floor(x / sx), ceil((x + w) / sx))` (likewise in
/// y) and clipped to the mask; no overlap gives 0.
///
/// The mapping is evaluated in integers against the level-0 size the mask
/// was built for, so it is exact.
pub fn tissue_fraction(mask: &TissueMask, rect: Rect) -> f64 {
    let (mw, mh) = (mask.width as u64, mask.height as u64);
    let l0w = (mask.scale_x * mw as f64).round() as u64;
    let l0h = (mask.scale_y * mh as f64).round() as u64;
    let x0 = rect.x as u64 * mw / l0w;
    let y0 = rect.y as u64 * mh / l0h;
    let x1 = (rect.right() * mw).div_ceil(l0w).min(mw);
    let y1 = (rect.bottom() * mh).div_ceil(l0h).min(mh);
    if x0 >= x1 || y0 >= y1 {
        return 0.0;
    }
    let w = mask.width as usize;
    let mut tissue = 0u64;
    for y in y0..y1 {
        let row = &mask.bits[y as usize * w..(y as usize + 1) * w];
        tissue += row[x0 as usize..x1 as usize].iter().filter(|&&b| b != 0).count() as u64;
    }
    tissue as f64 / ((x1 - x0) * (y1 - y0)) as f64
}
