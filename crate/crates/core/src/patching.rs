//! Patch planning inside tissue and lazy patch loading.
//!
//! Patches are squares addressed in level-0 coordinates on a grid anchored
//! at (0, 0). Candidates that overhang the right or bottom edge are
//! dropped, as are candidates whose tissue fraction is below the threshold.
//! Pixels are only read when a patch is requested.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::geometry::{Polygon, Rect};
use crate::slide::{box_resize, RasterPatch, SlideError, SlidePyramid};
use crate::tissue::TissueMask;

pub const DEFAULT_TISSUE_THRESHOLD: f64 = 0.5;
pub const MIN_PATCH_SIZE: u32 = 32;

#[derive(Debug, thiserror::Error)]
pub enum PatchError {
    #[error("invalid patch spec: {0}")]
    InvalidSpec(String),
    #[error("requested spacing {spacing} mpp is finer than the slide's native {native} mpp")]
    BadSpacing { spacing: f64, native: f64 },
    #[error("no patch passes the tissue filter")]
    EmptyPlan,
    #[error("patch index {index} out of range (plan has {len} patches)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("reading patch {index}: {source}")]
    Read {
        index: usize,
        #[source]
        source: SlideError,
    },
}

/// How patches are sized and filtered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    /// Side of the square patch handed to the encoder.
    pub patch_size_px: u32,
    /// Sampling resolution in microns per pixel. `None` means native level-0 pixels.
    pub spacing_mpp: Option<f64>,
    pub tissue_threshold: f64,
    /// Grid stride in level-0 pixels; `None` means the effective patch side.
    pub stride_px: Option<u32>,
}

impl PatchSpec {
    pub fn new(patch_size_px: u32) -> Self {
        PatchSpec {
            patch_size_px,
            spacing_mpp: None,
            tissue_threshold: DEFAULT_TISSUE_THRESHOLD,
            stride_px: None,
        }
    }

    pub fn validate(&self) -> Result<(), PatchError> {
        if self.patch_size_px < MIN_PATCH_SIZE {
            return Err(PatchError::InvalidSpec(format!(
                "patch_size_px must be >= {MIN_PATCH_SIZE}, got {}",
                self.patch_size_px
            )));
        }
        if !(0.0..=1.0).contains(&self.tissue_threshold) {
            return Err(PatchError::InvalidSpec(format!(
                "tissue_threshold must be in [0, 1], got {}",
                self.tissue_threshold
            )));
        }
        if self.stride_px == Some(0) {
            return Err(PatchError::InvalidSpec("stride_px must be >= 1".into()));
        }
        if let Some(s) = self.spacing_mpp {
            if !(s.is_finite() && s > 0.0) {
                return Err(PatchError::InvalidSpec(format!(
                    "spacing_mpp must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Where and how patch pixels are read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub read_level: usize,
    /// Patch side in level-0 pixels.
    pub level0_side: u32,
    /// Patch side in pixels of `read_level`.
    pub read_side: u32,
    pub resize_needed: bool,
}

/// Resolves the pyramid level and sizes used to sample patches.
///
/// With both a requested spacing and a slide resolution, the level-0 side
/// is `round(patch_size * spacing / slide_mpp)` and the read level is the
/// deepest level whose downsample does not exceed `level0_side / patch_size`.
/// Otherwise patches are read at level 0 with their nominal size.
pub fn effective_geometry(slide: &SlidePyramid, spec: &PatchSpec) -> Result<PatchGeometry, PatchError> {
    spec.validate()?;
    let size = spec.patch_size_px;
    let (Some(spacing), Some(native)) = (spec.spacing_mpp, slide.mpp_x()) else {
        return Ok(PatchGeometry {
            read_level: 0,
            level0_side: size,
            read_side: size,
            resize_needed: false,
        });
    };
    if spacing < native {
        return Err(PatchError::BadSpacing { spacing, native });
    }
    let level0_side = (size as f64 * spacing / native).round() as u32;
    let factor = level0_side as f64 / size as f64;
    let level = slide
        .levels()
        .iter()
        .rev()
        .find(|l| l.downsample <= factor)
        .unwrap_or(&slide.levels()[0]);
    let read_side = ((level0_side as f64 / level.downsample).round() as u32).max(1);
    Ok(PatchGeometry {
        read_level: level.index,
        level0_side,
        read_side,
        resize_needed: read_side != size,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedPatch {
    pub rect: Rect,
    pub tissue_fraction: f64,
}

/// Ordered patch rectangles (row-major by y, then x) that passed the tissue filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub patches: Vec<PlannedPatch>,
    pub geometry: PatchGeometry,
    pub spec: PatchSpec,
    pub slide_ref: PathBuf,
}

impl PatchPlan {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn read_level(&self) -> usize {
        self.geometry.read_level
    }

    pub fn resize_needed(&self) -> bool {
        self.geometry.resize_needed
    }

    /// Keeps the patches whose center lies inside `region` (even-odd rule).
    pub fn restrict_to(&self, region: &Polygon) -> PatchPlan {
        let patches = self
            .patches
            .iter()
            .filter(|p| {
                let (cx, cy) = p.rect.center();
                region.contains(cx, cy)
            })
            .copied()
            .collect();
        PatchPlan {
            patches,
            ..self.clone()
        }
    }

    /// Lazily loads patches in plan order.
    pub fn iter<'a>(&'a self, slide: &'a SlidePyramid) -> PatchIterator<'a> {
        PatchIterator {
            slide,
            plan: self,
            cursor: 0,
        }
    }
}

/// Every grid cell of the candidate lattice for a slide, before tissue filtering.
pub fn candidate_grid(level0: (u32, u32), side: u32, stride: u32) -> impl Iterator<Item = Rect> {
    let (w, h) = (level0.0 as u64, level0.1 as u64);
    let (side64, stride64) = (side as u64, stride as u64);
    let ys = (0..).map(move |i| i * stride64).take_while(move |y| y + side64 <= h);
    ys.flat_map(move |y| {
        (0..)
            .map(move |i| i * stride64)
            .take_while(move |x| x + side64 <= w)
            .map(move |x| Rect::square(x as u32, y as u32, side))
    })
}

/// Plans patches over the tissue in `mask`. An empty result is reported
/// as [`PatchError::EmptyPlan`].
pub fn plan_patches(slide: &SlidePyramid, mask: &TissueMask, spec: &PatchSpec) -> Result<PatchPlan, PatchError> {
    let geometry = effective_geometry(slide, spec)?;
    let side = geometry.level0_side;
    let stride = spec.stride_px.unwrap_or(side);
    let patches: Vec<PlannedPatch> = candidate_grid(slide.dimensions(), side, stride)
        .filter_map(|rect| {
            let f = mask.tissue_fraction(rect);
            (f >= spec.tissue_threshold).then_some(PlannedPatch {
                rect,
                tissue_fraction: f,
            })
        })
        .collect();
    if patches.is_empty() {
        return Err(PatchError::EmptyPlan);
    }
    Ok(PatchPlan {
        patches,
        geometry,
        spec: spec.clone(),
        slide_ref: slide.path().to_path_buf(),
    })
}

/// An empty plan carrying the geometry a real plan would have had.
pub fn empty_plan(slide: &SlidePyramid, spec: &PatchSpec) -> Result<PatchPlan, PatchError> {
    Ok(PatchPlan {
        patches: Vec::new(),
        geometry: effective_geometry(slide, spec)?,
        spec: spec.clone(),
        slide_ref: slide.path().to_path_buf(),
    })
}

/// Reads patch `index` at the plan's level, resizing to `patch_size_px` when needed.
pub fn load_patch(slide: &SlidePyramid, plan: &PatchPlan, index: usize) -> Result<RasterPatch, PatchError> {
    let p = plan
        .patches
        .get(index)
        .ok_or(PatchError::IndexOutOfRange { index, len: plan.len() })?;
    let g = plan.geometry;
    let raw = slide
        .read_region(g.read_level, p.rect.x, p.rect.y, g.read_side, g.read_side)
        .map_err(|source| PatchError::Read { index, source })?;
    if g.resize_needed {
        let size = plan.spec.patch_size_px;
        Ok(box_resize(&raw, size, size))
    } else {
        Ok(raw)
    }
}

/// Lazy iterator over a plan's patches.
pub struct PatchIterator<'a> {
    slide: &'a SlidePyramid,
    plan: &'a PatchPlan,
    cursor: usize,
}

impl Iterator for PatchIterator<'_> {
    type Item = Result<RasterPatch, PatchError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.plan.len() {
            return None;
        }
        let r = load_patch(self.slide, self.plan, self.cursor);
        self.cursor += 1;
        Some(r)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.plan.len() - self.cursor;
        (n, Some(n))
    }
}

impl ExactSizeIterator for PatchIterator<'_> {}
