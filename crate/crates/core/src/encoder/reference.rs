use super::{EncoderError, PatchEncoder};
use crate::slide::RasterPatch;
use crate::tissue::gray_value;

/// Built-in weight-free encoder.
pub(crate) struct ReferenceEncoder {
    dim: usize,
}

impl ReferenceEncoder {
    pub fn new(dim: usize) -> Self {
        ReferenceEncoder { dim }
    }
}

impl PatchEncoder for ReferenceEncoder {
    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, patches: &[RasterPatch], _first_index: usize) -> Result<Vec<Vec<f32>>, EncoderError> {
        Ok(patches.iter().map(|p| reference_encode(p, self.dim)).collect())
    }
}

/// Mean gray level of `dim` horizontal bands, scaled to `[0, 1]`.
///
/// Bands are `height / dim` rows tall and the last band takes the
/// remainder. When `dim > height`, band `j < height` is row `j` and the
/// remaining features are 0.
pub fn reference_encode(patch: &RasterPatch, dim: usize) -> Vec<f32> {
    let h = patch.height as usize;
    let w = patch.width as usize;
    let row_sum = |y: usize| -> u64 {
        patch.pixels[y * w * 3..(y + 1) * w * 3]
            .chunks_exact(3)
            .map(|p| gray_value(p[0], p[1], p[2]) as u64)
            .sum()
    };
    let mut out = vec![0f32; dim];
    if h == 0 || w == 0 || dim == 0 {
        return out;
    }
    let bands: Vec<(usize, usize)> = if dim <= h {
        let band = h / dim;
        (0..dim)
            .map(|j| (j * band, if j + 1 == dim { h } else { (j + 1) * band }))
            .collect()
    } else {
        (0..h).map(|y| (y, y + 1)).collect()
    };
    for (j, (y0, y1)) in bands.into_iter().enumerate() {
        let sum: u64 = (y0..y1).map(row_sum).sum();
        let n = ((y1 - y0) * w) as f64;
        out[j] = (sum as f64 / n / 255.0) as f32;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_is_all_ones() {
        assert_eq!(
            reference_encode(&RasterPatch::filled(64, 64, [255; 3]), 4),
            vec![1.0; 4]
        );
    }

    #[test]
    fn top_black_bottom_white() {
        let mut p = RasterPatch::filled(64, 64, [255; 3]);
        p.pixels[..32 * 64 * 3].fill(0);
        assert_eq!(reference_encode(&p, 2), vec![0.0, 1.0]);
    }

    #[test]
    fn more_bands_than_rows() {
        let mut p = RasterPatch::filled(4, 2, [255; 3]);
        p.pixels[..4 * 3].fill(0);
        assert_eq!(reference_encode(&p, 4), vec![0.0, 1.0, 0.0, 0.0]);
    }
}
