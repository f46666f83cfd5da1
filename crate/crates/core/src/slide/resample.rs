use super::RasterPatch;

/// Area-average resize. Each output pixel is the rounded mean of the source
/// box `[floor(o * s / t), floor((o + 1) * s / t))` in each axis (at least
/// one source pixel wide).
pub fn box_resize(src: &RasterPatch, width: u32, height: u32) -> RasterPatch {
    assert!(width > 0 && height > 0, "box_resize target must be non-empty");
    if src.width == width && src.height == height {
        return src.clone();
    }
    let xs = box_bounds(src.width, width);
    let ys = box_bounds(src.height, height);
    let sw = src.width as usize;
    let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
    // Column sums for the current row band, reused across output columns.
    let mut col = vec![0u64; sw * 3];
    for &(y0, y1) in &ys {
        col.iter_mut().for_each(|c| *c = 0);
        for y in y0..y1 {
            let row = &src.pixels[y as usize * sw * 3..(y as usize + 1) * sw * 3];
            for (c, &v) in col.iter_mut().zip(row) {
                *c += v as u64;
            }
        }
        let rows = (y1 - y0) as u64;
        for &(x0, x1) in &xs {
            let n = rows * (x1 - x0) as u64;
            for ch in 0..3 {
                let mut sum = 0u64;
                for x in x0..x1 {
                    sum += col[x as usize * 3 + ch];
                }
                pixels.push(((sum + n / 2) / n) as u8);
            }
        }
    }
    RasterPatch {
        width,
        height,
        pixels,
        origin_level0: src.origin_level0,
        level: src.level,
    }
}

fn box_bounds(src: u32, dst: u32) -> Vec<(u32, u32)> {
    (0..dst as u64)
        .map(|o| {
            let a = (o * src as u64 / dst as u64) as u32;
            let b = ((o + 1) * src as u64 / dst as u64) as u32;
            let b = b.max(a + 1).min(src);
            (a.min(src - 1), b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let p = RasterPatch::filled(448, 448, [12, 200, 77]);
        let r = box_resize(&p, 224, 224);
        assert_eq!(r.pixels.len(), 224 * 224 * 3);
        assert!(r.pixels.chunks(3).all(|c| c == [12, 200, 77]));
        let odd = box_resize(&p, 100, 37);
        assert!(odd.pixels.chunks(3).all(|c| c == [12, 200, 77]));
    }

    #[test]
    fn halving_averages_2x2_blocks() {
        let mut p = RasterPatch::filled(2, 2, [0, 0, 0]);
        p.pixels = vec![0, 0, 0, 100, 100, 100, 200, 200, 200, 255, 255, 255];
        let r = box_resize(&p, 1, 1);
        // (0 + 100 + 200 + 255) / 4 = 138.75 -> 139
        assert_eq!(r.pixels, vec![139, 139, 139]);
    }

    #[test]
    fn boxes_cover_source_exactly_when_shrinking() {
        for (s, d) in [(10u32, 3u32), (4096, 2048), (1100, 7), (5, 5)] {
            let b = box_bounds(s, d);
            assert_eq!(b[0].0, 0);
            assert_eq!(b.last().unwrap().1, s);
            for w in b.windows(2) {
                assert_eq!(w[0].1, w[1].0);
            }
        }
    }
}
