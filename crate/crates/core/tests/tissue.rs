mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slidespin::fixtures::{self, BLOB_RECT, BLOB_SLIDE_SIDE, SPECKS};
use slidespin::geometry::Rect;
use slidespin::slide::open_slide;
use slidespin::tissue::{detect_tissue, otsu_threshold, GrayHistogram, TissueMask, DEFAULT_THUMBNAIL_MAX_DIM};
use support::oracles;

#[test]
fn otsu_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0751);
    for i in 0..100 {
        let counts = oracles::random_histogram(&mut rng);
        let got = otsu_threshold(&GrayHistogram::from_counts(counts)).unwrap();
        assert_eq!(got, oracles::otsu(&counts), "histogram {i}: {counts:?}");
    }
}

#[test]
fn otsu_examples() {
    let mut counts = [0u64; 256];
    counts[10] = 100;
    counts[200] = 100;
    assert_eq!(otsu_threshold(&GrayHistogram::from_counts(counts)).unwrap(), 10);
    let mut counts = [0u64; 256];
    counts[77] = 5000;
    assert_eq!(otsu_threshold(&GrayHistogram::from_counts(counts)).unwrap(), 0);
}

fn blob_mask(specks: bool) -> TissueMask {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("blob");
    if specks {
        fixtures::write_speck_blob_slide(&dir).unwrap();
    } else {
        fixtures::write_blob_slide(&dir).unwrap();
    }
    detect_tissue(&open_slide(&dir).unwrap(), DEFAULT_THUMBNAIL_MAX_DIM).unwrap()
}

#[test]
fn blob_area_within_five_percent() {
    let mask = blob_mask(false);
    assert_eq!((mask.width, mask.height), (2048, 2048));
    assert_eq!((mask.scale_x, mask.scale_y), (2.0, 2.0));
    let expected = (BLOB_RECT.w as f64 / mask.scale_x) * (BLOB_RECT.h as f64 / mask.scale_y);
    let got = mask.tissue_pixels() as f64;
    assert!((got - expected).abs() <= 0.05 * expected, "tissue {got} vs {expected}");
    assert!(mask.threshold_used >= 96 && mask.threshold_used < 255);
}

#[test]
fn specks_are_removed() {
    let mask = blob_mask(true);
    for (x, y) in SPECKS {
        let (mx, my) = ((x as f64 / mask.scale_x) as u32, (y as f64 / mask.scale_y) as u32);
        for dy in 0..2 {
            for dx in 0..2 {
                assert!(!mask.get(mx + dx, my + dy), "speck at ({x}, {y}) survived");
            }
        }
    }
    assert_eq!(mask, blob_mask(false));
}

#[test]
fn white_slide_has_no_tissue() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("white");
    fixtures::write_white_slide(&dir).unwrap();
    let mask = detect_tissue(&open_slide(&dir).unwrap(), DEFAULT_THUMBNAIL_MAX_DIM).unwrap();
    assert_eq!(mask.threshold_used, 0);
    assert!(mask.fraction() <= 0.01);
}

#[test]
fn detection_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("four");
    fixtures::write_four_patch_slide(&dir).unwrap();
    let slide = open_slide(&dir).unwrap();
    let a = detect_tissue(&slide, 256).unwrap();
    let b = detect_tissue(&slide, 256).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fraction_examples_on_blob_mask() {
    let mask = blob_mask(false);
    let inside = Rect::square(1200, 1200, 256);
    let outside = Rect::square(3000, 3000, 256);
    assert_eq!(mask.tissue_fraction(inside), 1.0);
    assert_eq!(mask.tissue_fraction(outside), 0.0);
    // Left edge of the blob at x = 1024 splits this rect down the middle.
    let side = 256;
    let straddle = Rect::square(BLOB_RECT.x - side / 2, 1300, side);
    let f = mask.tissue_fraction(straddle);
    assert!((f - 0.5).abs() <= 2.0 / side as f64, "fraction {f}");
    assert_eq!(mask.tissue_fraction(Rect::square(BLOB_SLIDE_SIDE + 10, 0, 64)), 0.0);
}

#[test]
fn fraction_matches_pixel_overlap_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..40 {
        use rand::Rng;
        let (mw, mh) = (rng.random_range(5..60), rng.random_range(5..60));
        let level0 = (rng.random_range(mw..mw * 13), rng.random_range(mh..mh * 13));
        let mask = oracles::random_mask(&mut rng, mw, mh, level0);
        for _ in 0..50 {
            let rect = Rect::new(
                rng.random_range(0..level0.0 + 20),
                rng.random_range(0..level0.1 + 20),
                rng.random_range(1..200),
                rng.random_range(1..200),
            );
            assert_eq!(
                mask.tissue_fraction(rect),
                oracles::tissue_fraction(&mask, level0, rect),
                "{rect:?}"
            );
        }
    }
}
