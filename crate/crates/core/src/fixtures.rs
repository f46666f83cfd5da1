//! Synthetic slides and a demo model bundle.
//!
//! Everything here is generated deterministically, so tests, examples and
//! the CLI's `demo-fixtures` command all see the same data.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use crate::aggregator::{AggregatorWeights, AttentionKind};
use crate::encoder::EncoderSpec;
use crate::geometry::Rect;
use crate::patching::PatchSpec;
use crate::slide::writer::{write_directory_pyramid, PyramidLevel};
use crate::zoo::{write_manifest, BundleFile, ModelManifest, ZooError, AGGREGATOR_ROLE, SCHEMA_VERSION};

pub const WHITE: [u8; 3] = [255, 255, 255];

/// Level-0 side of the blob slide.
pub const BLOB_SLIDE_SIDE: u32 = 4096;
/// The dark blob on the blob slide, in level-0 pixels.
pub const BLOB_RECT: Rect = Rect {
    x: 1024,
    y: 1024,
    w: 1000,
    h: 1000,
};
/// Blob color; its gray value is 96.
pub const BLOB_RGB: [u8; 3] = [150, 60, 140];

pub const FOUR_PATCH_SIDE: u32 = 512;
/// Tissue square on the four-patch slide.
pub const FOUR_PATCH_TISSUE: Rect = Rect {
    x: 32,
    y: 32,
    w: 448,
    h: 448,
};
/// Gray shade of each quadrant, row-major.
pub const FOUR_PATCH_SHADES: [u8; 4] = [50, 60, 70, 80];

pub const DEMO_MODEL_NAME: &str = "demo-blob";
pub const DEMO_EMBED_DIM: usize = 4;
pub const DEMO_PATCH_SIZE: u32 = 256;

/// A uniformly colored level.
pub fn constant_level(width: u32, height: u32, rgb: [u8; 3]) -> PyramidLevel {
    let n = width as usize * height as usize;
    PyramidLevel::new(width, height, rgb.repeat(n))
}

/// Paints `rect` (clipped to the level) with `rgb`.
pub fn fill_rect(level: &mut PyramidLevel, rect: Rect, rgb: [u8; 3]) {
    let x1 = rect.right().min(level.width as u64) as u32;
    let y1 = rect.bottom().min(level.height as u64) as u32;
    for y in rect.y.min(y1)..y1 {
        let row = y as usize * level.width as usize;
        for x in rect.x.min(x1)..x1 {
            let i = (row + x as usize) * 3;
            level.pixels[i..i + 3].copy_from_slice(&rgb);
        }
    }
}

/// Level 0 followed by successive box downsamples.
pub fn pyramid(level0: PyramidLevel, factors: &[u32]) -> Vec<PyramidLevel> {
    let mut levels = vec![level0];
    for &f in factors {
        let next = levels.last().unwrap().downsampled(f);
        levels.push(next);
    }
    levels
}

/// Isolated 2 x 2 black specks on the speck variant of the blob slide, in
/// level-0 pixels. At the default thumbnail size each is a single pixel.
pub const SPECKS: [(u32, u32); 3] = [(3000, 400), (400, 3000), (3500, 3500)];

/// White 4096 x 4096 slide with one dark blob, levels 4096, 1024 and 256.
/// With `specks`, the [`SPECKS`] are added to the background.
pub fn blob_levels(specks: bool) -> Vec<PyramidLevel> {
    let mut l0 = constant_level(BLOB_SLIDE_SIDE, BLOB_SLIDE_SIDE, WHITE);
    fill_rect(&mut l0, BLOB_RECT, BLOB_RGB);
    if specks {
        for (x, y) in SPECKS {
            fill_rect(&mut l0, Rect::square(x, y, 2), [0, 0, 0]);
        }
    }
    pyramid(l0, &[4, 4])
}

/// Tissue-free slide, levels 2048 and 512.
pub fn white_levels() -> Vec<PyramidLevel> {
    pyramid(constant_level(2048, 2048, WHITE), &[4])
}

/// 512 x 512 slide whose tissue square splits into four 256-pixel patches
/// of different shades. Levels 512 and 128.
pub fn four_patch_levels() -> Vec<PyramidLevel> {
    let mut l0 = constant_level(FOUR_PATCH_SIDE, FOUR_PATCH_SIDE, WHITE);
    let half = FOUR_PATCH_SIDE / 2;
    for (q, &shade) in FOUR_PATCH_SHADES.iter().enumerate() {
        let quadrant = Rect::square((q as u32 % 2) * half, (q as u32 / 2) * half, half);
        let t = FOUR_PATCH_TISSUE;
        let x0 = quadrant.x.max(t.x);
        let y0 = quadrant.y.max(t.y);
        let x1 = quadrant.right().min(t.right()) as u32;
        let y1 = quadrant.bottom().min(t.bottom()) as u32;
        fill_rect(&mut l0, Rect::new(x0, y0, x1 - x0, y1 - y0), [shade; 3]);
    }
    pyramid(l0, &[4])
}

pub fn write_blob_slide(dir: &Path) -> io::Result<()> {
    write_directory_pyramid(dir, &blob_levels(false), 256, None)
}

pub fn write_speck_blob_slide(dir: &Path) -> io::Result<()> {
    write_directory_pyramid(dir, &blob_levels(true), 256, None)
}

pub fn write_white_slide(dir: &Path) -> io::Result<()> {
    write_directory_pyramid(dir, &white_levels(), 256, None)
}

pub fn write_four_patch_slide(dir: &Path) -> io::Result<()> {
    write_directory_pyramid(dir, &four_patch_levels(), 256, None)
}

/// Handcrafted tanh-attention weights over reference-encoder features.
///
/// The classifier scores `positive` higher exactly when the attention
/// pooled feature mean is below 0.5, i.e. when the pooled patches are
/// darker than mid-gray.
pub fn demo_weights() -> AggregatorWeights {
    AggregatorWeights {
        embed_dim: DEMO_EMBED_DIM,
        attention_dim: 2,
        n_classes: 2,
        attention: AttentionKind::Tanh,
        v: vec![-1.0, -1.0, -1.0, -1.0, 0.5, -0.5, 0.5, -0.5],
        u: None,
        w: vec![1.5, 0.5],
        w_out: vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0],
        b_out: vec![-2.0, 2.0],
        class_names: demo_class_names(),
    }
}

pub fn demo_class_names() -> Vec<String> {
    vec!["negative".to_string(), "positive".to_string()]
}

const DEMO_README: &str = "\
# demo-blob

Demonstration bundle for the built-in reference encoder (4 band-mean
features on 256-pixel patches at native resolution). Predicts `positive`
when the attention-pooled patches are darker than mid-gray.
";

/// Writes the demo bundle (manifest, aggregator weights, README) into `dir`.
pub fn write_demo_bundle(dir: &Path) -> Result<ModelManifest, ZooError> {
    std::fs::create_dir_all(dir).map_err(|e| ZooError::Io {
        context: dir.display().to_string(),
        source: e,
    })?;
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| ZooError::Io {
            context: path.display().to_string(),
            source: e,
        })
    };
    let mut aggregator = serde_json::to_string_pretty(&demo_weights().to_document()).expect("weights serialize");
    aggregator.push('\n');
    write("aggregator.json", aggregator.as_bytes())?;
    write("README.md", DEMO_README.as_bytes())?;

    let file = |path: &str| BundleFile {
        path: path.to_string(),
        sha256: String::new(),
    };
    let manifest = ModelManifest {
        schema_version: SCHEMA_VERSION,
        model_name: DEMO_MODEL_NAME.to_string(),
        description: "Reference-encoder demo: dark tissue scores positive.".to_string(),
        encoder: EncoderSpec::reference(DEMO_EMBED_DIM, DEMO_PATCH_SIZE),
        patch: PatchSpec::new(DEMO_PATCH_SIZE),
        class_names: demo_class_names(),
        files: BTreeMap::from([
            (AGGREGATOR_ROLE.to_string(), file("aggregator.json")),
            ("readme".to_string(), file("README.md")),
        ]),
    };
    write_manifest(dir, manifest)
}
