use std::path::{Path, PathBuf};

use serde_json::Value;

use slidespin::engine::{
    export_geojson, run_inference, run_loaded, EngineError, LoadedModel, PatchOverrides, RunOptions, RunOutcome,
    INDETERMINATE, NO_TISSUE_WARNING,
};
use slidespin::fixtures::{self, BLOB_RECT};
use slidespin::geometry::Polygon;
use slidespin::zoo::ModelRef;

struct Setup {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Setup {
    fn new() -> Setup {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        fixtures::write_demo_bundle(&root.join("bundle")).unwrap();
        Setup { _tmp: tmp, root }
    }

    fn model(&self) -> ModelRef {
        ModelRef::Local(self.root.join("bundle"))
    }

    fn slide(&self, name: &str, write: fn(&Path) -> std::io::Result<()>) -> PathBuf {
        let p = self.root.join(name);
        write(&p).unwrap();
        p
    }
}

fn check_timing(out: &RunOutcome) {
    let d = out.report.durations_ms;
    for (name, v) in d.stages() {
        assert!(v >= 0.0 && v.is_finite(), "{name}: {v}");
    }
    assert!(d.total >= d.stage_max(), "{d:?}");
    assert!(d.total <= 1.25 * d.stage_sum(), "{d:?}");
}

#[test]
fn blob_slide_is_positive_and_deterministic() {
    let s = Setup::new();
    let slide = s.slide("blob", fixtures::write_blob_slide);
    let a = run_inference(&slide, &s.model(), &RunOptions::default()).unwrap();
    assert_eq!(a.report.predicted_class, "positive");
    assert_eq!(a.report.n_patches, 16);
    assert_eq!(a.report.result.attention.len(), 16);
    assert!(a.report.warnings.is_empty());
    for (name, d) in a.report.durations_ms.stages() {
        assert!(d > 0.0, "stage {name} took {d} ms");
    }
    check_timing(&a);

    let loaded = LoadedModel::load(&s.root.join("bundle")).unwrap();
    for (batch_size, threads) in [(1, Some(1)), (7, Some(4)), (32, None), (32, Some(1))] {
        let opts = RunOptions {
            batch_size,
            threads,
            ..Default::default()
        };
        let b = run_loaded(&slide, &loaded, &opts).unwrap();
        assert_eq!(
            b.report.result, a.report.result,
            "batch {batch_size} threads {threads:?}"
        );
        check_timing(&b);
    }
}

#[test]
fn white_slide_is_indeterminate() {
    let s = Setup::new();
    let slide = s.slide("white", fixtures::write_white_slide);
    let out = run_inference(&slide, &s.model(), &RunOptions::default()).unwrap();
    assert_eq!(out.report.n_patches, 0);
    assert_eq!(out.report.predicted_class, INDETERMINATE);
    assert_eq!(out.report.result.predicted_index, None);
    assert_eq!(out.report.result.probs, vec![0.5, 0.5]);
    assert_eq!(out.report.warnings, vec![NO_TISSUE_WARNING.to_string()]);
    check_timing(&out);
    let gj = out.geojson();
    assert_eq!(gj["type"], "FeatureCollection");
    assert_eq!(gj["features"].as_array().unwrap().len(), 0);
    assert_eq!(gj["properties"]["predicted_class"], INDETERMINATE);
    assert_eq!(
        gj["properties"]["class_names"],
        serde_json::json!(["negative", "positive"])
    );
}

fn assert_valid_geojson(gj: &Value, n_patches: usize) {
    let reparsed: Value = serde_json::from_str(&serde_json::to_string(gj).unwrap()).unwrap();
    assert_eq!(reparsed["type"], "FeatureCollection");
    let features = reparsed["features"].as_array().unwrap();
    assert_eq!(features.len(), n_patches);
    let mut total = 0.0;
    for (i, f) in features.iter().enumerate() {
        assert_eq!(f["type"], "Feature");
        assert_eq!(f["geometry"]["type"], "Polygon");
        let ring = f["geometry"]["coordinates"][0].as_array().unwrap();
        assert_eq!(ring.len(), 5);
        assert_eq!(ring[0], ring[4]);
        assert_eq!(f["properties"]["index"], i);
        total += f["properties"]["attention"].as_f64().unwrap();
    }
    if n_patches > 0 {
        assert!((total - 1.0).abs() <= 1e-6, "attention sum {total}");
    }
}

/// Compares JSON trees, allowing 1e-9 on numbers.
fn assert_json_close(got: &Value, want: &Value, path: &str) {
    match (got, want) {
        (Value::Number(a), Value::Number(b)) => {
            let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            assert!((a - b).abs() <= 1e-9, "{path}: {a} vs {b}");
        }
        (Value::Array(a), Value::Array(b)) => {
            assert_eq!(a.len(), b.len(), "{path}: length");
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                assert_json_close(x, y, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(a), Value::Object(b)) => {
            assert_eq!(
                a.keys().collect::<Vec<_>>(),
                b.keys().collect::<Vec<_>>(),
                "{path}: keys"
            );
            for (k, x) in a {
                assert_json_close(x, &b[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(got, want, "{path}"),
    }
}

#[test]
fn four_patch_geojson_matches_golden_file() {
    let s = Setup::new();
    let slide = s.slide("four", fixtures::write_four_patch_slide);
    let out = run_inference(&slide, &s.model(), &RunOptions::default()).unwrap();
    assert_eq!(out.report.n_patches, 4);
    let gj = out.geojson();
    assert_valid_geojson(&gj, 4);
    let ring = &gj["features"][0]["geometry"]["coordinates"][0];
    assert_eq!(
        ring,
        &serde_json::json!([[0, 0], [256, 0], [256, 256], [0, 256], [0, 0]])
    );

    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/four_patch.geojson");
    let rendered = serde_json::to_string_pretty(&gj).unwrap() + "\n";
    if std::env::var_os("SLIDESPIN_BLESS").is_some() {
        std::fs::write(&golden, &rendered).unwrap();
    }
    let want: Value = serde_json::from_str(&std::fs::read_to_string(&golden).unwrap()).unwrap();
    assert_json_close(&gj, &want, "$");
}

#[test]
fn geojson_length_mismatch() {
    let s = Setup::new();
    let slide = s.slide("four", fixtures::write_four_patch_slide);
    let out = run_inference(&slide, &s.model(), &RunOptions::default()).unwrap();
    let mut result = out.report.result.clone();
    result.attention.pop();
    assert!(export_geojson(&out.plan, &result, &out.report).is_err());
    assert_valid_geojson(&out.geojson(), out.report.n_patches);
}

#[test]
fn covering_region_equals_unrestricted_run() {
    let s = Setup::new();
    let slide = s.slide("blob", fixtures::write_blob_slide);
    let loaded = LoadedModel::load(&s.root.join("bundle")).unwrap();
    let full = run_loaded(&slide, &loaded, &RunOptions::default()).unwrap();

    let (x0, y0) = (BLOB_RECT.x as f64 - 50.0, BLOB_RECT.y as f64 - 50.0);
    let (x1, y1) = (BLOB_RECT.right() as f64 + 300.0, BLOB_RECT.bottom() as f64 + 300.0);
    let bbox = Polygon::new(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)]).unwrap();
    let opts = RunOptions {
        region: Some(bbox),
        ..Default::default()
    };
    let restricted = run_loaded(&slide, &loaded, &opts).unwrap();
    assert_eq!(restricted.report.result, full.report.result);
    assert!(restricted.report.parameters.region_restricted);

    // Only the top-left 2x2 block of patch centers lies inside this square.
    let corner = Polygon::new(&[(1024.0, 1024.0), (1536.0, 1024.0), (1536.0, 1536.0), (1024.0, 1536.0)]).unwrap();
    let part = run_loaded(
        &slide,
        &loaded,
        &RunOptions {
            region: Some(corner),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(part.report.n_patches, 4);
}

#[test]
fn option_errors_are_input_errors() {
    let s = Setup::new();
    let slide = s.slide("four", fixtures::write_four_patch_slide);
    let bad_batch = RunOptions {
        batch_size: 0,
        ..Default::default()
    };
    let err = run_inference(&slide, &s.model(), &bad_batch).unwrap_err();
    assert!(matches!(err, EngineError::Options(_)) && err.is_input_error());

    let err = run_inference(&s.root.join("missing.tif"), &s.model(), &RunOptions::default()).unwrap_err();
    assert_eq!(err.stage(), "open");
    assert!(err.is_input_error());

    let err = run_inference(&slide, &ModelRef::Local(s.root.join("nope")), &RunOptions::default()).unwrap_err();
    assert_eq!(err.stage(), "resolve");
    assert!(err.is_input_error());
}

#[test]
fn patch_size_override_on_reference_encoder() {
    let s = Setup::new();
    let slide = s.slide("four", fixtures::write_four_patch_slide);
    let opts = RunOptions {
        overrides: PatchOverrides {
            patch_size_px: Some(128),
            tissue_threshold: Some(0.9),
            ..Default::default()
        },
        ..Default::default()
    };
    let out = run_inference(&slide, &s.model(), &opts).unwrap();
    assert_eq!(out.report.parameters.patch.patch_size_px, 128);
    assert_eq!(out.report.parameters.encoder.input_size, 128);
    // Interior 128-px cells fully inside the tissue square [32, 480).
    assert_eq!(out.report.n_patches, 4);
}
