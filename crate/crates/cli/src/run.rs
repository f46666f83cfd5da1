//! The `run` command: single slide or batch over a directory.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde_json::{json, Value};

use slidespin::engine::{
    discover_slides, run_inference, run_loaded, EngineError, LoadedModel, PatchOverrides, RunOptions, RunOutcome,
};
use slidespin::zoo::{default_cache_dir, resolve_model, ModelRef};

use crate::{zoo_failure, Failure, Format, RunArgs};

fn engine_failure(e: EngineError) -> Failure {
    if e.is_input_error() {
        Failure::input(e)
    } else {
        Failure::pipeline(e)
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p)
                .with_context(|| format!("creating {}", p.display()))
                .map_err(Failure::input)?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn rendered(outcome: &RunOutcome, format: Format) -> Value {
    match format {
        Format::Json => serde_json::to_value(&outcome.report).expect("report serializes"),
        Format::Geojson => outcome.geojson(),
    }
}

pub fn run(args: RunArgs) -> Result<(), Failure> {
    let model: ModelRef = args.model.parse().map_err(Failure::input)?;
    let options = RunOptions {
        overrides: PatchOverrides {
            patch_size_px: args.patch_size,
            tissue_threshold: args.tissue_threshold,
            ..PatchOverrides::default()
        },
        batch_size: args.batch_size,
        threads: args.threads,
        thumbnail_max_dim: args.thumbnail_max_dim,
        region: None,
        cache_dir: args.cache_dir.clone(),
    };
    match (&args.wsi, &args.wsi_dir) {
        (Some(wsi), _) => single(wsi, &model, &options, &args),
        (None, Some(dir)) => batch(dir, &model, &options, &args),
        (None, None) => Err(Failure::input(anyhow!("pass --wsi or --wsi-dir"))),
    }
}

fn single(wsi: &Path, model: &ModelRef, options: &RunOptions, args: &RunArgs) -> Result<(), Failure> {
    let outcome = run_inference(wsi, model, options).map_err(engine_failure)?;
    for w in &outcome.report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &args.dump_mask {
        std::fs::write(path, outcome.mask.to_pgm())
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::pipeline)?;
    }
    let mut out = output(args.out.as_deref())?;
    let text = serde_json::to_string_pretty(&rendered(&outcome, args.format)).expect("json");
    writeln!(out, "{text}")
        .and_then(|_| out.flush())
        .map_err(Failure::pipeline)?;
    Ok(())
}

fn summary_path(args: &RunArgs) -> Option<PathBuf> {
    args.summary
        .clone()
        .or_else(|| args.out.as_ref().map(|o| o.with_extension("csv")))
}

fn batch(dir: &Path, model: &ModelRef, options: &RunOptions, args: &RunArgs) -> Result<(), Failure> {
    let slides = discover_slides(dir)
        .with_context(|| format!("listing {}", dir.display()))
        .map_err(Failure::input)?;
    if slides.is_empty() {
        return Err(Failure::input(anyhow!("no slides found in {}", dir.display())));
    }
    let cache = options.cache_dir.clone().unwrap_or_else(default_cache_dir);
    let bundle = resolve_model(model, &cache).map_err(zoo_failure)?;
    let loaded = LoadedModel::load(&bundle).map_err(zoo_failure)?;
    let classes = loaded.manifest.class_names.clone();

    let summary_target = summary_path(args);
    if summary_target.is_some() && summary_target == args.out {
        return Err(Failure::input(anyhow!("--summary and --out must differ")));
    }
    let mut lines = output(args.out.as_deref())?;
    let mut summary = match &summary_target {
        Some(p) => csv::Writer::from_writer(output(Some(p))?),
        None => csv::Writer::from_writer(Box::new(io::stderr()) as Box<dyn Write>),
    };
    let mut header = vec!["slide_id".to_string(), "predicted_class".to_string()];
    header.extend(classes.iter().map(|c| format!("prob_{c}")));
    header.extend(["n_patches", "total_ms", "error"].map(String::from));
    summary.write_record(&header).map_err(Failure::pipeline)?;

    let mut worst: Option<Failure> = None;
    let mut failed = 0;
    for (id, path) in &slides {
        let (line, row) = match run_loaded(path, &loaded, options) {
            Ok(outcome) => {
                let mut value = rendered(&outcome, args.format);
                tag(&mut value, id, args.format);
                let r = &outcome.report;
                let mut row = vec![id.clone(), r.predicted_class.clone()];
                row.extend(r.result.probs.iter().map(|p| p.to_string()));
                row.extend([
                    r.n_patches.to_string(),
                    format!("{:.3}", r.durations_ms.total),
                    String::new(),
                ]);
                (value, row)
            }
            Err(e) => {
                eprintln!("{id}: {e}");
                let line = json!({"slide_id": id, "slide_path": path, "stage": e.stage(), "error": e.to_string()});
                let mut row = vec![id.clone(), String::new()];
                row.extend(classes.iter().map(|_| String::new()));
                row.extend([String::new(), String::new(), e.to_string()]);
                failed += 1;
                let f = engine_failure(e);
                if worst.as_ref().is_none_or(|w| f.code > w.code) {
                    worst = Some(f);
                }
                (line, row)
            }
        };
        writeln!(lines, "{line}").map_err(Failure::pipeline)?;
        summary.write_record(&row).map_err(Failure::pipeline)?;
    }
    lines.flush().map_err(Failure::pipeline)?;
    summary.flush().map_err(Failure::pipeline)?;
    match worst {
        Some(f) => Err(Failure {
            error: anyhow!("{failed} of {} slides failed, first worst: {:#}", slides.len(), f.error),
            ..f
        }),
        None => Ok(()),
    }
}

/// Adds the slide id to a JSON-lines record.
fn tag(value: &mut Value, id: &str, format: Format) {
    let target = match format {
        Format::Json => Some(value),
        Format::Geojson => value.get_mut("properties"),
    };
    if let Some(Value::Object(map)) = target {
        map.insert("slide_id".to_string(), json!(id));
    }
}
