//! `slidespin` command-line tool.
//!
//! Exit codes: 0 success, 1 input error (bad slide, bundle or option),
//! 2 pipeline error (network, I/O or backend failure during a run).

mod labels;
mod run;

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use slidespin::encoder::DEFAULT_BATCH_SIZE;
use slidespin::engine::compute_metrics;
use slidespin::tissue::DEFAULT_THUMBNAIL_MAX_DIM;
use slidespin::zoo::{default_cache_dir, resolve_model, verify_bundle, ModelRef, ZooError};

#[derive(Parser)]
#[command(
    name = "slidespin",
    version,
    about = "Specimen-level inference on whole-slide images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a model on one slide or every slide in a directory.
    Run(RunArgs),
    /// Resolve a bundle and check its manifest, checksums and weights.
    Verify {
        #[arg(long)]
        model: String,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Classification metrics from prediction and truth CSV files.
    Metrics {
        /// CSV with `slide_id` and `predicted_class` (or `label`) columns.
        #[arg(long)]
        pred: PathBuf,
        /// CSV with `slide_id` and `label` columns.
        #[arg(long)]
        truth: PathBuf,
        /// Name of the positive class.
        #[arg(long)]
        positive: String,
    },
    /// Serve slides, tiles, models and inference jobs over HTTP.
    Serve {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        slides: PathBuf,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
        batch_size: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write the synthetic demo slides and demo model bundle.
    DemoFixtures { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// A slide file or directory pyramid.
    #[arg(long, conflicts_with = "wsi_dir", required_unless_present = "wsi_dir")]
    wsi: Option<PathBuf>,
    /// Run every slide in this directory; writes JSON lines plus a CSV summary.
    #[arg(long)]
    wsi_dir: Option<PathBuf>,
    /// Bundle directory or base URL.
    #[arg(long)]
    model: String,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Batch mode CSV summary path; defaults to the output path with a `.csv` extension.
    #[arg(long, requires = "wsi_dir")]
    summary: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    patch_size: Option<u32>,
    #[arg(long)]
    tissue_threshold: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    /// Embedding worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_THUMBNAIL_MAX_DIM)]
    thumbnail_max_dim: u32,
    /// Write the tissue mask as a binary PGM (single-slide mode).
    #[arg(long, conflicts_with = "wsi_dir")]
    dump_mask: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Geojson,
}

/// A failure tagged with its exit code.
pub struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 1,
            error: error.into(),
        }
    }

    pub fn pipeline(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 2,
            error: error.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(args) => run::run(args),
        Command::Verify { model, cache_dir } => verify(&model, cache_dir),
        Command::Metrics { pred, truth, positive } => metrics(&pred, &truth, &positive),
        Command::Serve {
            models,
            slides,
            port,
            host,
            batch_size,
            threads,
        } => serve(models, slides, SocketAddr::new(host, port), batch_size, threads),
        Command::DemoFixtures { dir } => demo_fixtures(&dir),
    }
}

fn zoo_failure(e: ZooError) -> Failure {
    match e {
        ZooError::Fetch { .. } | ZooError::Io { .. } => Failure::pipeline(e),
        _ => Failure::input(e),
    }
}

fn verify(model: &str, cache_dir: Option<PathBuf>) -> Result<(), Failure> {
    let model: ModelRef = model.parse().map_err(Failure::input)?;
    let dir = resolve_model(&model, &cache_dir.unwrap_or_else(default_cache_dir)).map_err(zoo_failure)?;
    match verify_bundle(&dir) {
        Ok(bundle) => {
            let m = &bundle.manifest;
            println!("ok {} ({})", m.model_name, dir.display());
            println!(
                "encoder {} dim {} input {}",
                m.encoder.encoder_id, m.encoder.embed_dim, m.encoder.input_size
            );
            println!("classes {}", m.class_names.join(", "));
            for (role, file) in &m.files {
                println!("{role}: {} sha256 {}", file.path, file.sha256);
            }
            Ok(())
        }
        Err(e) => {
            for problem in e.problems() {
                eprintln!("problem: {problem}");
            }
            Err(Failure::input(anyhow::anyhow!(
                "bundle {} failed verification",
                dir.display()
            )))
        }
    }
}

fn metrics(pred: &std::path::Path, truth: &std::path::Path, positive: &str) -> Result<(), Failure> {
    let pred = labels::read_labels(pred, &["predicted_class", "label"]).map_err(Failure::input)?;
    let truth = labels::read_labels(truth, &["label"]).map_err(Failure::input)?;
    let (p, t) = labels::binary_pairs(&pred, &truth, positive).map_err(Failure::input)?;
    let m = compute_metrics(&p, &t, 1).map_err(Failure::input)?;
    println!("{}", serde_json::to_string_pretty(&m).map_err(Failure::pipeline)?);
    Ok(())
}

fn serve(
    models: PathBuf,
    slides: PathBuf,
    addr: SocketAddr,
    batch_size: usize,
    threads: Option<usize>,
) -> Result<(), Failure> {
    use slidespin::engine::RunOptions;
    use slidespin_server::Service;

    if batch_size == 0 {
        return Err(Failure::input(anyhow::anyhow!("--batch-size must be at least 1")));
    }
    let service = Service::new(&models, &slides)
        .map_err(Failure::input)?
        .with_run_options(RunOptions {
            batch_size,
            threads,
            ..RunOptions::default()
        });
    for skipped in service.skipped_models() {
        eprintln!("skipping model {}: {}", skipped.dir.display(), skipped.reason);
    }
    eprintln!(
        "serving {} slides and {} models on http://{addr}",
        service.slide_ids().count(),
        service.model_names().count()
    );
    let runtime = tokio::runtime::Runtime::new().map_err(Failure::pipeline)?;
    runtime
        .block_on(slidespin_server::serve(service, addr))
        .map_err(Failure::pipeline)
}

fn demo_fixtures(dir: &std::path::Path) -> Result<(), Failure> {
    use slidespin::fixtures;

    let slides = dir.join("slides");
    let write = |name: &str, f: fn(&std::path::Path) -> std::io::Result<()>| {
        f(&slides.join(name))
            .map_err(|e| Failure::pipeline(anyhow::Error::new(e).context(format!("writing slide {name}"))))
    };
    write("blob", fixtures::write_blob_slide)?;
    write("white", fixtures::write_white_slide)?;
    write("four-patch", fixtures::write_four_patch_slide)?;
    let bundle = dir.join("models").join(fixtures::DEMO_MODEL_NAME);
    fixtures::write_demo_bundle(&bundle).map_err(Failure::pipeline)?;
    println!("slides: {}", slides.display());
    println!("model:  {}", bundle.display());
    Ok(())
}
