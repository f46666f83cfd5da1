//! Specimen-level inference over whole-slide images.
//!
//! The pipeline opens a tiled slide pyramid, finds tissue on a thumbnail,
//! plans fixed-size patches inside it, embeds each patch with a pluggable
//! encoder and pools the embeddings with an attention MIL head into one
//! prediction per slide. Models ship as checksummed bundles that can be
//! loaded from disk or fetched over HTTP into a local cache.
//!
//! ```no_run
//! use slidespin::engine::{run_inference, RunOptions};
//! use slidespin::zoo::ModelRef;
//!
//! let model: ModelRef = "bundles/demo-blob".parse()?;
//! let outcome = run_inference("slide.tif".as_ref(), &model, &RunOptions::default())?;
//! println!("{} {:?}", outcome.report.predicted_class, outcome.report.result.probs);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod aggregator;
pub mod encoder;
pub mod engine;
pub mod fixtures;
pub mod geometry;
pub mod patching;
pub mod slide;
pub mod tissue;
pub mod zoo;

/// Guide chapters from `book/`, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/slides.md")]
    mod slides {}
    #[doc = include_str!("../../../book/src/tissue.md")]
    mod tissue {}
    #[doc = include_str!("../../../book/src/patching.md")]
    mod patching {}
    #[doc = include_str!("../../../book/src/encoders.md")]
    mod encoders {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/bundles.md")]
    mod bundles {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
