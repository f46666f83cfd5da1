//! Patch attention export as a GeoJSON FeatureCollection in level-0 pixels.

use serde_json::{json, Value};

use super::RunReport;
use crate::aggregator::InferenceResult;
use crate::patching::PatchPlan;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GeoJsonError {
    #[error("plan has {patches} patches but result has {attention} attention weights")]
    LengthMismatch { patches: usize, attention: usize },
}

/// One square polygon per patch, carrying `index`, `attention` and
/// `tissue_fraction`. Rings are closed and wound as listed, without
/// enforcing the right-hand rule.
pub fn export_geojson(plan: &PatchPlan, result: &InferenceResult, report: &RunReport) -> Result<Value, GeoJsonError> {
    if plan.len() != result.attention.len() {
        return Err(GeoJsonError::LengthMismatch {
            patches: plan.len(),
            attention: result.attention.len(),
        });
    }
    let features: Vec<Value> = plan
        .patches
        .iter()
        .zip(&result.attention)
        .enumerate()
        .map(|(index, (p, &attention))| {
            let (x0, y0) = (p.rect.x as u64, p.rect.y as u64);
            let (x1, y1) = (x0 + p.rect.w as u64, y0 + p.rect.h as u64);
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]],
                },
                "properties": {
                    "index": index,
                    "attention": attention,
                    "tissue_fraction": p.tissue_fraction,
                },
            })
        })
        .collect();
    Ok(json!({
        "type": "FeatureCollection",
        "properties": {
            "model_name": report.model_name,
            "predicted_class": report.predicted_class,
            "probs": result.probs,
            "class_names": result.class_names,
        },
        "features": features,
    }))
}
