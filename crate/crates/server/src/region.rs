//! Region-of-interest parsing from GeoJSON.

use serde_json::Value;
use slidespin::geometry::{Polygon, PolygonError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegionError {
    #[error("region must be a GeoJSON Polygon or a Feature with Polygon geometry")]
    NotAPolygon,
    #[error("region polygons with holes are not supported")]
    Holes,
    #[error("region coordinates must be [x, y] number pairs in level-0 pixels")]
    BadCoordinates,
    #[error("invalid region: {0}")]
    Invalid(#[from] PolygonError),
}

/// Accepts a Polygon geometry or a Feature wrapping one. Coordinates are
/// level-0 pixels; the outer ring may be open or closed.
pub fn parse_region(value: &Value) -> Result<Polygon, RegionError> {
    let geometry = match value.get("type").and_then(Value::as_str) {
        Some("Feature") => value.get("geometry").ok_or(RegionError::NotAPolygon)?,
        Some("Polygon") => value,
        _ => return Err(RegionError::NotAPolygon),
    };
    if geometry.get("type").and_then(Value::as_str) != Some("Polygon") {
        return Err(RegionError::NotAPolygon);
    }
    let rings = geometry
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or(RegionError::BadCoordinates)?;
    match rings.len() {
        0 => return Err(RegionError::BadCoordinates),
        1 => {}
        _ => return Err(RegionError::Holes),
    }
    let ring = rings[0]
        .as_array()
        .ok_or(RegionError::BadCoordinates)?
        .iter()
        .map(|p| match p.as_array().map(Vec::as_slice) {
            Some([x, y]) => Some((x.as_f64()?, y.as_f64()?)),
            _ => None,
        })
        .collect::<Option<Vec<_>>>()
        .ok_or(RegionError::BadCoordinates)?;
    Ok(Polygon::new(&ring)?)
}
