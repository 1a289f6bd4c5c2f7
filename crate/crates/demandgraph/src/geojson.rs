//! Region outlines from GeoJSON (`Polygon`, `MultiPolygon`, `Feature` or
//! `FeatureCollection`; the first outer ring found is used).

use std::path::Path;

use demandgraph_core::geo::{LatLon, Polygon};
use serde_json::Value;

use crate::error::{AppError, Result};

fn ring_from(value: &Value) -> Option<Vec<LatLon>> {
    value
        .as_array()?
        .iter()
        .map(|p| {
            let p = p.as_array()?;
            // GeoJSON positions are [lon, lat]
            Some(LatLon::new(p.get(1)?.as_f64()?, p.first()?.as_f64()?))
        })
        .collect()
}

fn outer_ring(value: &Value) -> Option<Vec<LatLon>> {
    match value.get("type")?.as_str()? {
        "Polygon" => ring_from(value.get("coordinates")?.get(0)?),
        "MultiPolygon" => ring_from(value.get("coordinates")?.get(0)?.get(0)?),
        "Feature" => outer_ring(value.get("geometry")?),
        "FeatureCollection" => value.get("features")?.as_array()?.iter().find_map(outer_ring),
        _ => None,
    }
}

pub fn parse_polygon(text: &str) -> Result<Polygon> {
    let value: Value = serde_json::from_str(text).map_err(|e| AppError::corrupt("<geojson>", e))?;
    let ring = outer_ring(&value).ok_or_else(|| AppError::corrupt("<geojson>", "no polygon geometry found"))?;
    Ok(Polygon::new(ring)?)
}

pub fn read_polygon(path: &Path) -> Result<Polygon> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    parse_polygon(&text).map_err(|e| match e {
        AppError::Corrupt { detail, .. } => AppError::corrupt(path, detail),
        other => other,
    })
}

pub fn polygon_to_geojson(polygon: &Polygon) -> Value {
    let mut ring: Vec<Value> = polygon.vertices().iter().map(|v| serde_json::json!([v.lon, v.lat])).collect();
    if let Some(first) = ring.first().cloned() {
        ring.push(first);
    }
    serde_json::json!({ "type": "Polygon", "coordinates": [ring] })
}
