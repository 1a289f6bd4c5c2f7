//! Canonical trip records and region clipping.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geo::{LatLon, Polygon};

/// One validated pickup event; timestamps are UTC unix seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub pickup_time: i64,
    pub pickup: LatLon,
    pub dropoff: Option<LatLon>,
    pub dropoff_time: Option<i64>,
}

impl TripRecord {
    pub fn pickup_only(pickup_time: i64, lat: f64, lon: f64) -> Self {
        Self { pickup_time, pickup: LatLon::new(lat, lon), dropoff: None, dropoff_time: None }
    }

    /// Checks coordinate ranges and time ordering.
    pub fn is_valid(&self) -> bool {
        self.pickup.is_valid()
            && self.dropoff.is_none_or(|d| d.is_valid())
            && self.dropoff_time.is_none_or(|t| t >= self.pickup_time)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDataset {
    pub region_id: String,
    pub polygon: Polygon,
    pub trips: Vec<TripRecord>,
    /// Offset of the region's local time from UTC, in minutes.
    pub utc_offset_min: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClipReport {
    pub retained: usize,
    pub dropped: usize,
}

/// Splits trips into those whose pickup is inside (or on) `polygon` and the rest.
pub fn partition_by_polygon<I>(trips: I, polygon: &Polygon) -> (Vec<TripRecord>, Vec<TripRecord>)
where
    I: IntoIterator<Item = TripRecord>,
{
    trips.into_iter().partition(|t| polygon.contains(t.pickup))
}

pub fn clip_to_region<I>(
    region_id: impl Into<String>,
    trips: I,
    polygon: Polygon,
    utc_offset_min: i32,
) -> Result<(RegionDataset, ClipReport)>
where
    I: IntoIterator<Item = TripRecord>,
{
    // Re-validate so a polygon built by hand cannot slip through degenerate.
    let polygon = Polygon::new(polygon.vertices().to_vec())?;
    let (retained, dropped) = partition_by_polygon(trips, &polygon);
    let report = ClipReport { retained: retained.len(), dropped: dropped.len() };
    Ok((RegionDataset { region_id: region_id.into(), polygon, trips: retained, utc_offset_min }, report))
}
