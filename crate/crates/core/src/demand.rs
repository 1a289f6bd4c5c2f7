//! Per-cell, per-slot pickup counts.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellId, HexGrid};
use crate::time::SlotClock;
use crate::trip::RegionDataset;

/// Pickup counts indexed `[cell, slot]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandTensor {
    pub region_id: String,
    pub clock: SlotClock,
    cells: usize,
    slots: usize,
    values: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountReport {
    pub counted: usize,
    pub outside_window: usize,
}

impl DemandTensor {
    pub fn zeros(region_id: impl Into<String>, clock: SlotClock, cells: usize, slots: usize) -> Self {
        Self { region_id: region_id.into(), clock, cells, slots, values: vec![0; cells * slots] }
    }

    pub fn from_values(
        region_id: impl Into<String>,
        clock: SlotClock,
        cells: usize,
        slots: usize,
        values: Vec<u32>,
    ) -> Result<Self> {
        if values.len() != cells * slots {
            return Err(Error::contract("demand tensor size does not match cells x slots"));
        }
        Ok(Self { region_id: region_id.into(), clock, cells, slots, values })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    #[inline]
    pub fn get(&self, cell: CellId, slot: usize) -> u32 {
        self.values[cell * self.slots + slot]
    }

    #[inline]
    pub fn add(&mut self, cell: CellId, slot: usize, n: u32) {
        self.values[cell * self.slots + slot] += n;
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn total(&self) -> u64 {
        self.values.iter().map(|&v| u64::from(v)).sum()
    }

    pub fn max(&self) -> u32 {
        self.values.iter().copied().max().unwrap_or(0)
    }

    /// Counts of every cell at `slot`.
    pub fn slot_column(&self, slot: usize) -> Vec<u32> {
        (0..self.cells).map(|c| self.get(c, slot)).collect()
    }

    /// Iterates non-zero entries as `(cell, slot, count)`.
    pub fn nonzero(&self) -> impl Iterator<Item = (CellId, usize, u32)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .map(move |(i, &v)| (i / self.slots, i % self.slots, v))
    }
}

/// Counts pickups per `(cell, slot)` over `slots` slots from `clock.epoch`.
/// Trips outside the window are excluded and reported.
pub fn count_demand(
    region: &RegionDataset,
    grid: &HexGrid,
    clock: SlotClock,
    slots: usize,
) -> Result<(DemandTensor, CountReport)> {
    let mut tensor = DemandTensor::zeros(region.region_id.clone(), clock, grid.len(), slots);
    let mut report = CountReport::default();
    for trip in &region.trips {
        let k = match clock.bin(trip.pickup_time) {
            Ok(k) if k.0 < slots => k.0,
            Ok(_) | Err(Error::BeforeEpoch { .. }) => {
                report.outside_window += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let cell = grid.locate(trip.pickup.lat, trip.pickup.lon)?;
        tensor.add(cell, k, 1);
        report.counted += 1;
    }
    Ok((tensor, report))
}

/// Number of whole slots from `clock.epoch` through the last pickup.
pub fn slots_covering(region: &RegionDataset, clock: &SlotClock) -> usize {
    region
        .trips
        .iter()
        .filter_map(|t| clock.bin(t.pickup_time).ok())
        .map(|k| k.0 + 1)
        .max()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Polygon;
    use crate::trip::TripRecord;

    fn setup(trips: Vec<TripRecord>) -> (RegionDataset, HexGrid, SlotClock) {
        let polygon = Polygon::rectangle(40.70, -74.02, 40.80, -73.90).unwrap();
        let grid = HexGrid::build(&polygon, 1.4).unwrap();
        let region = RegionDataset { region_id: "nyc".into(), polygon, trips, utc_offset_min: 0 };
        (region, grid, SlotClock::new(0, 30, 0).unwrap())
    }

    #[test]
    fn empty_trips_give_zero_tensor() {
        let (region, grid, clock) = setup(Vec::new());
        let (t, report) = count_demand(&region, &grid, clock, 4).unwrap();
        assert_eq!(t.total(), 0);
        assert_eq!(t.cells(), grid.len());
        assert_eq!(report, CountReport::default());
    }

    #[test]
    fn same_cell_and_slot_accumulate() {
        let trips = vec![TripRecord::pickup_only(60, 40.75, -73.96); 3];
        let (region, grid, clock) = setup(trips);
        let (t, _) = count_demand(&region, &grid, clock, 4).unwrap();
        let cell = grid.locate(40.75, -73.96).unwrap();
        assert_eq!(t.get(cell, 0), 3);
        assert_eq!(t.total(), 3);
    }

    #[test]
    fn out_of_window_is_reported() {
        let trips = vec![TripRecord::pickup_only(4 * 1800, 40.75, -73.96), TripRecord::pickup_only(-5, 40.75, -73.96)];
        let (region, grid, clock) = setup(trips);
        let (t, report) = count_demand(&region, &grid, clock, 4).unwrap();
        assert_eq!(t.total(), 0);
        assert_eq!(report.outside_window, 2);
        assert_eq!(slots_covering(&region, &clock), 5);
    }
}
