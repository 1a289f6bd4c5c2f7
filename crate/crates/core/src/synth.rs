//! Multi-region synthetic trip generator with a known generating rate.
//!
//! Every region shares one daily demand profile. Regions differ in where
//! their hotspots sit, in an overall intensity scale and in a time delay of
//! the profile, which is the region-specific signal a model can pick up.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::demand::DemandTensor;
use crate::error::{Error, Result};
use crate::geo::{LatLon, Point, Polygon, EARTH_RADIUS_KM};
use crate::grid::{CellId, HexGrid};
use crate::math;
use crate::rng::{name_stream, rng_from, Rng};
use crate::time::{SlotClock, SECONDS_PER_DAY};
use crate::trip::{RegionDataset, TripRecord};

/// Gaussian bump of extra intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hotspot {
    /// Position within the region's bounding box, `[0, 1]` west to east.
    pub rel_x: f64,
    /// Position within the region's bounding box, `[0, 1]` south to north.
    pub rel_y: f64,
    pub amplitude: f64,
    pub radius_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionStyle {
    pub name: String,
    pub center: LatLon,
    pub utc_offset_min: i32,
    pub hotspots: Vec<Hotspot>,
    pub intensity_scale: f64,
    /// Delay of the shared profile in slots: the rate at slot `k` equals the
    /// unshifted rate at slot `k - phase_shift_slots`.
    pub phase_shift_slots: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub grid_diameter_cells: usize,
    pub edge_km: f64,
    pub days: usize,
    pub interval_min: u32,
    /// First local day, as days since 1970-01-01.
    pub start_day: i64,
    pub base_intensity: f64,
    /// Spatial intensity away from hotspots.
    pub background: f64,
    pub shared_daily_profile: Vec<f64>,
    pub regions: Vec<RegionStyle>,
    pub seed: u64,
}

/// Commute-shaped daily curve: morning and evening peaks over a night trough.
pub fn default_daily_profile(slots_per_day: usize) -> Vec<f64> {
    let bump = |h: f64, mu: f64, sd: f64| math::exp(-(h - mu) * (h - mu) / (2.0 * sd * sd));
    (0..slots_per_day)
        .map(|s| {
            let hour = 24.0 * (s as f64 + 0.5) / slots_per_day as f64;
            0.25 + 1.2 * bump(hour, 8.5, 1.3) + 1.0 * bump(hour, 18.0, 1.6) + 0.45 * bump(hour, 13.0, 2.0)
        })
        .collect()
}

fn hotspot(rel_x: f64, rel_y: f64, amplitude: f64, radius_km: f64) -> Hotspot {
    Hotspot { rel_x, rel_y, amplitude, radius_km }
}

impl Default for SynthConfig {
    fn default() -> Self {
        let style = |name: &str, lat, lon, offset, hotspots, scale, phase| RegionStyle {
            name: name.into(),
            center: LatLon::new(lat, lon),
            utc_offset_min: offset,
            hotspots,
            intensity_scale: scale,
            phase_shift_slots: phase,
        };
        Self {
            grid_diameter_cells: 8,
            edge_km: 1.4,
            days: 14,
            interval_min: 30,
            start_day: 16_804, // 2016-01-04, a Monday
            base_intensity: 3.0,
            background: 0.15,
            shared_daily_profile: default_daily_profile(48),
            regions: vec![
                style("metro_a", 40.75, -73.98, -300, vec![hotspot(0.3, 0.6, 5.0, 1.8), hotspot(0.7, 0.3, 3.0, 1.5)], 1.0, 0),
                style("metro_b", 41.88, -87.63, -360, vec![hotspot(0.6, 0.7, 5.0, 1.8), hotspot(0.2, 0.2, 3.0, 1.5)], 0.9, 3),
                style("metro_c", 37.77, -122.42, -480, vec![hotspot(0.5, 0.4, 6.0, 1.5)], 1.1, -3),
                style("metro_d", 39.95, -75.16, -300, vec![hotspot(0.8, 0.8, 4.0, 1.8), hotspot(0.35, 0.35, 4.0, 1.5)], 1.0, 2),
            ],
            seed: 20_240_601,
        }
    }
}

impl SynthConfig {
    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn slots_per_day(&self) -> usize {
        (1440 / self.interval_min.max(1)) as usize
    }

    pub fn total_slots(&self) -> usize {
        self.days * self.slots_per_day()
    }

    pub fn validate(&self) -> Result<()> {
        if self.interval_min == 0 || 1440 % self.interval_min != 0 {
            return Err(Error::config("interval_min must divide a day"));
        }
        if self.shared_daily_profile.len() != self.slots_per_day() {
            return Err(Error::config(alloc::format!(
                "shared_daily_profile has {} entries, expected {}",
                self.shared_daily_profile.len(),
                self.slots_per_day()
            )));
        }
        let non_negative = |v: f64| v >= 0.0 && v.is_finite();
        if !non_negative(self.base_intensity)
            || !non_negative(self.background)
            || !self.shared_daily_profile.iter().all(|&v| non_negative(v))
            || !self.regions.iter().all(|r| {
                non_negative(r.intensity_scale) && r.hotspots.iter().all(|h| non_negative(h.amplitude) && h.radius_km > 0.0)
            })
        {
            return Err(Error::config("synthetic intensities must be non-negative"));
        }
        if self.grid_diameter_cells == 0 || self.days == 0 || !(self.edge_km > 0.0) {
            return Err(Error::config("grid diameter, days and edge length must be positive"));
        }
        Ok(())
    }

    fn style(&self, region_index: usize) -> Result<&RegionStyle> {
        self.regions
            .get(region_index)
            .ok_or_else(|| Error::config(alloc::format!("region index {region_index} out of range")))
    }

    /// Disc-shaped service area (a 32-gon) centered on the region's center,
    /// `grid_diameter_cells` hexagon widths across.
    pub fn region_polygon(&self, region_index: usize) -> Result<Polygon> {
        let style = self.style(region_index)?;
        let radius_km = self.grid_diameter_cells as f64 * 1.732_050_807_568_877_2 * self.edge_km / 2.0;
        let dlat = (radius_km / EARTH_RADIUS_KM).to_degrees();
        let dlon = dlat / math::cos(style.center.lat.to_radians());
        let vertices = (0..DISC_VERTICES)
            .map(|i| {
                let a = 2.0 * math::PI * i as f64 / DISC_VERTICES as f64;
                LatLon::new(style.center.lat + dlat * math::sin(a), style.center.lon + dlon * math::cos(a))
            })
            .collect();
        Polygon::new(vertices)
    }

    pub fn clock(&self, region_index: usize) -> Result<SlotClock> {
        let style = self.style(region_index)?;
        SlotClock::new(self.start_day * SECONDS_PER_DAY - i64::from(style.utc_offset_min) * 60, self.interval_min, style.utc_offset_min)
    }
}

const DISC_VERTICES: usize = 32;

/// Precomputed rate surface of one region.
#[derive(Debug, Clone)]
pub struct RateModel {
    grid: HexGrid,
    polygon: Polygon,
    /// Per-cell spatial factor; zero for cells whose centroid is outside the polygon.
    spatial: Vec<f64>,
    profile: Vec<f64>,
    base: f64,
    scale: f64,
    phase: i32,
}

impl RateModel {
    pub fn new(config: &SynthConfig, region_index: usize) -> Result<Self> {
        config.validate()?;
        let style = config.style(region_index)?;
        let polygon = config.region_polygon(region_index)?;
        let grid = HexGrid::build(&polygon, config.edge_km)?;
        let (s, w, n, e) = polygon.bounds();
        let hotspots: Vec<(Point, &Hotspot)> = style
            .hotspots
            .iter()
            .map(|h| (grid.projection().forward(LatLon::new(s + h.rel_y * (n - s), w + h.rel_x * (e - w))), h))
            .collect();
        let spatial = grid
            .cells()
            .iter()
            .map(|c| {
                if !polygon.contains(c.centroid) {
                    return 0.0;
                }
                config.background
                    + hotspots
                        .iter()
                        .map(|(p, h)| {
                            let d = c.center.dist(*p);
                            h.amplitude * math::exp(-d * d / (2.0 * h.radius_km * h.radius_km))
                        })
                        .sum::<f64>()
            })
            .collect();
        Ok(Self {
            grid,
            polygon,
            spatial,
            profile: config.shared_daily_profile.clone(),
            base: config.base_intensity,
            scale: style.intensity_scale,
            phase: style.phase_shift_slots,
        })
    }

    pub fn grid(&self) -> &HexGrid {
        &self.grid
    }

    /// Generating Poisson rate of `cell` at absolute slot `slot`.
    pub fn rate(&self, cell: CellId, slot: usize) -> f64 {
        let spd = self.profile.len() as i64;
        let idx = (slot as i64 - i64::from(self.phase)).rem_euclid(spd) as usize;
        self.base * self.profile[idx] * self.spatial[cell] * self.scale
    }

    /// Whether the cell is part of the synthetic service area.
    pub fn is_active(&self, cell: CellId) -> bool {
        self.spatial[cell] > 0.0 || self.polygon.contains(self.grid.cell(cell).centroid)
    }
}

pub fn oracle_expected_demand(config: &SynthConfig, region_index: usize, cell: CellId, slot: usize) -> Result<f64> {
    let model = RateModel::new(config, region_index)?;
    if cell >= model.grid.len() {
        return Err(Error::contract("cell id out of range"));
    }
    Ok(model.rate(cell, slot))
}

/// A generated region with the generator's own per-(cell, slot) draws.
#[derive(Debug, Clone)]
pub struct SyntheticRegion {
    pub dataset: RegionDataset,
    pub grid: HexGrid,
    pub clock: SlotClock,
    pub slots: usize,
    pub counts: DemandTensor,
}

/// Uniform point inside the (slightly shrunk) hexagon of `cell` that also
/// lies inside the polygon. Falls back to the centroid.
fn jitter(grid: &HexGrid, polygon: &Polygon, cell: CellId, rng: &mut Rng) -> LatLon {
    let center = grid.cell(cell).center;
    let r = grid.edge_km() * 0.95;
    for _ in 0..256 {
        let p = Point::new(center.x + rng.random_range(-r..r), center.y + rng.random_range(-r..r));
        let shrunk = Point::new(center.x + (p.x - center.x) / 0.95, center.y + (p.y - center.y) / 0.95);
        if !grid.hexagon_contains(cell, shrunk) {
            continue;
        }
        let ll = grid.projection().inverse(p);
        if polygon.contains(ll) {
            return ll;
        }
    }
    grid.cell(cell).centroid
}

pub fn generate_region(config: &SynthConfig, region_index: usize) -> Result<SyntheticRegion> {
    let model = RateModel::new(config, region_index)?;
    let style = config.style(region_index)?;
    let clock = config.clock(region_index)?;
    let slots = config.total_slots();
    let grid = model.grid.clone();
    let mut rng = rng_from(config.seed, name_stream(&style.name));
    let mut counts = DemandTensor::zeros(style.name.clone(), clock, grid.len(), slots);
    let active_neighbors: Vec<Vec<CellId>> =
        (0..grid.len()).map(|c| grid.neighbors(c).into_iter().filter(|&n| model.spatial[n] > 0.0).collect()).collect();
    let mut trips = Vec::new();
    for k in 0..slots {
        let slot_start = clock.slot_start(crate::time::SlotIndex(k));
        for cell in 0..grid.len() {
            let rate = model.rate(cell, k);
            if rate <= 0.0 {
                continue;
            }
            let n = Poisson::new(rate).map_err(|_| Error::config("invalid Poisson rate"))?.sample(&mut rng) as u32;
            counts.add(cell, k, n);
            for _ in 0..n {
                let pickup_time = slot_start + rng.random_range(0..clock.interval_secs());
                let pickup = jitter(&grid, &model.polygon, cell, &mut rng);
                let target = match active_neighbors[cell].as_slice() {
                    [] => cell,
                    ns => ns[rng.random_range(0..ns.len())],
                };
                let dropoff = jitter(&grid, &model.polygon, target, &mut rng);
                let dropoff_time = pickup_time + rng.random_range(300..1800);
                trips.push(TripRecord { pickup_time, pickup, dropoff: Some(dropoff), dropoff_time: Some(dropoff_time) });
            }
        }
    }
    trips.sort_by_key(|t| t.pickup_time);
    let dataset = RegionDataset {
        region_id: style.name.clone(),
        polygon: model.polygon.clone(),
        trips,
        utc_offset_min: style.utc_offset_min,
    };
    Ok(SyntheticRegion { dataset, grid, clock, slots, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig { days: 2, grid_diameter_cells: 4, ..SynthConfig::default() }
    }

    #[test]
    fn zero_base_intensity_generates_nothing() {
        let cfg = SynthConfig { base_intensity: 0.0, ..small() };
        let region = generate_region(&cfg, 0).unwrap();
        assert!(region.dataset.trips.is_empty());
        assert_eq!(region.counts.total(), 0);
    }

    #[test]
    fn flat_profile_without_hotspots_is_base_everywhere() {
        let mut cfg = small();
        cfg.background = 1.0;
        cfg.base_intensity = 2.5;
        cfg.shared_daily_profile = vec![1.0; 48];
        cfg.regions[0].hotspots.clear();
        cfg.regions[0].intensity_scale = 1.0;
        let model = RateModel::new(&cfg, 0).unwrap();
        for c in (0..model.grid().len()).filter(|&c| model.is_active(c)) {
            for k in [0, 13, 47, 95] {
                assert_eq!(model.rate(c, k), 2.5);
            }
        }
    }

    #[test]
    fn phase_shift_delays_the_profile() {
        let mut cfg = small();
        cfg.regions[1] = RegionStyle { phase_shift_slots: 0, name: "unshifted".into(), ..cfg.regions[0].clone() };
        cfg.regions[0].phase_shift_slots = 5;
        let shifted = RateModel::new(&cfg, 0).unwrap();
        let plain = RateModel::new(&cfg, 1).unwrap();
        for c in 0..shifted.grid().len() {
            for k in 5..100 {
                assert_eq!(shifted.rate(c, k), plain.rate(c, k - 5));
            }
        }
    }

    #[test]
    fn generation_is_deterministic_per_style() {
        let cfg = small();
        let a = generate_region(&cfg, 2).unwrap();
        let b = generate_region(&cfg, 2).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let mut twin = cfg.clone();
        twin.regions[0] = cfg.regions[2].clone();
        assert_eq!(generate_region(&twin, 0).unwrap().dataset, a.dataset);
    }

    #[test]
    fn invalid_profile_length_is_rejected() {
        let cfg = SynthConfig { shared_daily_profile: vec![1.0; 10], ..small() };
        assert!(matches!(generate_region(&cfg, 0), Err(Error::Config(_))));
        assert!(generate_region(&small(), 9).is_err());
    }
}
