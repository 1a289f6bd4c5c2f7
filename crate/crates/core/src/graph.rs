//! Model-ready graph samples built from demand tensors.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::demand::DemandTensor;
use crate::error::{Error, Result};
use crate::geo::LatLon;
use crate::grid::{CellId, HexGrid};
use crate::math;
use crate::matrix::{Matrix, SparseMatrix};
use crate::time::SlotIndex;
use crate::trip::RegionDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSpec {
    /// Number of demand lags per node.
    pub history: usize,
    pub include_day_onehot: bool,
    pub include_slot_encoding: bool,
    pub include_relative_coords: bool,
    pub external_dims: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            history: 6,
            include_day_onehot: true,
            include_slot_encoding: true,
            include_relative_coords: true,
            external_dims: 0,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(Error::config("history length must be at least 1"));
        }
        Ok(())
    }

    /// Node feature width `d`.
    pub fn width(&self) -> usize {
        self.history
            + 7 * usize::from(self.include_day_onehot)
            + 2 * usize::from(self.include_slot_encoding)
            + 2 * usize::from(self.include_relative_coords)
            + self.external_dims
    }

    /// Slots `t` with a full history window and a next-slot target.
    pub fn valid_slots(&self, total_slots: usize) -> core::ops::Range<usize> {
        let lo = self.history.saturating_sub(1);
        let hi = total_slots.saturating_sub(1).max(lo);
        lo..hi
    }
}

/// Symmetric raw edge weights between adjacent cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeights {
    pub nodes: usize,
    /// Keyed by `(u, v)`; both orientations are stored.
    pub weights: BTreeMap<(CellId, CellId), f64>,
}

impl EdgeWeights {
    pub fn get(&self, u: CellId, v: CellId) -> Option<f64> {
        self.weights.get(&(u, v)).copied()
    }
}

/// Edge weight `1 + trips u->v + trips v->u` for every pair of adjacent
/// cells, counting trips whose pickup falls in `window` (`[start, end)`,
/// UTC seconds) when given.
pub fn build_adjacency(grid: &HexGrid, region: &RegionDataset, window: Option<(i64, i64)>) -> EdgeWeights {
    let mut weights = BTreeMap::new();
    for cell in grid.cells() {
        for n in grid.neighbors(cell.id) {
            weights.insert((cell.id, n), 1.0);
        }
    }
    for trip in &region.trips {
        if let Some((start, end)) = window {
            if trip.pickup_time < start || trip.pickup_time >= end {
                continue;
            }
        }
        let Some(drop) = trip.dropoff else { continue };
        let (Ok(u), Ok(v)) = (grid.locate(trip.pickup.lat, trip.pickup.lon), grid.locate(drop.lat, drop.lon)) else {
            continue;
        };
        if u != v && grid.are_adjacent(u, v) {
            *weights.get_mut(&(u, v)).expect("adjacent pair seeded") += 1.0;
            *weights.get_mut(&(v, u)).expect("adjacent pair seeded") += 1.0;
        }
    }
    EdgeWeights { nodes: grid.len(), weights }
}

/// `D^-1/2 (A + I) D^-1/2` with `D` the degree matrix of `A + I`.
pub fn normalize_adjacency(edges: &EdgeWeights) -> Result<SparseMatrix> {
    let n = edges.nodes;
    for (&(u, v), &w) in &edges.weights {
        if u >= n || v >= n {
            return Err(Error::contract("edge endpoint out of range"));
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::contract("edge weights must be finite and non-negative"));
        }
        if edges.get(v, u) != Some(w) {
            return Err(Error::contract(alloc::format!("edge weights asymmetric at ({u}, {v})")));
        }
    }
    let mut degree = alloc::vec![1.0; n];
    for (&(u, v), &w) in &edges.weights {
        if u != v {
            degree[u] += w;
        }
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|&d| 1.0 / math::sqrt(d)).collect();
    let mut triplets: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, inv_sqrt[i] * inv_sqrt[i])).collect();
    for (&(u, v), &w) in &edges.weights {
        if u != v && w != 0.0 {
            triplets.push((u, v, inv_sqrt[u] * w * inv_sqrt[v]));
        }
    }
    SparseMatrix::from_triplets(n, &triplets)
}

/// Static per-region structure shared by all snapshots of that region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTopology {
    pub edge_weights: EdgeWeights,
    pub adjacency_norm: SparseMatrix,
    /// Divisor applied to demand lags.
    pub demand_scale: f64,
}

impl RegionTopology {
    pub fn new(edge_weights: EdgeWeights, demand_scale: f64) -> Result<Self> {
        let adjacency_norm = normalize_adjacency(&edge_weights)?;
        Ok(Self { edge_weights, adjacency_norm, demand_scale })
    }

    pub fn nodes(&self) -> usize {
        self.adjacency_norm.n()
    }
}

/// One sample: features at slot `t`, targets at `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    pub region_id: String,
    pub topology: Arc<RegionTopology>,
    pub node_features: Matrix,
    pub targets: Vec<f64>,
    pub slot: SlotIndex,
}

impl RegionGraph {
    pub fn nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.topology.adjacency_norm
    }
}

/// Lag scaling constant: the largest count in the tensor, at least 1.
pub fn demand_scale(demand: &DemandTensor) -> f64 {
    f64::from(demand.max().max(1))
}

/// Position of `p` inside the lat/lon bounds of the grid's polygon, each
/// coordinate clamped to `[0, 1]`, as `(lat, lon)`.
pub fn relative_coords(grid: &HexGrid, p: LatLon) -> (f64, f64) {
    let (s, w, n, e) = grid.bbox().bounds();
    let rel = |x: f64, lo: f64, hi: f64| if hi > lo { ((x - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    (rel(p.lat, s, n), rel(p.lon, w, e))
}

pub fn node_features(
    demand: &DemandTensor,
    grid: &HexGrid,
    t: SlotIndex,
    spec: &FeatureSpec,
    scale: f64,
    external: Option<&Matrix>,
) -> Result<Matrix> {
    spec.validate()?;
    let h = spec.history;
    if t.0 + 1 < h {
        return Err(Error::InsufficientHistory { t: t.0, history: h });
    }
    if t.0 >= demand.slots() {
        return Err(Error::contract("slot beyond demand tensor"));
    }
    if demand.cells() != grid.len() {
        return Err(Error::contract("demand tensor and grid disagree on cell count"));
    }
    if let Some(ext) = external {
        if ext.shape() != (grid.len(), spec.external_dims) {
            return Err(Error::contract("external feature matrix has wrong shape"));
        }
    } else if spec.external_dims > 0 {
        return Err(Error::contract("feature spec expects external features"));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::contract("demand scale must be positive"));
    }
    let clock = &demand.clock;
    let dow = clock.day_of_week(t);
    let angle = 2.0 * math::PI * f64::from(clock.minute_of_day(t)) / 1440.0;
    let (slot_sin, slot_cos) = (math::sin(angle), math::cos(angle));

    let d = spec.width();
    let mut out = Matrix::zeros(grid.len(), d);
    for cell in grid.cells() {
        let row = out.row_mut(cell.id);
        let mut col = 0;
        for k in (t.0 + 1 - h)..=t.0 {
            row[col] = f64::from(demand.get(cell.id, k)) / scale;
            col += 1;
        }
        if spec.include_relative_coords {
            let (rlat, rlon) = relative_coords(grid, cell.centroid);
            row[col] = rlat;
            row[col + 1] = rlon;
            col += 2;
        }
        if spec.include_day_onehot {
            row[col + dow] = 1.0;
            col += 7;
        }
        if spec.include_slot_encoding {
            row[col] = slot_sin;
            row[col + 1] = slot_cos;
            col += 2;
        }
        if let Some(ext) = external {
            row[col..col + spec.external_dims].copy_from_slice(ext.row(cell.id));
        }
    }
    if !out.is_finite() {
        return Err(Error::NumericalFailure { component: "node_features".into(), detail: "non-finite feature".into() });
    }
    Ok(out)
}

pub fn build_snapshot(
    demand: &DemandTensor,
    grid: &HexGrid,
    topology: &Arc<RegionTopology>,
    t: SlotIndex,
    spec: &FeatureSpec,
    external: Option<&Matrix>,
) -> Result<RegionGraph> {
    if t.0 + 1 >= demand.slots() {
        return Err(Error::NoTarget { t: t.0, slots: demand.slots() });
    }
    if topology.nodes() != grid.len() {
        return Err(Error::contract("topology and grid disagree on node count"));
    }
    let node_features = node_features(demand, grid, t, spec, topology.demand_scale, external)?;
    let targets = demand.slot_column(t.0 + 1).into_iter().map(f64::from).collect();
    Ok(RegionGraph {
        region_id: demand.region_id.clone(),
        topology: Arc::clone(topology),
        node_features,
        targets,
        slot: t,
    })
}

/// Topology from trips in `window` and lag scale from the full tensor.
pub fn region_topology(
    demand: &DemandTensor,
    grid: &HexGrid,
    region: &RegionDataset,
    window: Option<(i64, i64)>,
) -> Result<Arc<RegionTopology>> {
    let edges = build_adjacency(grid, region, window);
    Ok(Arc::new(RegionTopology::new(edges, demand_scale(demand))?))
}

/// Every valid snapshot of a region, in slot order.
pub fn build_region_snapshots(
    demand: &DemandTensor,
    grid: &HexGrid,
    region: &RegionDataset,
    spec: &FeatureSpec,
) -> Result<Vec<RegionGraph>> {
    let window = (demand.clock.epoch, demand.clock.slot_start(SlotIndex(demand.slots())));
    let topology = region_topology(demand, grid, region, Some(window))?;
    spec.valid_slots(demand.slots())
        .map(|t| build_snapshot(demand, grid, &topology, SlotIndex(t), spec, None))
        .collect()
}
