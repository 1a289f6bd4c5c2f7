//! Region directories: the grid descriptor, the demand tensor and the edge
//! weights of one region, as written by `demandgraph grid` and `synth`.
//!
//! | file | content |
//! |---|---|
//! | `grid.json` | origin, edge length, bbox, axial cells, slot clock, slot count |
//! | `demand.csv` | `cell_id,slot,count`, nonzero entries only |
//! | `edges.csv` | `u,v,weight` for every ordered adjacent pair |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use demandgraph_core::demand::DemandTensor;
use demandgraph_core::geo::{LatLon, Polygon};
use demandgraph_core::graph::EdgeWeights;
use demandgraph_core::grid::{Axial, HexGrid};
use demandgraph_core::time::SlotClock;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const GRID_FILE: &str = "grid.json";
pub const DEMAND_FILE: &str = "demand.csv";
pub const EDGES_FILE: &str = "edges.csv";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub id: usize,
    pub q: i32,
    pub r: i32,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDescriptor {
    pub format_version: u32,
    pub region_id: String,
    pub origin: LatLon,
    pub edge_km: f64,
    pub bbox: Vec<LatLon>,
    pub cells: Vec<CellEntry>,
    pub clock: SlotClock,
    pub slots: usize,
}

impl GridDescriptor {
    pub fn new(grid: &HexGrid, tensor: &DemandTensor) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            region_id: tensor.region_id.clone(),
            origin: grid.origin(),
            edge_km: grid.edge_km(),
            bbox: grid.bbox().vertices().to_vec(),
            cells: grid
                .cells()
                .iter()
                .map(|c| CellEntry { id: c.id, q: c.axial.q, r: c.axial.r, lat: c.centroid.lat, lon: c.centroid.lon })
                .collect(),
            clock: tensor.clock,
            slots: tensor.slots(),
        }
    }

    pub fn to_grid(&self) -> Result<HexGrid> {
        let axials = self.cells.iter().map(|c| Axial { q: c.q, r: c.r }).collect();
        let grid = HexGrid::from_axial(self.origin, self.edge_km, Polygon::new(self.bbox.clone())?, axials)?;
        // ids are implied by the (r, q) order, so a reordered file is caught here
        for (entry, cell) in self.cells.iter().zip(grid.cells()) {
            if entry.id != cell.id || entry.q != cell.axial.q || entry.r != cell.axial.r {
                return Err(AppError::corrupt(GRID_FILE, format!("cell {} is out of (r, q) order", entry.id)));
            }
        }
        if grid.len() != self.cells.len() {
            return Err(AppError::corrupt(GRID_FILE, "duplicate cells"));
        }
        Ok(grid)
    }
}

/// Everything a region directory holds.
#[derive(Debug, Clone)]
pub struct RegionFiles {
    pub grid: HexGrid,
    pub tensor: DemandTensor,
    pub edges: EdgeWeights,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| AppError::io(path, e))?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| AppError::corrupt(path, e))
}

pub fn write_demand_csv(path: &Path, tensor: &DemandTensor) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| AppError::io(path, e);
    writeln!(out, "cell_id,slot,count").map_err(io)?;
    for (cell, slot, count) in tensor.nonzero() {
        writeln!(out, "{cell},{slot},{count}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_demand_csv(path: &Path, region_id: &str, clock: SlotClock, cells: usize, slots: usize) -> Result<DemandTensor> {
    let mut tensor = DemandTensor::zeros(region_id, clock, cells, slots);
    for (line, row) in csv_reader(path)?.deserialize::<(usize, usize, u32)>().enumerate() {
        let (cell, slot, count) = row.map_err(|e| AppError::corrupt(path, e))?;
        if cell >= cells || slot >= slots {
            return Err(AppError::corrupt(path, format!("row {} addresses ({cell}, {slot}) outside {cells}x{slots}", line + 2)));
        }
        tensor.add(cell, slot, count);
    }
    Ok(tensor)
}

pub fn write_edges_csv(path: &Path, edges: &EdgeWeights) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| AppError::io(path, e);
    writeln!(out, "u,v,weight").map_err(io)?;
    for (&(u, v), &w) in &edges.weights {
        writeln!(out, "{u},{v},{w:?}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_edges_csv(path: &Path, nodes: usize) -> Result<EdgeWeights> {
    let mut weights = BTreeMap::new();
    for row in csv_reader(path)?.deserialize::<(usize, usize, f64)>() {
        let (u, v, w) = row.map_err(|e| AppError::corrupt(path, e))?;
        if u >= nodes || v >= nodes || !(w > 0.0 && w.is_finite()) {
            return Err(AppError::corrupt(path, format!("bad edge ({u}, {v}, {w})")));
        }
        weights.insert((u, v), w);
    }
    Ok(EdgeWeights { nodes, weights })
}

pub fn write_region_dir(dir: &Path, grid: &HexGrid, tensor: &DemandTensor, edges: &EdgeWeights) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let descriptor = GridDescriptor::new(grid, tensor);
    let path = dir.join(GRID_FILE);
    let text = serde_json::to_string_pretty(&descriptor).map_err(|e| AppError::corrupt(&path, e))?;
    std::fs::write(&path, text).map_err(|e| AppError::io(&path, e))?;
    write_demand_csv(&dir.join(DEMAND_FILE), tensor)?;
    write_edges_csv(&dir.join(EDGES_FILE), edges)
}

pub fn read_grid_descriptor(path: &Path) -> Result<GridDescriptor> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let descriptor: GridDescriptor = serde_json::from_str(&text).map_err(|e| AppError::corrupt(path, e))?;
    if descriptor.format_version != FORMAT_VERSION {
        return Err(AppError::Version { kind: "grid descriptor", found: descriptor.format_version, expected: FORMAT_VERSION });
    }
    Ok(descriptor)
}

pub fn read_region_dir(dir: &Path) -> Result<RegionFiles> {
    let descriptor = read_grid_descriptor(&dir.join(GRID_FILE))?;
    let grid = descriptor.to_grid()?;
    let tensor =
        read_demand_csv(&dir.join(DEMAND_FILE), &descriptor.region_id, descriptor.clock, grid.len(), descriptor.slots)?;
    let edges = read_edges_csv(&dir.join(EDGES_FILE), grid.len())?;
    Ok(RegionFiles { grid, tensor, edges })
}

/// `<root>/<region_id>`.
pub fn region_dir(root: &Path, region_id: &str) -> PathBuf {
    root.join(region_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use demandgraph_core::graph::build_adjacency;
    use demandgraph_core::synth::{generate_region, SynthConfig};

    #[test]
    fn region_dir_round_trips_bit_exactly() {
        let cfg = SynthConfig { days: 1, ..SynthConfig::default() };
        let region = generate_region(&cfg, 0).unwrap();
        let edges = build_adjacency(&region.grid, &region.dataset, None);
        let dir = tempfile::tempdir().unwrap();
        write_region_dir(dir.path(), &region.grid, &region.counts, &edges).unwrap();
        let back = read_region_dir(dir.path()).unwrap();
        assert_eq!(back.tensor, region.counts);
        assert_eq!(back.edges, edges);
        assert_eq!(back.grid.origin(), region.grid.origin());
        assert_eq!(back.grid.bbox(), region.grid.bbox());
        for (a, b) in back.grid.cells().iter().zip(region.grid.cells()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn out_of_range_rows_are_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DEMAND_FILE);
        std::fs::write(&path, "cell_id,slot,count\n5,0,1\n").unwrap();
        let clock = SlotClock::new(0, 30, 0).unwrap();
        assert!(matches!(read_demand_csv(&path, "x", clock, 2, 4), Err(AppError::Corrupt { .. })));
    }

    #[test]
    fn future_versions_are_rejected() {
        let cfg = SynthConfig { days: 1, ..SynthConfig::default() };
        let region = generate_region(&cfg, 1).unwrap();
        let mut d = GridDescriptor::new(&region.grid, &region.counts);
        d.format_version = 9;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(GRID_FILE);
        std::fs::write(&path, serde_json::to_string(&d).unwrap()).unwrap();
        assert!(matches!(read_grid_descriptor(&path), Err(AppError::Version { found: 9, .. })));
    }
}
