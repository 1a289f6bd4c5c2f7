//! Packed snapshot datasets.
//!
//! Layout: the 8-byte magic `DGSNAP\0\0`, a little-endian `u32` version, a
//! `u64` header length and a JSON header holding the `FeatureSpec`, one
//! topology per region (raw edge weights and demand scale) and the
//! `(region, slot)` of every snapshot. Each snapshot's feature matrix
//! (row-major) and targets follow as little-endian `f64`.
//!
//! The normalized adjacency is not stored; it is recomputed from the edge
//! weights, which is deterministic.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use demandgraph_core::graph::{EdgeWeights, FeatureSpec, RegionGraph, RegionTopology};
use demandgraph_core::matrix::Matrix;
use demandgraph_core::time::SlotIndex;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const MAGIC: [u8; 8] = *b"DGSNAP\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TopologyEntry {
    region_id: String,
    nodes: usize,
    demand_scale: f64,
    edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    feature_spec: FeatureSpec,
    regions: Vec<TopologyEntry>,
    /// `(region index, slot)` per snapshot, in payload order.
    snapshots: Vec<(usize, usize)>,
}

/// Snapshots plus the feature layout they were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub feature_spec: FeatureSpec,
    pub graphs: Vec<RegionGraph>,
}

impl SnapshotSet {
    pub fn by_region(&self) -> BTreeMap<String, Vec<RegionGraph>> {
        let mut out: BTreeMap<String, Vec<RegionGraph>> = BTreeMap::new();
        for g in &self.graphs {
            out.entry(g.region_id.clone()).or_default().push(g.clone());
        }
        out
    }
}

pub fn encode(set: &SnapshotSet) -> Result<Vec<u8>> {
    let width = set.feature_spec.width();
    let mut regions: Vec<TopologyEntry> = Vec::new();
    let mut seen: Vec<*const RegionTopology> = Vec::new();
    let mut snapshots = Vec::with_capacity(set.graphs.len());
    for g in &set.graphs {
        if g.node_features.cols() != width {
            return Err(AppError::corrupt("<snapshots>", "snapshot width disagrees with the feature spec"));
        }
        let key = Arc::as_ptr(&g.topology);
        let index = match seen.iter().position(|&p| p == key) {
            Some(i) => i,
            None => {
                let t = &g.topology;
                regions.push(TopologyEntry {
                    region_id: g.region_id.clone(),
                    nodes: t.nodes(),
                    demand_scale: t.demand_scale,
                    edges: t.edge_weights.weights.iter().map(|(&(u, v), &w)| (u, v, w)).collect(),
                });
                seen.push(key);
                regions.len() - 1
            }
        };
        snapshots.push((index, g.slot.0));
    }
    let header = Header { feature_spec: set.feature_spec, regions, snapshots };
    let header = serde_json::to_vec(&header).map_err(|e| AppError::corrupt("<snapshots>", e))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for g in &set.graphs {
        for v in g.node_features.as_slice().iter().chain(&g.targets) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<SnapshotSet> {
    let corrupt = |detail: &str| AppError::corrupt(origin, detail);
    if bytes.len() < 20 || bytes[..8] != MAGIC {
        return Err(corrupt("not a snapshot file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(AppError::Version { kind: "snapshot file", found: version, expected: VERSION });
    }
    let header_end = usize::try_from(u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")))
        .ok()
        .and_then(|n| n.checked_add(20))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..header_end]).map_err(|e| AppError::corrupt(origin, e))?;
    let spec = header.feature_spec;
    spec.validate()?;
    let width = spec.width();
    let mut topologies = Vec::with_capacity(header.regions.len());
    for entry in &header.regions {
        let mut weights = BTreeMap::new();
        for &(u, v, w) in &entry.edges {
            weights.insert((u, v), w);
        }
        let edges = EdgeWeights { nodes: entry.nodes, weights };
        let topology = RegionTopology::new(edges, entry.demand_scale).map_err(|e| AppError::corrupt(origin, e))?;
        topologies.push((entry.region_id.clone(), Arc::new(topology)));
    }
    let mut payload = bytes[header_end..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let expected: usize = header
        .snapshots
        .iter()
        .map(|&(r, _)| topologies.get(r).map_or(usize::MAX / 2, |(_, t)| t.nodes() * (width + 1)))
        .sum();
    if bytes.len() - header_end != expected.saturating_mul(8) {
        return Err(corrupt("payload length does not match the header"));
    }
    let mut graphs = Vec::with_capacity(header.snapshots.len());
    for &(r, slot) in &header.snapshots {
        let (region_id, topology) = &topologies[r];
        let nodes = topology.nodes();
        let features: Vec<f64> = payload.by_ref().take(nodes * width).collect();
        let targets: Vec<f64> = payload.by_ref().take(nodes).collect();
        graphs.push(RegionGraph {
            region_id: region_id.clone(),
            topology: Arc::clone(topology),
            node_features: Matrix::from_vec(nodes, width, features)?,
            targets,
            slot: SlotIndex(slot),
        });
    }
    Ok(SnapshotSet { feature_spec: spec, graphs })
}

pub fn save(path: &Path, set: &SnapshotSet) -> Result<()> {
    std::fs::write(path, encode(set)?).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> Result<SnapshotSet> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use demandgraph_core::graph::build_region_snapshots;
    use demandgraph_core::synth::{generate_region, SynthConfig};

    fn set() -> SnapshotSet {
        let cfg = SynthConfig { days: 1, ..SynthConfig::default() };
        let spec = FeatureSpec::default();
        let mut graphs = Vec::new();
        for i in 0..2 {
            let r = generate_region(&cfg, i).unwrap();
            graphs.extend(build_region_snapshots(&r.counts, &r.grid, &r.dataset, &spec).unwrap().into_iter().take(5));
        }
        SnapshotSet { feature_spec: spec, graphs }
    }

    #[test]
    fn packed_file_round_trips_bit_exactly() {
        let s = set();
        let bytes = encode(&s).unwrap();
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.graphs[0].adjacency(), s.graphs[0].adjacency());
        assert_eq!(encode(&back).unwrap(), bytes);
        assert_eq!(back.by_region().len(), 2);
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let bytes = encode(&set()).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 8], Path::new("x")), Err(AppError::Corrupt { .. })));
    }
}
