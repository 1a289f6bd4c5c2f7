//! Pointy-top hexagonal tessellation in axial coordinates over a local
//! azimuthal-equidistant projection.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, LatLon, LocalProjection, Point, Polygon};
use crate::math;

pub type CellId = usize;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Axial neighbor offsets, counter-clockwise starting east.
pub const AXIAL_DIRECTIONS: [(i32, i32); 6] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Axial {
    pub q: i32,
    pub r: i32,
}

impl Axial {
    pub const fn new(q: i32, r: i32) -> Self {
        Self { q, r }
    }

    pub fn neighbors(self) -> impl Iterator<Item = Axial> {
        AXIAL_DIRECTIONS.into_iter().map(move |(dq, dr)| Axial::new(self.q + dq, self.r + dr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    pub axial: Axial,
    pub centroid: LatLon,
    /// Centroid in the grid's planar frame (km).
    pub center: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HexGrid {
    projection: LocalProjection,
    edge_km: f64,
    bbox: Polygon,
    cells: Vec<Cell>,
    index: BTreeMap<Axial, CellId>,
}

impl HexGrid {
    /// Covers `bbox` with every hexagon that intersects it. The origin is the
    /// center of the polygon's lat/lon bounds.
    pub fn build(bbox: &Polygon, edge_km: f64) -> Result<Self> {
        if !(edge_km > 0.0 && edge_km.is_finite()) {
            return Err(Error::config("hexagon edge length must be positive"));
        }
        let bbox = Polygon::new(bbox.vertices().to_vec())?;
        let projection = LocalProjection::new(bbox.bbox_center());
        let planar: Vec<Point> = bbox.vertices().iter().map(|&v| projection.forward(v)).collect();
        let (mut xmin, mut ymin, mut xmax, mut ymax) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &planar {
            xmin = xmin.min(p.x);
            xmax = xmax.max(p.x);
            ymin = ymin.min(p.y);
            ymax = ymax.max(p.y);
        }
        let row_h = 1.5 * edge_km;
        let col_w = SQRT3 * edge_km;
        let r_lo = math::floor(ymin / row_h) as i32 - 1;
        let r_hi = math::floor(ymax / row_h) as i32 + 2;
        let mut axials = Vec::new();
        for r in r_lo..=r_hi {
            let shift = r as f64 / 2.0;
            let q_lo = math::floor(xmin / col_w - shift) as i32 - 1;
            let q_hi = math::floor(xmax / col_w - shift) as i32 + 2;
            for q in q_lo..=q_hi {
                let hex = hexagon_vertices(axial_center(Axial::new(q, r), edge_km), edge_km);
                if geo::polygons_intersect(&hex, &planar) {
                    axials.push(Axial::new(q, r));
                }
            }
        }
        Self::from_parts(projection, edge_km, bbox, axials)
    }

    /// Rebuilds a grid from a stored cell list.
    pub fn from_axial(origin: LatLon, edge_km: f64, bbox: Polygon, axials: Vec<Axial>) -> Result<Self> {
        if !(edge_km > 0.0 && edge_km.is_finite()) {
            return Err(Error::config("hexagon edge length must be positive"));
        }
        Self::from_parts(LocalProjection::new(origin), edge_km, bbox, axials)
    }

    fn from_parts(projection: LocalProjection, edge_km: f64, bbox: Polygon, mut axials: Vec<Axial>) -> Result<Self> {
        axials.sort_by_key(|a| (a.r, a.q));
        axials.dedup();
        if axials.is_empty() {
            return Err(Error::config("grid has no cells"));
        }
        let mut index = BTreeMap::new();
        let cells = axials
            .into_iter()
            .enumerate()
            .map(|(id, axial)| {
                index.insert(axial, id);
                let center = axial_center(axial, edge_km);
                Cell { id, axial, centroid: projection.inverse(center), center }
            })
            .collect();
        Ok(Self { projection, edge_km, bbox, cells, index })
    }

    pub fn origin(&self) -> LatLon {
        self.projection.origin()
    }

    pub fn projection(&self) -> &LocalProjection {
        &self.projection
    }

    pub fn edge_km(&self) -> f64 {
        self.edge_km
    }

    pub fn bbox(&self) -> &Polygon {
        &self.bbox
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    pub fn cell_at(&self, axial: Axial) -> Option<CellId> {
        self.index.get(&axial).copied()
    }

    /// Neighbors of `id` present in the grid, ascending by id.
    pub fn neighbors(&self, id: CellId) -> Vec<CellId> {
        let mut out: Vec<CellId> = self.cells[id].axial.neighbors().filter_map(|a| self.cell_at(a)).collect();
        out.sort_unstable();
        out
    }

    pub fn are_adjacent(&self, a: CellId, b: CellId) -> bool {
        let (pa, pb) = (self.cells[a].axial, self.cells[b].axial);
        pa.neighbors().any(|n| n == pb)
    }

    /// Whether all six axial neighbors are part of the grid.
    pub fn is_interior(&self, id: CellId) -> bool {
        self.cells[id].axial.neighbors().all(|a| self.index.contains_key(&a))
    }

    pub fn hexagon(&self, id: CellId) -> [Point; 6] {
        hexagon_vertices(self.cells[id].center, self.edge_km)
    }

    /// Whether planar point `p` lies in (or on) the hexagon of `id`.
    pub fn hexagon_contains(&self, id: CellId, p: Point) -> bool {
        hexagon_contains(self.cells[id].center, self.edge_km, p)
    }

    /// The cell whose hexagon contains the point; on shared edges the
    /// smallest id wins.
    pub fn locate(&self, lat: f64, lon: f64) -> Result<CellId> {
        let p = self.projection.forward(LatLon::new(lat, lon));
        self.locate_planar(p).ok_or(Error::OutOfGrid { lat, lon })
    }

    pub fn locate_planar(&self, p: Point) -> Option<CellId> {
        let guess = planar_to_axial(p, self.edge_km);
        core::iter::once(guess)
            .chain(guess.neighbors())
            .filter_map(|a| self.cell_at(a))
            .filter(|&id| self.hexagon_contains(id, p))
            .min()
    }
}

pub fn axial_center(a: Axial, edge_km: f64) -> Point {
    Point::new(edge_km * SQRT3 * (a.q as f64 + a.r as f64 / 2.0), edge_km * 1.5 * a.r as f64)
}

/// Vertices of a pointy-top hexagon, counter-clockwise from -30 degrees.
pub fn hexagon_vertices(center: Point, edge_km: f64) -> [Point; 6] {
    core::array::from_fn(|i| {
        let angle = (60.0 * i as f64 - 30.0).to_radians();
        Point::new(center.x + edge_km * math::cos(angle), center.y + edge_km * math::sin(angle))
    })
}

fn hexagon_contains(center: Point, edge_km: f64, p: Point) -> bool {
    let (dx, dy) = (p.x - center.x, p.y - center.y);
    let apothem = edge_km * SQRT3 / 2.0;
    // 0.1 mm, above lat/lon round-trip noise
    let tol = 1e-7;
    // edge normals at 0, 60 and 120 degrees
    let half = SQRT3 / 2.0;
    dx.abs() <= apothem + tol
        && (0.5 * dx + half * dy).abs() <= apothem + tol
        && (-0.5 * dx + half * dy).abs() <= apothem + tol
}

fn planar_to_axial(p: Point, edge_km: f64) -> Axial {
    let qf = (SQRT3 / 3.0 * p.x - p.y / 3.0) / edge_km;
    let rf = (2.0 / 3.0 * p.y) / edge_km;
    let sf = -qf - rf;
    let (mut q, mut r, s) = (math::round(qf), math::round(rf), math::round(sf));
    let (dq, dr, ds) = ((q - qf).abs(), (r - rf).abs(), (s - sf).abs());
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    Axial::new(q as i32, r as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn city_square() -> Polygon {
        // roughly 10 km x 10 km around midtown Manhattan
        Polygon::rectangle(40.71, -74.02, 40.80, -73.90).unwrap()
    }

    #[test]
    fn centroid_locates_to_own_cell() {
        let grid = HexGrid::build(&city_square(), 1.4).unwrap();
        for cell in grid.cells() {
            assert_eq!(grid.locate(cell.centroid.lat, cell.centroid.lon).unwrap(), cell.id);
        }
    }

    #[test]
    fn build_is_deterministic_and_rejects_bad_edges() {
        let a = HexGrid::build(&city_square(), 1.4).unwrap();
        let b = HexGrid::build(&city_square(), 1.4).unwrap();
        assert_eq!(a, b);
        assert!(HexGrid::build(&city_square(), 0.0).is_err());
        assert!(HexGrid::build(&city_square(), -1.0).is_err());
    }

    #[test]
    fn tiny_bbox_yields_a_cell_containing_the_point() {
        let c = LatLon::new(41.88, -87.63);
        let d = 0.001;
        let bbox = Polygon::rectangle(c.lat - d, c.lon - d, c.lat + d, c.lon + d).unwrap();
        let grid = HexGrid::build(&bbox, 1.4).unwrap();
        assert!(!grid.is_empty());
        assert!(grid.locate(c.lat, c.lon).is_ok());
    }

    #[test]
    fn shared_edge_goes_to_smaller_id() {
        let grid = HexGrid::build(&city_square(), 1.4).unwrap();
        let a = (0..grid.len()).find(|&i| grid.is_interior(i)).unwrap();
        for b in grid.neighbors(a) {
            let (pa, pb) = (grid.cell(a).center, grid.cell(b).center);
            let mid = Point::new((pa.x + pb.x) / 2.0, (pa.y + pb.y) / 2.0);
            assert_eq!(grid.locate_planar(mid), Some(a.min(b)));
            let ll = grid.projection().inverse(mid);
            assert_eq!(grid.locate(ll.lat, ll.lon).unwrap(), a.min(b));
        }
    }

    #[test]
    fn far_point_is_out_of_grid() {
        let grid = HexGrid::build(&city_square(), 1.4).unwrap();
        assert!(matches!(grid.locate(0.0, 0.0), Err(Error::OutOfGrid { .. })));
    }
}
