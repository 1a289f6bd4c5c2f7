//! Hex grid, locating and counting against brute-force oracles.

use demandgraph_core::demand::count_demand;
use demandgraph_core::geo::{LatLon, LocalProjection, Point, Polygon};
use demandgraph_core::grid::{Axial, HexGrid};
use demandgraph_core::time::SlotClock;
use demandgraph_core::trip::{RegionDataset, TripRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EDGE: f64 = 1.4;

/// Roughly 10 x 10 km around midtown Manhattan.
fn ten_km_box() -> Polygon {
    let center = LatLon::new(40.75, -73.98);
    let proj = LocalProjection::new(center);
    let sw = proj.inverse(Point::new(-5.0, -5.0));
    let ne = proj.inverse(Point::new(5.0, 5.0));
    Polygon::rectangle(sw.lat, sw.lon, ne.lat, ne.lon).unwrap()
}

fn hex_center(q: i32, r: i32) -> (f64, f64) {
    let s3 = 3f64.sqrt();
    (EDGE * s3 * (f64::from(q) + f64::from(r) / 2.0), EDGE * 1.5 * f64::from(r))
}

fn hex_corners(q: i32, r: i32) -> Vec<(f64, f64)> {
    let (cx, cy) = hex_center(q, r);
    (0..6)
        .map(|i| {
            let a = std::f64::consts::PI / 180.0 * (60.0 * f64::from(i) + 30.0);
            (cx + EDGE * a.cos(), cy + EDGE * a.sin())
        })
        .collect()
}

/// Separating-axis test for two convex polygons.
fn convex_overlap(a: &[(f64, f64)], b: &[(f64, f64)]) -> bool {
    for poly in [a, b] {
        for i in 0..poly.len() {
            let (x1, y1) = poly[i];
            let (x2, y2) = poly[(i + 1) % poly.len()];
            let axis = (y1 - y2, x2 - x1);
            let project = |p: &[(f64, f64)]| {
                p.iter().map(|&(x, y)| x * axis.0 + y * axis.1).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
            };
            let (alo, ahi) = project(a);
            let (blo, bhi) = project(b);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
    }
    true
}

#[test]
fn cells_are_exactly_the_hexagons_touching_the_box() {
    let bbox = ten_km_box();
    let grid = HexGrid::build(&bbox, EDGE).unwrap();
    let proj = grid.projection();
    let box_pts: Vec<(f64, f64)> = bbox.vertices().iter().map(|v| proj.forward(*v)).map(|p| (p.x, p.y)).collect();
    let mut expected = Vec::new();
    for r in -8..=8 {
        for q in -12..=12 {
            if convex_overlap(&hex_corners(q, r), &box_pts) {
                expected.push(Axial::new(q, r));
            }
        }
    }
    expected.sort_by_key(|a| (a.r, a.q));
    let got: Vec<Axial> = grid.cells().iter().map(|c| c.axial).collect();
    assert_eq!(got, expected);
    assert!(grid.len() > 30);
}

#[test]
fn interior_cells_have_six_neighbors() {
    let bbox = ten_km_box();
    let grid = HexGrid::build(&bbox, EDGE).unwrap();
    let proj = grid.projection();
    let lo = proj.forward(bbox.vertices()[0]);
    let (mut x0, mut y0, mut x1, mut y1) = (lo.x, lo.y, lo.x, lo.y);
    for v in bbox.vertices() {
        let p = proj.forward(*v);
        (x0, y0, x1, y1) = (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y));
    }
    // a hexagon wholly inside the box has all six neighbors touching it
    let mut interior = 0;
    for c in 0..grid.len() {
        let a = grid.cell(c).axial;
        let inside = hex_corners(a.q, a.r).iter().all(|&(x, y)| x > x0 && x < x1 && y > y0 && y < y1);
        if inside {
            assert_eq!(grid.neighbors(c).len(), 6, "cell {c}");
            interior += 1;
        }
    }
    assert!(interior >= 4);
    for c in 0..grid.len() {
        assert!(grid.neighbors(c).len() <= 6);
        for n in grid.neighbors(c) {
            assert!(grid.neighbors(n).contains(&c));
            let (a, b) = (grid.cell(c).center, grid.cell(n).center);
            assert!((a.dist(b) - EDGE * 3f64.sqrt()).abs() < 1e-9);
        }
    }
}

#[test]
fn centroids_locate_to_their_own_cell() {
    let grid = HexGrid::build(&ten_km_box(), EDGE).unwrap();
    for cell in grid.cells() {
        assert_eq!(grid.locate(cell.centroid.lat, cell.centroid.lon).unwrap(), cell.id);
    }
}

#[test]
fn counts_match_brute_force_on_random_trips() {
    let bbox = ten_km_box();
    let grid = HexGrid::build(&bbox, EDGE).unwrap();
    let (s, w, n, e) = bbox.bounds();
    let clock = SlotClock::new(1_451_606_400, 30, -300).unwrap();
    let slots = 96;
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let trips: Vec<TripRecord> = (0..1000)
        .map(|_| {
            // a few trips fall outside the window on either side
            let ts = clock.epoch + rng.random_range(-3_600..(slots as i64 * 1800 + 3_600));
            TripRecord::pickup_only(ts, rng.random_range(s..n), rng.random_range(w..e))
        })
        .collect();
    let region = RegionDataset { region_id: "box".into(), polygon: bbox, trips: trips.clone(), utc_offset_min: -300 };
    let (tensor, report) = count_demand(&region, &grid, clock, slots).unwrap();

    // nearest hexagon center is the containing hexagon
    let mut expected = vec![0u32; grid.len() * slots];
    let mut outside = 0;
    for t in &trips {
        let offset = t.pickup_time - clock.epoch;
        if offset < 0 || offset >= slots as i64 * 1800 {
            outside += 1;
            continue;
        }
        let k = (offset / 1800) as usize;
        let p = grid.projection().forward(t.pickup);
        let cell = (0..grid.len())
            .min_by(|&a, &b| grid.cell(a).center.dist(p).total_cmp(&grid.cell(b).center.dist(p)))
            .unwrap();
        expected[cell * slots + k] += 1;
    }
    assert_eq!(tensor.values(), expected.as_slice());
    assert_eq!(report.outside_window, outside);
    assert_eq!(report.counted + report.outside_window, 1000);
}

/// Crossing-number test written independently of the library.
fn oracle_inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[(i + n - 1) % n];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}

#[test]
fn point_in_polygon_agrees_with_crossing_numbers() {
    // concave "U" shape in lon/lat
    let verts = [(0.0, 0.0), (3.0, 0.0), (3.0, 3.0), (2.0, 3.0), (2.0, 1.0), (1.0, 1.0), (1.0, 3.0), (0.0, 3.0)];
    let polygon = Polygon::new(verts.iter().map(|&(lon, lat)| LatLon::new(lat, lon)).collect()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut inside = 0;
    for _ in 0..100 {
        let (x, y) = (rng.random_range(-0.5..3.5), rng.random_range(-0.5..3.5));
        let expected = oracle_inside(&verts, x, y);
        assert_eq!(polygon.contains(LatLon::new(y, x)), expected, "({x}, {y})");
        inside += usize::from(expected);
    }
    assert!(inside > 20 && inside < 80);
    // boundary points count as inside
    assert!(polygon.contains(LatLon::new(0.0, 1.5)));
    assert!(polygon.contains(LatLon::new(2.0, 1.0)));
    assert!(!polygon.contains(LatLon::new(2.0, 1.5)));
}
