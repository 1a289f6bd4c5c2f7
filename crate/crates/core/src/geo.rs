//! Planar and geodesic geometry helpers.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// A point in a local planar frame, kilometers east (`x`) and north (`y`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        math::sqrt(dx * dx + dy * dy)
    }
}

/// Simple polygon in (lat, lon) degrees. The closing edge is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<LatLon>,
}

impl Polygon {
    /// Validates vertex count, non-zero area and simplicity.
    pub fn new(mut vertices: Vec<LatLon>) -> Result<Self> {
        if vertices.len() >= 2 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::config("polygon needs at least 3 distinct vertices"));
        }
        if vertices.iter().any(|v| !v.is_valid()) {
            return Err(Error::config("polygon vertex outside valid lat/lon range"));
        }
        let pts: Vec<Point> = vertices.iter().map(|v| Point::new(v.lon, v.lat)).collect();
        if signed_area(&pts).abs() <= BOUNDARY_EPS {
            return Err(Error::config("polygon has zero area"));
        }
        if is_self_intersecting(&pts) {
            return Err(Error::config("polygon is self-intersecting"));
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[south, north] x [west, east]`.
    pub fn rectangle(south: f64, west: f64, north: f64, east: f64) -> Result<Self> {
        Self::new(alloc::vec![
            LatLon::new(south, west),
            LatLon::new(south, east),
            LatLon::new(north, east),
            LatLon::new(north, west),
        ])
    }

    pub fn vertices(&self) -> &[LatLon] {
        &self.vertices
    }

    /// `(min_lat, min_lon, max_lat, max_lon)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), v| (a.min(v.lat), b.min(v.lon), c.max(v.lat), d.max(v.lon)),
        )
    }

    /// Center of the lat/lon bounding box.
    pub fn bbox_center(&self) -> LatLon {
        let (s, w, n, e) = self.bounds();
        LatLon::new((s + n) / 2.0, (w + e) / 2.0)
    }

    /// Inside-or-on-boundary test in the lat/lon plane.
    pub fn contains(&self, p: LatLon) -> bool {
        let pts: Vec<Point> = self.vertices.iter().map(|v| Point::new(v.lon, v.lat)).collect();
        contains_point(&pts, Point::new(p.lon, p.lat))
    }
}

pub fn signed_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(p: Point, a: Point, b: Point, eps: f64) -> bool {
    let len = a.dist(b).max(f64::MIN_POSITIVE);
    cross(a, b, p).abs() / len <= eps
        && p.x >= a.x.min(b.x) - eps
        && p.x <= a.x.max(b.x) + eps
        && p.y >= a.y.min(b.y) - eps
        && p.y <= a.y.max(b.y) + eps
}

/// Closed segment intersection test.
pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(a, c, d, 0.0) || on_segment(b, c, d, 0.0) || on_segment(c, a, b, 0.0) || on_segment(d, a, b, 0.0)
}

fn is_self_intersecting(pts: &[Point]) -> bool {
    let n = pts.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Point-in-polygon by ray casting; points on an edge count as inside.
pub fn contains_point(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if on_segment(p, a, b, BOUNDARY_EPS) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Whether two simple polygons share at least one point.
pub fn polygons_intersect(a: &[Point], b: &[Point]) -> bool {
    let (na, nb) = (a.len(), b.len());
    for i in 0..na {
        for j in 0..nb {
            if segments_intersect(a[i], a[(i + 1) % na], b[j], b[(j + 1) % nb]) {
                return true;
            }
        }
    }
    contains_point(a, b[0]) || contains_point(b, a[0])
}

/// Azimuthal equidistant projection centered on `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalProjection {
    origin: LatLon,
    sin_lat0: f64,
    cos_lat0: f64,
}

impl LocalProjection {
    pub fn new(origin: LatLon) -> Self {
        let phi0 = origin.lat.to_radians();
        Self { origin, sin_lat0: math::sin(phi0), cos_lat0: math::cos(phi0) }
    }

    pub fn origin(&self) -> LatLon {
        self.origin
    }

    pub fn forward(&self, p: LatLon) -> Point {
        let phi = p.lat.to_radians();
        let dlambda = (p.lon - self.origin.lon).to_radians();
        let (sin_phi, cos_phi) = (math::sin(phi), math::cos(phi));
        let cos_dl = math::cos(dlambda);
        let cos_c = (self.sin_lat0 * sin_phi + self.cos_lat0 * cos_phi * cos_dl).clamp(-1.0, 1.0);
        let c = libm::acos(cos_c);
        let k = if c.abs() < 1e-12 { 1.0 } else { c / math::sin(c) };
        Point::new(
            EARTH_RADIUS_KM * k * cos_phi * math::sin(dlambda),
            EARTH_RADIUS_KM * k * (self.cos_lat0 * sin_phi - self.sin_lat0 * cos_phi * cos_dl),
        )
    }

    pub fn inverse(&self, p: Point) -> LatLon {
        let rho = math::sqrt(p.x * p.x + p.y * p.y);
        if rho < 1e-12 {
            return self.origin;
        }
        let c = rho / EARTH_RADIUS_KM;
        let (sin_c, cos_c) = (math::sin(c), math::cos(c));
        let phi = math::asin((cos_c * self.sin_lat0 + p.y * sin_c * self.cos_lat0 / rho).clamp(-1.0, 1.0));
        let lambda = math::atan2(p.x * sin_c, rho * self.cos_lat0 * cos_c - p.y * self.sin_lat0 * sin_c);
        LatLon::new(phi.to_degrees(), self.origin.lon + lambda.to_degrees())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Polygon {
        Polygon::rectangle(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn square_contains_interior_and_boundary() {
        let sq = unit_square();
        assert!(sq.contains(LatLon::new(0.5, 0.5)));
        assert!(sq.contains(LatLon::new(0.0, 0.0)));
        assert!(sq.contains(LatLon::new(0.0, 0.5)));
        assert!(!sq.contains(LatLon::new(1.0001, 0.5)));
    }

    #[test]
    fn degenerate_polygons_are_rejected() {
        let line = alloc::vec![LatLon::new(0.0, 0.0), LatLon::new(1.0, 1.0), LatLon::new(2.0, 2.0)];
        assert!(matches!(Polygon::new(line), Err(Error::Config(_))));
        assert!(Polygon::new(alloc::vec![LatLon::new(0.0, 0.0), LatLon::new(1.0, 1.0)]).is_err());
        let bowtie = alloc::vec![
            LatLon::new(0.0, 0.0),
            LatLon::new(1.0, 1.0),
            LatLon::new(1.0, 0.0),
            LatLon::new(0.0, 1.0),
        ];
        assert!(Polygon::new(bowtie).is_err());
    }

    #[test]
    fn projection_round_trips_and_preserves_radial_distance() {
        let proj = LocalProjection::new(LatLon::new(40.75, -73.98));
        let p = LatLon::new(40.80, -73.90);
        let back = proj.inverse(proj.forward(p));
        assert!((back.lat - p.lat).abs() < 1e-10 && (back.lon - p.lon).abs() < 1e-10);
        // one degree of latitude due north is R * pi / 180 km
        let north = proj.forward(LatLon::new(41.75, -73.98));
        assert!((north.y - EARTH_RADIUS_KM * math::PI / 180.0).abs() < 1e-9);
        assert!(north.x.abs() < 1e-9);
    }
}
