//! Planar primitives: points, simple polygons, merged landmark contours,
//! bounding boxes and square ground footprints.
//!
//! All containment tests count points on a boundary as inside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Pose;

/// Relative tolerance for on-edge tests.
const EDGE_EPS: f64 = 1e-9;

/// World coordinates in meters, x east and y north.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Scale used to turn `EDGE_EPS` into an absolute tolerance.
fn scale(points: &[Point2]) -> f64 {
    points.iter().fold(1.0f64, |m, p| m.max(p.x.abs()).max(p.y.abs()))
}

fn on_segment(p: Point2, a: Point2, b: Point2, tol: f64) -> bool {
    let len = a.distance(&b);
    if len == 0.0 {
        return p.distance(&a) <= tol;
    }
    // distance to the supporting line, then the projection range
    if cross(a, b, p).abs() / len > tol {
        return false;
    }
    let t = ((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / (len * len);
    t >= -tol / len && t <= 1.0 + tol / len
}

fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2, tol: f64) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > tol && d2 < -tol) || (d1 < -tol && d2 > tol)) && ((d3 > tol && d4 < -tol) || (d3 < -tol && d4 > tol)) {
        return true;
    }
    on_segment(a, c, d, tol) || on_segment(b, c, d, tol) || on_segment(c, a, b, tol) || on_segment(d, a, b, tol)
}

/// A simple polygon with implicit closure. Validated on construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<Point2>,
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.vertices.iter().map(|v| [v.x, v.y]).collect()
    }
}

impl Polygon {
    /// Builds a polygon, rejecting fewer than three vertices, non-finite
    /// coordinates, zero area and self-intersections.
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(i) = vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPolygon(format!("vertex {i} is not finite")));
        }
        let poly = Self { vertices };
        let tol = EDGE_EPS * scale(&poly.vertices);
        if poly.signed_area().abs() <= tol {
            return Err(Error::InvalidPolygon("zero area".into()));
        }
        poly.check_simple(tol)?;
        Ok(poly)
    }

    pub fn from_xy(coords: &[[f64; 2]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point2::new(c[0], c[1])).collect())
    }

    /// Axis-aligned rectangle polygon, counter-clockwise.
    pub fn rect(min: Point2, max: Point2) -> Result<Self> {
        Self::new(vec![min, Point2::new(max.x, min.y), max, Point2::new(min.x, max.y)])
    }

    fn check_simple(&self, tol: f64) -> Result<()> {
        let n = self.vertices.len();
        let edge = |i: usize| (self.vertices[i], self.vertices[(i + 1) % n]);
        for i in 0..n {
            let (a, b) = edge(i);
            if a.distance(&b) <= tol {
                return Err(Error::InvalidPolygon(format!("edge {i} has zero length")));
            }
            // adjacent edge folding back onto this one
            let (_, c) = edge((i + 1) % n);
            if cross(a, b, c).abs() <= tol * a.distance(&b)
                && (c.x - b.x) * (b.x - a.x) + (c.y - b.y) * (b.y - a.y) < 0.0
            {
                return Err(Error::InvalidPolygon(format!("edges {i} and {} overlap", (i + 1) % n)));
            }
            for j in (i + 2)..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (c, d) = edge(j);
                if segments_intersect(a, b, c, d, tol) {
                    return Err(Error::InvalidPolygon(format!("edges {i} and {j} intersect")));
                }
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    /// Shoelace area, positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let a = self.vertices[i];
                let b = self.vertices[(i + 1) % n];
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn bounding_box(&self) -> Rect {
        Rect::enclosing(self.vertices.iter().copied()).expect("polygon has vertices")
    }

    /// Ray-cast containment with on-edge points counted inside.
    pub fn contains(&self, p: Point2) -> bool {
        let n = self.vertices.len();
        let tol = EDGE_EPS * scale(&self.vertices).max(p.x.abs()).max(p.y.abs());
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[j];
            if on_segment(p, a, b, tol) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }
}

/// True iff `p` lies inside `poly` or on its boundary.
pub fn point_in_polygon(p: Point2, poly: &Polygon) -> bool {
    poly.contains(p)
}

/// Union of instruction-landmark contours, kept as separate parts.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedContour {
    parts: Vec<Polygon>,
}

impl MergedContour {
    pub fn new(parts: Vec<Polygon>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::param("merged contour", "needs at least one part"));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[Polygon] {
        &self.parts
    }

    /// Number of parts containing `p`. Zero is outside, two or more marks
    /// an intersection (priority) region.
    pub fn membership(&self, p: Point2) -> usize {
        self.parts.iter().filter(|poly| poly.contains(p)).count()
    }

    pub fn bounding_box(&self) -> Rect {
        Rect::enclosing(self.parts.iter().flat_map(|p| p.vertices().iter().copied()))
            .expect("merged contour is non-empty")
    }
}

pub fn union_membership(p: Point2, merged: &MergedContour) -> usize {
    merged.membership(p)
}

pub fn bounding_box(merged: &MergedContour) -> Rect {
    merged.bounding_box()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn enclosing(points: impl IntoIterator<Item = Point2>) -> Option<Rect> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut r = Rect { min: first, max: first };
        for p in it {
            r.min.x = r.min.x.min(p.x);
            r.min.y = r.min.y.min(p.y);
            r.max.x = r.max.x.max(p.x);
            r.max.y = r.max.y.max(p.y);
        }
        Some(r)
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Point2 {
        Point2::new((self.min.x + self.max.x) / 2.0, (self.min.y + self.max.y) / 2.0)
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn expanded(&self, margin: f64) -> Rect {
        Rect {
            min: Point2::new(self.min.x - margin, self.min.y - margin),
            max: Point2::new(self.max.x + margin, self.max.y + margin),
        }
    }

    /// Euclidean distance from `p` to the rectangle, zero inside.
    pub fn distance_to(&self, p: Point2) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        dx.hypot(dy)
    }

    pub fn clamp(&self, p: Point2) -> Point2 {
        Point2::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }
}

/// Axis-aligned square ground footprint of a nadir camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub center: Point2,
    pub side: f64,
}

impl Footprint {
    pub fn contains(&self, p: Point2) -> bool {
        let h = self.side / 2.0;
        (p.x - self.center.x).abs() <= h && (p.y - self.center.y).abs() <= h
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    /// Area shared with another footprint.
    pub fn overlap_area(&self, other: &Footprint) -> f64 {
        let half = (self.side + other.side) / 2.0;
        let ox = (half - (self.center.x - other.center.x).abs())
            .max(0.0)
            .min(self.side.min(other.side));
        let oy = (half - (self.center.y - other.center.y).abs())
            .max(0.0)
            .min(self.side.min(other.side));
        ox * oy
    }
}

/// Ground footprint side length at altitude `z`: `(z - z_ground) * alpha`.
pub fn fov_side(z: f64, z_ground: f64, alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
    }
    let h = z - z_ground;
    if h.is_nan() || h <= 0.0 {
        return Err(Error::NonPositiveAltitude { z, z_ground });
    }
    Ok(h * alpha)
}

pub fn footprint_at(pose: &Pose, z_ground: f64, alpha: f64) -> Result<Footprint> {
    Ok(Footprint {
        center: pose.position(),
        side: fov_side(pose.z, z_ground, alpha)?,
    })
}

/// Sum of 3-D distances between consecutive poses.
pub fn path_length(trajectory: &[Pose]) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    Ok(trajectory
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            ((b.x - a.x).powi(2) + (b.y - a.y).powi(2) + (b.z - a.z).powi(2)).sqrt()
        })
        .sum())
}
