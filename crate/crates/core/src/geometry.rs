//! Continuous shapes behind the dual masks, and RECIST extraction from masks.
//!
//! Coordinates are in pixels with `x` along columns and `y` along rows. Pixel
//! `(row, col)` has its center at `(col + 0.5, row + 0.5)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BinaryMask;
use crate::raster;

/// Shortest diameter accepted by [`quad_from_recist`] and [`ellipse_from_recist`].
pub const MIN_DIAMETER_PX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Center of pixel `(row, col)`.
    #[inline]
    pub fn pixel_center(row: usize, col: usize) -> Self {
        Self::new(col as f64 + 0.5, row as f64 + 0.5)
    }

    #[inline]
    pub fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }

    #[inline]
    pub fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }

    #[inline]
    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }

    #[inline]
    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn dist(self, o: Self) -> f64 {
        self.sub(o).norm2().sqrt()
    }

    #[inline]
    pub fn dist2(self, o: Self) -> f64 {
        self.sub(o).norm2()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Lexicographic order on `(x, y)`.
    pub fn lex_cmp(&self, o: &Self) -> Ordering {
        self.x.total_cmp(&o.x).then(self.y.total_cmp(&o.y))
    }
}

/// Tolerances for the RECIST invariants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecistTolerance {
    /// Allowed deviation from a right angle between the diameters, in degrees.
    pub angle_deg: f64,
    /// Largest allowed distance between the two segments, in pixels.
    pub gap_px: f64,
}

impl Default for RecistTolerance {
    fn default() -> Self {
        Self {
            angle_deg: 2.0,
            gap_px: 0.5,
        }
    }
}

/// Major and minor diameters of one lesion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecistPair {
    pub major_a: Point2,
    pub major_b: Point2,
    pub minor_a: Point2,
    pub minor_b: Point2,
}

impl RecistPair {
    pub fn new(major_a: Point2, major_b: Point2, minor_a: Point2, minor_b: Point2) -> Self {
        Self {
            major_a,
            major_b,
            minor_a,
            minor_b,
        }
    }

    pub fn endpoints(&self) -> [Point2; 4] {
        [self.major_a, self.major_b, self.minor_a, self.minor_b]
    }

    pub fn major_len(&self) -> f64 {
        self.major_a.dist(self.major_b)
    }

    pub fn minor_len(&self) -> f64 {
        self.minor_a.dist(self.minor_b)
    }

    /// Angle between the two diameters in degrees, folded into [0, 90].
    pub fn crossing_angle_deg(&self) -> f64 {
        let u = self.major_b.sub(self.major_a);
        let v = self.minor_b.sub(self.minor_a);
        let cos = (u.dot(v) / (u.norm2().sqrt() * v.norm2().sqrt())).abs();
        cos.min(1.0).acos().to_degrees()
    }

    /// Distance between the two segments (0 when they cross).
    pub fn segment_gap(&self) -> f64 {
        segment_distance(self.major_a, self.major_b, self.minor_a, self.minor_b)
    }

    /// Checks the RECIST invariants: finite endpoints, major not shorter than
    /// minor, near-perpendicular and near-intersecting diameters.
    pub fn validate(&self, tol: &RecistTolerance) -> Result<()> {
        if !self.endpoints().iter().all(|p| p.is_finite()) {
            return Err(Error::InvalidAnnotation("non-finite endpoint".into()));
        }
        let (major, minor) = (self.major_len(), self.minor_len());
        if major == 0.0 || minor == 0.0 {
            return Err(Error::DegenerateAnnotation("zero-length diameter".into()));
        }
        if minor > major * (1.0 + 1e-12) {
            return Err(Error::InvalidAnnotation(format!(
                "minor diameter {minor:.3} longer than major {major:.3}"
            )));
        }
        let angle = self.crossing_angle_deg();
        if 90.0 - angle > tol.angle_deg {
            return Err(Error::InvalidAnnotation(format!(
                "diameters cross at {angle:.2}°, tolerance {}°",
                tol.angle_deg
            )));
        }
        let gap = self.segment_gap();
        if gap > tol.gap_px {
            return Err(Error::InvalidAnnotation(format!(
                "diameters are {gap:.3} px apart, tolerance {} px",
                tol.gap_px
            )));
        }
        Ok(())
    }

    fn check_degenerate(&self) -> Result<()> {
        if !self.endpoints().iter().all(|p| p.is_finite()) {
            return Err(Error::DegenerateAnnotation("non-finite endpoint".into()));
        }
        for (name, len) in [("major", self.major_len()), ("minor", self.minor_len())] {
            if len < MIN_DIAMETER_PX {
                return Err(Error::DegenerateAnnotation(format!(
                    "{name} diameter is {len:.3} px (< {MIN_DIAMETER_PX} px)"
                )));
            }
        }
        let u = self.major_b.sub(self.major_a);
        let scale = u.norm2().sqrt();
        let off_a = u.cross(self.minor_a.sub(self.major_a)).abs() / scale;
        let off_b = u.cross(self.minor_b.sub(self.major_a)).abs() / scale;
        if off_a < 1e-9 && off_b < 1e-9 {
            return Err(Error::DegenerateAnnotation(
                "all four endpoints are collinear".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point2,
    pub radius: f64,
}

impl Circle {
    pub fn contains(&self, p: Point2, tol: f64) -> bool {
        self.center.dist(p) <= self.radius + tol
    }

    fn diametral(a: Point2, b: Point2) -> Self {
        let center = a.add(b).scale(0.5);
        Self {
            center,
            radius: center.dist(a).max(center.dist(b)),
        }
    }

    /// Circle through three points; `None` when they are collinear.
    fn circumscribed(a: Point2, b: Point2, c: Point2) -> Option<Self> {
        let ab = b.sub(a);
        let ac = c.sub(a);
        let d = 2.0 * ab.cross(ac);
        let scale = ab.norm2().max(ac.norm2());
        if d.abs() <= 1e-12 * scale {
            return None;
        }
        let (b2, c2) = (ab.norm2(), ac.norm2());
        let offset = Point2::new((ac.y * b2 - ab.y * c2) / d, (ab.x * c2 - ac.x * b2) / d);
        let center = a.add(offset);
        let radius = center.dist(a).max(center.dist(b)).max(center.dist(c));
        Some(Self { center, radius })
    }
}

/// Four vertices in cyclic order `major_a, minor_a, major_b, minor_b`, so the
/// diameters are the diagonals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadrilateral {
    pub vertices: [Point2; 4],
}

impl Quadrilateral {
    /// Absolute shoelace area.
    pub fn area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    /// True when no two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        let v = &self.vertices;
        !segments_intersect(v[0], v[1], v[2], v[3]) && !segments_intersect(v[1], v[2], v[3], v[0])
    }
}

/// Absolute area of a polygon by the shoelace formula.
pub fn polygon_area(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    let twice: f64 = (0..n)
        .map(|i| vertices[i].cross(vertices[(i + 1) % n]))
        .sum();
    twice.abs() / 2.0
}

pub fn quad_from_recist(r: &RecistPair) -> Result<Quadrilateral> {
    r.check_degenerate()?;
    Ok(Quadrilateral {
        vertices: [r.major_a, r.minor_a, r.major_b, r.minor_b],
    })
}

/// Smallest circle containing every point (incremental Welzl construction).
pub fn min_enclosing_circle(points: &[Point2]) -> Result<Circle> {
    let first = *points.first().ok_or(Error::EmptyInput)?;
    if !points.iter().all(|p| p.is_finite()) {
        return Err(Error::InvalidConfig("non-finite point".into()));
    }
    let tol = |c: &Circle| 1e-12 * (1.0 + c.radius);
    let mut circle = Circle {
        center: first,
        radius: 0.0,
    };
    for i in 1..points.len() {
        if circle.contains(points[i], tol(&circle)) {
            continue;
        }
        circle = Circle {
            center: points[i],
            radius: 0.0,
        };
        for j in 0..i {
            if circle.contains(points[j], tol(&circle)) {
                continue;
            }
            circle = Circle::diametral(points[i], points[j]);
            for k in 0..j {
                if circle.contains(points[k], tol(&circle)) {
                    continue;
                }
                circle = Circle::circumscribed(points[i], points[j], points[k]).unwrap_or_else(
                    || {
                        // collinear: the farthest pair spans the circle
                        [
                            (points[i], points[j]),
                            (points[i], points[k]),
                            (points[j], points[k]),
                        ]
                        .into_iter()
                        .map(|(a, b)| Circle::diametral(a, b))
                        .max_by(|a, b| a.radius.total_cmp(&b.radius))
                        .expect("three candidates")
                    },
                );
            }
        }
    }
    Ok(circle)
}

/// Ellipse given by center, semi-axes and the angle of the first axis
/// (radians, measured from +x towards +y).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: Point2,
    pub semi_axes: (f64, f64),
    pub angle: f64,
}

/// Ellipse centered where the diameters cross, aligned with the major.
pub fn ellipse_from_recist(r: &RecistPair) -> Result<Ellipse> {
    r.check_degenerate()?;
    let u = r.major_b.sub(r.major_a);
    let v = r.minor_b.sub(r.minor_a);
    let denom = u.cross(v);
    let center = if denom.abs() > 1e-12 * u.norm2().sqrt() * v.norm2().sqrt() {
        let t = r.minor_a.sub(r.major_a).cross(v) / denom;
        r.major_a.add(u.scale(t))
    } else {
        r.major_a.add(r.major_b).scale(0.5)
    };
    let angle = u.y.atan2(u.x).rem_euclid(std::f64::consts::PI);
    Ok(Ellipse {
        center,
        semi_axes: (r.major_len() / 2.0, r.minor_len() / 2.0),
        angle,
    })
}

/// Extracts RECIST diameters from the largest connected component of `mask`.
pub fn extract_recist_from_mask(mask: &BinaryMask) -> Result<RecistPair> {
    extract_recist_with(mask, &RecistTolerance::default())
}

pub fn extract_recist_with(mask: &BinaryMask, tol: &RecistTolerance) -> Result<RecistPair> {
    let components = raster::connected_components(mask);
    let largest = components
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.count().cmp(&b.count()).then(ib.cmp(ia)))
        .map(|(_, c)| c)
        .ok_or(Error::EmptyMask)?;
    extract_from_component(largest, tol)
}

/// One RECIST pair per 8-connected component, in scan order of each
/// component's first pixel.
pub fn extract_all_recists(mask: &BinaryMask) -> Result<Vec<RecistPair>> {
    let tol = RecistTolerance::default();
    let components = raster::connected_components(mask);
    if components.is_empty() {
        return Err(Error::EmptyMask);
    }
    components
        .iter()
        .map(|c| extract_from_component(c, &tol))
        .collect()
}

/// Distance each extracted endpoint is pushed outward along its diameter.
///
/// Boundary pixel centers sit half a pixel inside the lesion edge, so a run
/// of `n` pixels measures `n` px edge to edge rather than `n − 1`. Without
/// this the enclosing circle clips the rim next to the major endpoints.
pub const CALIPER_EXTENSION_PX: f64 = 0.5;

/// Moves both endpoints of each diameter `by` pixels away from each other.
pub fn extend_endpoints(r: &RecistPair, by: f64) -> RecistPair {
    let push = |a: Point2, b: Point2| {
        let d = b.sub(a);
        let u = d.scale(1.0 / d.norm2().sqrt());
        (a.sub(u.scale(by)), b.add(u.scale(by)))
    };
    let (major_a, major_b) = push(r.major_a, r.major_b);
    let (minor_a, minor_b) = push(r.minor_a, r.minor_b);
    RecistPair::new(major_a, major_b, minor_a, minor_b)
}

/// `component` must hold a single connected component. Endpoints are
/// boundary pixel centers extended by [`CALIPER_EXTENSION_PX`].
pub fn extract_from_component(component: &BinaryMask, tol: &RecistTolerance) -> Result<RecistPair> {
    extract_pixel_centers(component, tol).map(|r| extend_endpoints(&r, CALIPER_EXTENSION_PX))
}

/// Extraction with endpoints left on boundary pixel centers. When no pair
/// of boundary pixels is perpendicular enough, the minor is the exact
/// perpendicular chord of their convex hull instead.
pub fn extract_pixel_centers(component: &BinaryMask, tol: &RecistTolerance) -> Result<RecistPair> {
    let boundary: Vec<Point2> = raster::boundary_pixels(component)
        .into_iter()
        .map(|(r, c)| Point2::pixel_center(r, c))
        .collect();
    if boundary.is_empty() {
        return Err(Error::EmptyMask);
    }
    if boundary.len() < 4 {
        return Err(Error::TooSmall {
            boundary: boundary.len(),
        });
    }

    let hull = convex_hull(&boundary);
    let (major_a, major_b) = farthest_pair(&hull);

    let axis = major_b.sub(major_a);
    let axis_len = axis.norm2().sqrt();
    let max_cos = tol.angle_deg.to_radians().sin();
    let mut candidates: Vec<(f64, Point2, Point2)> = Vec::new();
    for (i, &p) in boundary.iter().enumerate() {
        for &q in &boundary[i + 1..] {
            let d = q.sub(p);
            let len2 = d.norm2();
            if (d.dot(axis)).abs() > max_cos * len2.sqrt() * axis_len {
                continue;
            }
            let (a, b) = if p.lex_cmp(&q) == Ordering::Greater {
                (q, p)
            } else {
                (p, q)
            };
            candidates.push((len2, a, b));
        }
    }
    candidates.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then(x.1.lex_cmp(&y.1))
            .then(x.2.lex_cmp(&y.2))
    });
    let (minor_a, minor_b) = candidates
        .into_iter()
        .find(|&(_, a, b)| {
            segment_distance(major_a, major_b, a, b) <= tol.gap_px
                && chord_inside(component, a, b)
        })
        .map(|(_, a, b)| (a, b))
        // small lesions with a tilted major may have no lattice pair that
        // close to perpendicular
        .or_else(|| hull_perpendicular_chord(&hull, major_a, major_b))
        .ok_or_else(|| {
            Error::DegenerateAnnotation("no perpendicular chord crosses the major diameter".into())
        })?;

    Ok(RecistPair::new(major_a, major_b, minor_a, minor_b))
}

/// Longest chord of the convex polygon `hull` exactly perpendicular to the
/// major and crossing it. Chord length is concave along the axis, so only
/// the projections of hull vertices need to be tried.
fn hull_perpendicular_chord(hull: &[Point2], major_a: Point2, major_b: Point2) -> Option<(Point2, Point2)> {
    let axis = major_b.sub(major_a);
    let len = axis.norm2().sqrt();
    if hull.len() < 3 || len == 0.0 {
        return None;
    }
    let u = axis.scale(1.0 / len);
    let n = Point2::new(-u.y, u.x);
    let mut best: Option<(f64, Point2, Point2)> = None;
    for v in hull {
        let m = major_a.add(u.scale(v.sub(major_a).dot(u).clamp(0.0, len)));
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (i, &p) in hull.iter().enumerate() {
            let q = hull[(i + 1) % hull.len()];
            let (fp, fq) = (p.sub(m).dot(u), q.sub(m).dot(u));
            let mut hit = |x: Point2| {
                let s = x.sub(m).dot(n);
                lo = lo.min(s);
                hi = hi.max(s);
            };
            if fp == 0.0 {
                hit(p);
            }
            if (fp < 0.0 && fq > 0.0) || (fp > 0.0 && fq < 0.0) {
                hit(p.add(q.sub(p).scale(fp / (fp - fq))));
            }
        }
        if hi > lo && best.is_none_or(|b| hi - lo > b.0) {
            best = Some((hi - lo, m.add(n.scale(lo)), m.add(n.scale(hi))));
        }
    }
    best.map(|(_, a, b)| if a.lex_cmp(&b) == Ordering::Greater { (b, a) } else { (a, b) })
}

/// Farthest pair among `points`; ties resolve to the lexicographically
/// smallest `(a, b)` with `a <= b`.
fn farthest_pair(points: &[Point2]) -> (Point2, Point2) {
    let mut best = (f64::NEG_INFINITY, points[0], points[0]);
    for (i, &p) in points.iter().enumerate() {
        for &q in &points[i + 1..] {
            let (a, b) = if p.lex_cmp(&q) == Ordering::Greater {
                (q, p)
            } else {
                (p, q)
            };
            let d = a.dist2(b);
            let better = match d.total_cmp(&best.0) {
                Ordering::Greater => true,
                Ordering::Equal => a
                    .lex_cmp(&best.1)
                    .then(b.lex_cmp(&best.2))
                    .is_lt(),
                Ordering::Less => false,
            };
            if better {
                best = (d, a, b);
            }
        }
    }
    (best.1, best.2)
}

/// Samples the chord every quarter pixel; each sample must fall in a
/// foreground pixel or one of its 8 neighbours.
fn chord_inside(mask: &BinaryMask, a: Point2, b: Point2) -> bool {
    let steps = (a.dist(b) * 4.0).ceil().max(1.0) as usize;
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    (0..=steps).all(|s| {
        let t = s as f64 / steps as f64;
        let p = a.add(b.sub(a).scale(t));
        let (col, row) = (p.x.floor() as i64, p.y.floor() as i64);
        (-1..=1).any(|dr| {
            (-1..=1).any(|dc| {
                let (r, c) = (row + dr, col + dc);
                r >= 0 && c >= 0 && r < h && c < w && *mask.get(r as usize, c as usize)
            })
        })
    })
}

/// Strict convex hull (Andrew's monotone chain), counter-clockwise in a
/// y-up frame; collinear boundary points are dropped.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.lex_cmp(b));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Point2, a: Point2, b: Point2| a.sub(o).cross(b.sub(o));
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test.
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.norm2();
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a.add(ab.scale(t)))
}

/// Euclidean distance between closed segments `ab` and `cd`.
pub fn segment_distance(a: Point2, b: Point2, c: Point2, d: Point2) -> f64 {
    if segments_intersect(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    #[test]
    fn rhombus_from_cross() {
        let r = RecistPair::new(p(0., 0.), p(4., 0.), p(2., -2.), p(2., 2.));
        let q = quad_from_recist(&r).unwrap();
        assert_eq!(q.vertices, [p(0., 0.), p(2., -2.), p(4., 0.), p(2., 2.)]);
        assert_eq!(q.area(), 8.0);
        assert!(q.is_simple());
    }

    #[test]
    fn kite_area() {
        let r = RecistPair::new(p(0., 0.), p(10., 0.), p(5., -3.), p(5., 4.));
        let q = quad_from_recist(&r).unwrap();
        assert_eq!(q.vertices, [p(0., 0.), p(5., -3.), p(10., 0.), p(5., 4.)]);
        assert!((q.area() - 35.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_annotations() {
        let r = RecistPair::new(p(0., 0.), p(1., 0.), p(0.5, 0.), p(0.5, 0.));
        assert!(matches!(
            quad_from_recist(&r),
            Err(Error::DegenerateAnnotation(_))
        ));
        let collinear = RecistPair::new(p(0., 0.), p(10., 0.), p(2., 0.), p(6., 0.));
        assert!(matches!(
            quad_from_recist(&collinear),
            Err(Error::DegenerateAnnotation(_))
        ));
        assert!(matches!(
            ellipse_from_recist(&r),
            Err(Error::DegenerateAnnotation(_))
        ));
    }

    #[test]
    fn mec_small_cases() {
        let c = min_enclosing_circle(&[p(0., 0.), p(2., 0.)]).unwrap();
        assert_eq!(c.center, p(1., 0.));
        assert_eq!(c.radius, 1.0);

        let c = min_enclosing_circle(&[p(1., 1.), p(1., -1.), p(-1., 1.), p(-1., -1.)]).unwrap();
        assert!(c.center.dist(p(0., 0.)) < 1e-12);
        assert!((c.radius - 2f64.sqrt()).abs() < 1e-12);

        let c = min_enclosing_circle(&[p(3., 4.)]).unwrap();
        assert_eq!((c.center, c.radius), (p(3., 4.), 0.0));

        assert!(matches!(min_enclosing_circle(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn mec_collinear_points() {
        let c = min_enclosing_circle(&[p(0., 0.), p(1., 0.), p(5., 0.), p(3., 0.)]).unwrap();
        assert!((c.center.x - 2.5).abs() < 1e-12 && c.center.y.abs() < 1e-12);
        assert!((c.radius - 2.5).abs() < 1e-12);
    }

    #[test]
    fn ellipse_examples() {
        let e = ellipse_from_recist(&RecistPair::new(p(0., 0.), p(4., 0.), p(2., -2.), p(2., 2.)))
            .unwrap();
        assert_eq!(e.center, p(2., 0.));
        assert_eq!(e.semi_axes, (2.0, 2.0));
        assert_eq!(e.angle, 0.0);

        let e = ellipse_from_recist(&RecistPair::new(p(0., 0.), p(10., 0.), p(5., -3.), p(5., 4.)))
            .unwrap();
        assert!(e.center.dist(p(5., 0.)) < 1e-12);
        assert_eq!(e.semi_axes, (5.0, 3.5));
    }

    #[test]
    fn validate_flags_bad_pairs() {
        let tol = RecistTolerance::default();
        let good = RecistPair::new(p(0., 0.), p(10., 0.), p(5., -3.), p(5., 4.));
        assert!(good.validate(&tol).is_ok());
        let swapped = RecistPair::new(p(5., -3.), p(5., 4.), p(0., 0.), p(10., 0.));
        assert!(swapped.validate(&tol).is_err());
        let skew = RecistPair::new(p(0., 0.), p(10., 0.), p(4., -3.), p(6., 3.));
        assert!(skew.validate(&tol).is_err());
        let apart = RecistPair::new(p(0., 0.), p(10., 0.), p(5., 1.), p(5., 4.));
        assert!(apart.validate(&tol).is_err());
    }

    #[test]
    fn hull_drops_interior_and_collinear() {
        let pts = [p(0., 0.), p(1., 0.), p(2., 0.), p(2., 2.), p(0., 2.), p(1., 1.)];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!((polygon_area(&hull) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn segment_distance_cases() {
        assert_eq!(
            segment_distance(p(0., 0.), p(4., 0.), p(2., -1.), p(2., 1.)),
            0.0
        );
        assert!((segment_distance(p(0., 0.), p(4., 0.), p(2., 0.5), p(2., 3.)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_extraction() {
        let m = BinaryMask::filled(8, 8, false);
        assert!(matches!(extract_recist_from_mask(&m), Err(Error::EmptyMask)));
    }

    #[test]
    fn tiny_component_is_too_small() {
        let mut m = BinaryMask::filled(8, 8, false);
        m.set(3, 3, true);
        m.set(3, 4, true);
        assert!(matches!(
            extract_recist_from_mask(&m),
            Err(Error::TooSmall { boundary: 2 })
        ));
    }
}
