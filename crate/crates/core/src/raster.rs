//! Pixel-center rasterization and mask region algebra.
//!
//! A pixel is foreground iff its center `(col + 0.5, row + 0.5)` is inside or
//! on the shape.

use std::collections::VecDeque;

use crate::error::Result;
use crate::geometry::{Circle, Ellipse, Point2, Quadrilateral};
use crate::grid::BinaryMask;

/// Fills a simple polygon with the even-odd rule; boundary points count as
/// inside.
pub fn fill_polygon(vertices: &[Point2], width: usize, height: usize) -> BinaryMask {
    let mut mask = BinaryMask::filled(width, height, false);
    let n = vertices.len();
    if n == 0 {
        return mask;
    }
    let edges: Vec<(Point2, Point2)> = (0..n).map(|i| (vertices[i], vertices[(i + 1) % n])).collect();
    let mut crossings = Vec::with_capacity(n);
    let mut spans: Vec<(f64, f64)> = Vec::with_capacity(2 * n);
    for row in 0..height {
        let y = row as f64 + 0.5;
        crossings.clear();
        spans.clear();
        for &(p, q) in &edges {
            let (lo, hi) = (p.y.min(q.y), p.y.max(q.y));
            if y < lo || y > hi {
                continue;
            }
            if p.y == q.y {
                spans.push((p.x.min(q.x), p.x.max(q.x)));
                continue;
            }
            let x = edge_x(p, q, y);
            spans.push((x, x));
            if y < hi {
                crossings.push(x);
            }
        }
        crossings.sort_by(f64::total_cmp);
        spans.extend(crossings.chunks_exact(2).map(|pair| (pair[0], pair[1])));
        for &(lo, hi) in &spans {
            fill_span(&mut mask, row, lo, hi);
        }
    }
    mask
}

pub fn fill_quad(quad: &Quadrilateral, width: usize, height: usize) -> BinaryMask {
    fill_polygon(&quad.vertices, width, height)
}

#[inline]
fn edge_x(p: Point2, q: Point2, y: f64) -> f64 {
    if y == p.y {
        return p.x;
    }
    if y == q.y {
        return q.x;
    }
    p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y)
}

/// Marks pixels of `row` whose center x lies in `[lo, hi]`.
fn fill_span(mask: &mut BinaryMask, row: usize, lo: f64, hi: f64) {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(mask.width() as f64 - 1.0);
    if first > last {
        return;
    }
    for col in first as usize..=last as usize {
        mask.set(row, col, true);
    }
}

pub fn fill_disc(circle: &Circle, width: usize, height: usize) -> BinaryMask {
    let r2 = circle.radius * circle.radius;
    let c = circle.center;
    BinaryMask::from_fn(width, height, |row, col| {
        let p = Point2::pixel_center(row, col);
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        dx * dx + dy * dy <= r2
    })
}

/// Rotated ellipse; a zero or negative semi-axis yields an empty mask.
pub fn fill_ellipse(ellipse: &Ellipse, width: usize, height: usize) -> BinaryMask {
    let (a, b) = ellipse.semi_axes;
    if !(a > 0.0 && b > 0.0) {
        return BinaryMask::filled(width, height, false);
    }
    if a == b {
        // rotation is irrelevant for a circle
        return fill_disc(
            &Circle {
                center: ellipse.center,
                radius: a,
            },
            width,
            height,
        );
    }
    let (sin, cos) = ellipse.angle.sin_cos();
    let c = ellipse.center;
    BinaryMask::from_fn(width, height, |row, col| {
        let p = Point2::pixel_center(row, col);
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        let u = (dx * cos + dy * sin) / a;
        let v = (-dx * sin + dy * cos) / b;
        u * u + v * v <= 1.0
    })
}

/// Partition of the pixel set induced by a (Q, C) mask pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Regions {
    /// `C − Q`: inside the circle, outside the quadrilateral.
    pub ambiguous: BinaryMask,
    /// `Q ∪ (P − C)`: pixels where Q, C and the true mask coincide.
    pub agreement: BinaryMask,
    /// Q restricted to C.
    pub q_clamped: BinaryMask,
    /// Q pixels that fell outside C and were dropped from `q_clamped`.
    pub clamped: usize,
}

pub fn region_algebra(q: &BinaryMask, c: &BinaryMask) -> Result<Regions> {
    q.check_same_dims(c)?;
    let outside = q.and_not(c)?;
    let clamped = outside.count();
    if clamped > 0 {
        log::warn!("{clamped} quadrilateral pixels outside the circle clamped to background");
    }
    let q_clamped = q.and(c)?;
    let ambiguous = c.and_not(&q_clamped)?;
    let agreement = ambiguous.not();
    Ok(Regions {
        ambiguous,
        agreement,
        q_clamped,
        clamped,
    })
}

/// 8-connected foreground components, ordered by their first pixel in scan
/// order.
pub fn connected_components(mask: &BinaryMask) -> Vec<BinaryMask> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || !mask.as_slice()[start] {
            continue;
        }
        let mut comp = BinaryMask::filled(w, h, false);
        seen[start] = true;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            comp.as_mut_slice()[idx] = true;
            let (row, col) = ((idx / w) as i64, (idx % w) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (r, c) = (row + dr, col + dc);
                    if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
                        continue;
                    }
                    let j = r as usize * w + c as usize;
                    if !seen[j] && mask.as_slice()[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Foreground pixels with a background 4-neighbour or touching the image
/// border, as `(row, col)` in scan order.
pub fn boundary_pixels(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (w, h) = mask.dims();
    let mut out = Vec::new();
    for row in 0..h {
        for col in 0..w {
            if !*mask.get(row, col) {
                continue;
            }
            let edge = row == 0
                || col == 0
                || row + 1 == h
                || col + 1 == w
                || !*mask.get(row - 1, col)
                || !*mask.get(row + 1, col)
                || !*mask.get(row, col - 1)
                || !*mask.get(row, col + 1);
            if edge {
                out.push((row, col));
            }
        }
    }
    out
}
