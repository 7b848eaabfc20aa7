//! Polygon checks and scanline coverage.
//!
//! Inside-ness follows the crossing-number rule: a point `(px, py)` is inside
//! when an odd number of edges satisfy `(y0 > py) != (y1 > py)` and cross the
//! horizontal line at an `x` strictly greater than `px`. Along one scanline
//! this makes each span half-open, `[x_enter, x_exit)`.

use crate::error::{Error, Result};

pub type Point = (f64, f64);

/// Checks vertex count, bounds and that no two non-adjacent edges touch.
pub fn validate_polygon(points: &[Point], width: u32, height: u32) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::InvalidPolygon(format!(
            "need at least 3 vertices, got {}",
            points.len()
        )));
    }
    for &(x, y) in points {
        if !(x.is_finite() && y.is_finite())
            || x < 0.0
            || y < 0.0
            || x > width as f64
            || y > height as f64
        {
            return Err(Error::InvalidPolygon(format!(
                "vertex ({x}, {y}) outside slide bounds {width}x{height}"
            )));
        }
    }
    let n = points.len();
    for i in 0..n {
        let a = (points[i], points[(i + 1) % n]);
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let b = (points[j], points[(j + 1) % n]);
            if segments_intersect(a.0, a.1, b.0, b.1) {
                return Err(Error::InvalidPolygon(format!(
                    "edges {i} and {j} intersect"
                )));
            }
        }
    }
    Ok(())
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// Closed-segment intersection test, including collinear overlap.
pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Axis-aligned bounding box `(min_x, min_y, max_x, max_y)`.
pub fn bounding_box(points: &[Point]) -> (f64, f64, f64, f64) {
    points.iter().fold(
        (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        ),
        |(x0, y0, x1, y1), &(x, y)| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
    )
}

/// Sorted x-coordinates where the polygon boundary crosses the line `y = py`.
pub fn crossings(points: &[Point], py: f64, out: &mut Vec<f64>) {
    out.clear();
    let n = points.len();
    for i in 0..n {
        let (x0, y0) = points[i];
        let (x1, y1) = points[(i + 1) % n];
        if (y0 > py) != (y1 > py) {
            out.push(x0 + (py - y0) * (x1 - x0) / (y1 - y0));
        }
    }
    out.sort_by(f64::total_cmp);
}

/// Counts level pixels of a `side x side` patch whose centers fall inside the
/// union of `polygons`. The patch starts at level pixel `(lx, ly)`; polygons are
/// in base pixels and a level pixel covers `downsample` base pixels.
pub fn covered_pixels(polygons: &[&[Point]], lx: u32, ly: u32, side: u32, downsample: u32) -> u64 {
    let d = downsample as f64;
    let mut xs = Vec::new();
    let mut spans: Vec<(i64, i64)> = Vec::new();
    let mut total = 0u64;
    for row in ly..ly + side {
        let py = (row as f64 + 0.5) * d;
        spans.clear();
        for poly in polygons {
            crossings(poly, py, &mut xs);
            for pair in xs.chunks_exact(2) {
                // Columns c with center (c + 0.5) * d in [enter, exit).
                let first = (pair[0] / d - 0.5).ceil() as i64;
                let last_excl = (pair[1] / d - 0.5).ceil() as i64;
                let lo = first.max(lx as i64);
                let hi = last_excl.min((lx + side) as i64);
                if lo < hi {
                    spans.push((lo, hi));
                }
            }
        }
        spans.sort_unstable();
        let mut cur: Option<(i64, i64)> = None;
        for &(lo, hi) in &spans {
            match cur {
                Some((clo, chi)) if lo <= chi => cur = Some((clo, chi.max(hi))),
                Some((clo, chi)) => {
                    total += (chi - clo) as u64;
                    cur = Some((lo, hi));
                }
                None => cur = Some((lo, hi)),
            }
        }
        if let Some((clo, chi)) = cur {
            total += (chi - clo) as u64;
        }
    }
    total
}
