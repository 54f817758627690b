//! Polygon IoU by scanline rasterization over the union bounding box.

use super::polygon::{bounds, Point, Polygon};

pub const DEFAULT_IOU_RESOLUTION: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouResult {
    pub iou: f64,
    /// Set when the union covers no pixel, in which case `iou` is 0.
    pub degenerate: bool,
}

/// Pixel grid laid over a bounding box with square cells.
#[derive(Debug, Clone, Copy)]
struct Grid {
    origin: Point,
    cell: f64,
    cols: usize,
    rows: usize,
}

impl Grid {
    fn over(lo: Point, hi: Point, resolution: usize) -> Option<Self> {
        let (w, h) = (hi.x - lo.x, hi.y - lo.y);
        let long = w.max(h);
        if !(long > 0.0) || resolution == 0 {
            return None;
        }
        let cell = long / resolution as f64;
        let cols = ((w / cell).ceil() as usize).clamp(1, resolution);
        let rows = ((h / cell).ceil() as usize).clamp(1, resolution);
        Some(Self { origin: lo, cell, cols, rows })
    }

    fn row_center(&self, i: usize) -> f64 {
        self.origin.y + (i as f64 + 0.5) * self.cell
    }

    /// Number of column centers lying in `[a, b)`.
    fn count(&self, a: f64, b: f64) -> usize {
        let idx = |x: f64| {
            let t = ((x - self.origin.x) / self.cell - 0.5).ceil();
            t.clamp(0.0, self.cols as f64) as usize
        };
        idx(b).saturating_sub(idx(a))
    }
}

/// Even-odd spans of the polygon along the horizontal line `y`.
fn spans(points: &[Point], y: f64, xs: &mut Vec<f64>) {
    xs.clear();
    let n = points.len();
    for i in 0..n {
        let (p, q) = (points[i], points[(i + 1) % n]);
        if (p.y <= y && y < q.y) || (q.y <= y && y < p.y) {
            xs.push(p.x + (y - p.y) / (q.y - p.y) * (q.x - p.x));
        }
    }
    xs.sort_by(f64::total_cmp);
}

pub fn polygon_iou(a: &Polygon, b: &Polygon, resolution: usize) -> IouResult {
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    let disjoint = ahi.x <= blo.x || bhi.x <= alo.x || ahi.y <= blo.y || bhi.y <= alo.y;
    let (lo, hi) = bounds(&[alo, ahi, blo, bhi]);
    let Some(grid) = Grid::over(lo, hi, resolution) else {
        return IouResult { iou: 0.0, degenerate: true };
    };

    let (mut xa, mut xb) = (Vec::new(), Vec::new());
    let (mut area_a, mut area_b, mut inter) = (0usize, 0usize, 0usize);
    for i in 0..grid.rows {
        let y = grid.row_center(i);
        spans(a.points(), y, &mut xa);
        spans(b.points(), y, &mut xb);
        area_a += xa.chunks_exact(2).map(|s| grid.count(s[0], s[1])).sum::<usize>();
        area_b += xb.chunks_exact(2).map(|s| grid.count(s[0], s[1])).sum::<usize>();
        if disjoint {
            continue;
        }
        let (mut p, mut q) = (0, 0);
        while p + 1 < xa.len() && q + 1 < xb.len() {
            let (a0, a1) = (xa[p], xa[p + 1]);
            let (b0, b1) = (xb[q], xb[q + 1]);
            let (s, e) = (a0.max(b0), a1.min(b1));
            if s < e {
                inter += grid.count(s, e);
            }
            if a1 < b1 {
                p += 2;
            } else {
                q += 2;
            }
        }
    }
    let union = area_a + area_b - inter;
    if union == 0 {
        return IouResult { iou: 0.0, degenerate: true };
    }
    IouResult { iou: inter as f64 / union as f64, degenerate: false }
}
