//! Cubic Bezier sides: sampling, least-squares fitting and polygon resampling.

use super::polygon::{Point, Polygon};
use crate::error::{Error, Result};

/// One cubic Bezier curve given by its four control points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicBezier(pub [Point; 4]);

/// Top and bottom sides of an instance, each a cubic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierSidePair {
    pub top: CubicBezier,
    pub bottom: CubicBezier,
}

impl BezierSidePair {
    /// Fits both sides of a polygon whose sides hold at least 4 points each.
    pub fn fit(polygon: &Polygon) -> Result<Self> {
        Ok(Self {
            top: CubicBezier::fit(polygon.first_side())?,
            bottom: CubicBezier::fit(polygon.second_side())?,
        })
    }

    /// `n / 2` samples per side, concatenated into a polygon.
    pub fn to_polygon(&self, n: usize) -> Result<Polygon> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::Config(format!("point count {n} must be even and >= 4")));
        }
        let mut pts = self.top.sample(n / 2)?;
        pts.extend(self.bottom.sample(n / 2)?);
        Polygon::new(pts)
    }
}

fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

fn bernstein_deriv(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [-3.0 * s * s, 3.0 * s * s - 6.0 * s * t, 6.0 * s * t - 3.0 * t * t, 3.0 * t * t]
}

impl CubicBezier {
    pub fn eval(&self, t: f64) -> Point {
        if t == 0.0 {
            return self.0[0];
        }
        if t == 1.0 {
            return self.0[3];
        }
        combine(&bernstein(t), &self.0)
    }

    fn deriv(&self, t: f64) -> Point {
        combine(&bernstein_deriv(t), &self.0)
    }

    /// `m` points at uniformly spaced parameters on `[0, 1]`, endpoints included.
    pub fn sample(&self, m: usize) -> Result<Vec<Point>> {
        if m < 2 {
            return Err(Error::Config(format!("bezier sampling needs m >= 2, got {m}")));
        }
        Ok((0..m)
            .map(|i| self.eval(i as f64 / (m - 1) as f64))
            .collect())
    }

    /// Least-squares cubic through ordered `points` with its endpoints pinned
    /// to the first and last point.
    ///
    /// Parameters start at normalized cumulative chord length and are then
    /// refined by projecting each interior point onto the current curve and
    /// finally by a joint damped Gauss-Newton solve. The same refinement is
    /// also run from uniformly spaced parameters, and the start reaching the
    /// lower residual wins.
    pub fn fit(points: &[Point]) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Config(format!(
                "bezier fit needs at least 4 points, got {}",
                points.len()
            )));
        }
        let mut cum = vec![0.0; points.len()];
        for i in 1..points.len() {
            cum[i] = cum[i - 1] + points[i].dist(points[i - 1]);
        }
        let total = *cum.last().expect("non-empty");
        if total <= 1e-12 {
            return Err(Error::Degenerate("bezier fit points are coincident".into()));
        }
        let chord: Vec<f64> = cum.iter().map(|c| c / total).collect();
        let uniform: Vec<f64> = (0..points.len())
            .map(|i| i as f64 / (points.len() - 1) as f64)
            .collect();
        let (a, cost_a) = fit_from(points, chord)?;
        let (b, cost_b) = fit_from(points, uniform)?;
        Ok(if cost_b < cost_a { b } else { a })
    }
}

fn fit_from(points: &[Point], mut ts: Vec<f64>) -> Result<(CubicBezier, f64)> {
    let mut curve = solve_interior(points, &ts)?;
    for _ in 0..PROJECTION_ROUNDS {
        let mut moved = 0.0f64;
        for (t, p) in ts.iter_mut().zip(points).skip(1).take(points.len() - 2) {
            let b = curve.eval(*t);
            let d1 = curve.deriv(*t);
            let d2 = combine(&bernstein_second(*t), &curve.0);
            let (ex, ey) = (b.x - p.x, b.y - p.y);
            let num = ex * d1.x + ey * d1.y;
            let den = d1.x * d1.x + d1.y * d1.y + ex * d2.x + ey * d2.y;
            if den.abs() > 1e-15 {
                let nt = (*t - num / den).clamp(0.0, 1.0);
                moved = moved.max((nt - *t).abs());
                *t = nt;
            }
        }
        curve = solve_interior(points, &ts)?;
        if moved < 1e-15 {
            break;
        }
    }
    Ok(refine_jointly(points, curve, ts))
}

const PROJECTION_ROUNDS: usize = 50;
const LM_ROUNDS: usize = 200;

fn residual_norm(points: &[Point], curve: &CubicBezier, ts: &[f64]) -> f64 {
    points
        .iter()
        .zip(ts)
        .map(|(p, &t)| {
            let b = curve.eval(t);
            (b.x - p.x).powi(2) + (b.y - p.y).powi(2)
        })
        .sum()
}

/// Levenberg-Marquardt over the interior control points and the interior
/// parameters at once. Unknown layout: `[p1x, p1y, p2x, p2y, t_1 .. t_{k-2}]`.
fn refine_jointly(points: &[Point], mut curve: CubicBezier, mut ts: Vec<f64>) -> (CubicBezier, f64) {
    let inner = points.len() - 2;
    let dim = 4 + inner;
    let mut lambda = 1e-6;
    let mut cost = residual_norm(points, &curve, &ts);
    for _ in 0..LM_ROUNDS {
        if cost < 1e-28 {
            break;
        }
        let mut jtj = vec![0.0; dim * dim];
        let mut jtr = vec![0.0; dim];
        for i in 0..inner {
            let t = ts[i + 1];
            let b = bernstein(t);
            let d = curve.deriv(t);
            let e = curve.eval(t);
            let r = [e.x - points[i + 1].x, e.y - points[i + 1].y];
            let dt = [d.x, d.y];
            for axis in 0..2 {
                // sparse row: p1 component, p2 component, own parameter
                let cols = [axis, 2 + axis, 4 + i];
                let vals = [b[1], b[2], dt[axis]];
                for a in 0..3 {
                    jtr[cols[a]] += vals[a] * r[axis];
                    for c in 0..3 {
                        jtj[cols[a] * dim + cols[c]] += vals[a] * vals[c];
                    }
                }
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let mut m = jtj.clone();
            for k in 0..dim {
                m[k * dim + k] += lambda * (1.0 + jtj[k * dim + k]);
            }
            let Some(step) = solve_dense(m, jtr.iter().map(|v| -v).collect(), dim) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand = curve;
            cand.0[1].x += step[0];
            cand.0[1].y += step[1];
            cand.0[2].x += step[2];
            cand.0[2].y += step[3];
            let mut cand_ts = ts.clone();
            for i in 0..inner {
                cand_ts[i + 1] = (ts[i + 1] + step[4 + i]).clamp(0.0, 1.0);
            }
            let c = residual_norm(points, &cand, &cand_ts);
            if c < cost {
                curve = cand;
                ts = cand_ts;
                cost = c;
                lambda = (lambda * 0.1).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (curve, cost)
}

/// Gaussian elimination with partial pivoting on a row-major `n x n` system.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[row * n + k] -= f * a[col * n + k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    Some(x)
}

fn bernstein_second(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [6.0 * s, -12.0 * s + 6.0 * t, 6.0 * s - 12.0 * t, 6.0 * t]
}

fn combine(w: &[f64; 4], p: &[Point; 4]) -> Point {
    Point::new(
        w.iter().zip(p).map(|(w, p)| w * p.x).sum(),
        w.iter().zip(p).map(|(w, p)| w * p.y).sum(),
    )
}

/// Normal equations for the two free control points at fixed parameters.
fn solve_interior(points: &[Point], ts: &[f64]) -> Result<CubicBezier> {
    let (p0, p3) = (points[0], *points.last().expect("non-empty"));
    let (mut a11, mut a12, mut a22) = (0.0, 0.0, 0.0);
    let (mut rx1, mut ry1, mut rx2, mut ry2) = (0.0, 0.0, 0.0, 0.0);
    for (p, &t) in points.iter().zip(ts) {
        let b = bernstein(t);
        let rx = p.x - b[0] * p0.x - b[3] * p3.x;
        let ry = p.y - b[0] * p0.y - b[3] * p3.y;
        a11 += b[1] * b[1];
        a12 += b[1] * b[2];
        a22 += b[2] * b[2];
        rx1 += b[1] * rx;
        ry1 += b[1] * ry;
        rx2 += b[2] * rx;
        ry2 += b[2] * ry;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() <= 1e-12 * (a11 * a22).max(1e-300) {
        return Err(Error::Degenerate("bezier normal equations are singular".into()));
    }
    let p1 = Point::new((a22 * rx1 - a12 * rx2) / det, (a22 * ry1 - a12 * ry2) / det);
    let p2 = Point::new((a11 * rx2 - a12 * rx1) / det, (a11 * ry2 - a12 * ry1) / det);
    Ok(CubicBezier([p0, p1, p2, p3]))
}

/// Resamples a side to `m` points along its polyline at uniform arc length.
pub fn resample_polyline(points: &[Point], m: usize) -> Vec<Point> {
    let mut cum = vec![0.0; points.len()];
    for i in 1..points.len() {
        cum[i] = cum[i - 1] + points[i].dist(points[i - 1]);
    }
    let total = *cum.last().expect("non-empty");
    (0..m)
        .map(|k| {
            let target = total * k as f64 / (m - 1) as f64;
            let seg = cum
                .windows(2)
                .position(|w| target <= w[1])
                .unwrap_or(points.len() - 2);
            let len = cum[seg + 1] - cum[seg];
            let t = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
            points[seg].lerp(points[seg + 1], t)
        })
        .collect()
}

/// Fits a cubic to each side of `polygon` and samples `n / 2` points per
/// side. Sides with fewer than four points are resampled along their
/// polyline instead.
pub fn resample_polygon(polygon: &Polygon, n: usize) -> Result<Polygon> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::Config(format!("target point count {n} must be even and >= 4")));
    }
    let half = n / 2;
    let mut out = Vec::with_capacity(n);
    for side in [polygon.first_side(), polygon.second_side()] {
        if side.len() >= 4 {
            out.extend(CubicBezier::fit(side)?.sample(half)?);
        } else {
            out.extend(resample_polyline(side, half));
        }
    }
    Polygon::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pts(c: &[(f64, f64)]) -> Vec<Point> {
        c.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn collinear_curve_midpoint() {
        let c = CubicBezier(pts(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]).try_into().unwrap());
        assert_eq!(c.eval(0.5), Point::new(1.5, 0.0));
    }

    #[test]
    fn endpoints_are_exact() {
        let c = CubicBezier(pts(&[(0.3, 0.7), (1.9, -2.0), (2.2, 5.0), (3.1, 0.1)]).try_into().unwrap());
        let s = c.sample(5).unwrap();
        assert_eq!(s[0], c.0[0]);
        assert_eq!(s[4], c.0[3]);
    }

    #[test]
    fn arch_midpoint_uses_bernstein_weights() {
        let c = CubicBezier(pts(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]).try_into().unwrap());
        let p = c.eval(0.5);
        assert_abs_diff_eq!(p.x, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.y, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn sampling_needs_two_points() {
        let c = CubicBezier([Point::default(); 4]);
        assert!(c.sample(1).is_err());
        assert_eq!(c.sample(7).unwrap().len(), 7);
    }

    #[test]
    fn fit_recovers_known_cubic() {
        let c = CubicBezier(pts(&[(0.0, 0.0), (2.0, 3.0), (6.0, -1.0), (8.0, 2.0)]).try_into().unwrap());
        let fitted = CubicBezier::fit(&c.sample(8).unwrap()).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(fitted.0[k].x, c.0[k].x, epsilon = 1e-6);
            assert_abs_diff_eq!(fitted.0[k].y, c.0[k].y, epsilon = 1e-6);
        }
    }

    #[test]
    fn fit_of_collinear_points_stays_on_line() {
        let f = CubicBezier::fit(&pts(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 4.0)])).unwrap();
        for p in &f.0 {
            assert_abs_diff_eq!(p.y - p.x, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_of_repeated_points_is_degenerate() {
        let twice = pts(&[(1.0, 1.0), (1.0, 1.0), (2.0, 2.0), (2.0, 2.0)]);
        assert!(matches!(CubicBezier::fit(&twice), Err(Error::Degenerate(_))));
        let all_same = pts(&[(1.0, 1.0); 5]);
        assert!(matches!(CubicBezier::fit(&all_same), Err(Error::Degenerate(_))));
    }

    #[test]
    fn resampling_changes_point_count() {
        let poly = Polygon::from_xy(&[
            (0.0, 0.0), (1.0, 0.1), (2.0, 0.1), (3.0, 0.0),
            (3.0, 1.0), (2.0, 1.1), (1.0, 1.1), (0.0, 1.0),
        ])
        .unwrap();
        let r = resample_polygon(&poly, 12).unwrap();
        assert_eq!(r.len(), 12);
        assert_eq!(r.points()[0], poly.points()[0]);
        assert_eq!(r.points()[5], poly.points()[3]);
    }

    proptest! {
        #[test]
        fn sample_fit_round_trip(
            len in 10.0f64..60.0,
            shape in proptest::collection::vec(-1.0f64..1.0, 4),
            angle in 0.0f64..std::f64::consts::TAU,
            shift in (-30.0f64..30.0, -30.0f64..30.0),
        ) {
            // side-like cubics: interior controls stay between the endpoints
            let local = [
                (0.0, 0.0),
                (len / 3.0 + shape[0] * len / 6.0, shape[1] * len / 2.0),
                (2.0 * len / 3.0 + shape[2] * len / 6.0, shape[3] * len / 2.0),
                (len, 0.0),
            ];
            let (s, c) = angle.sin_cos();
            let placed: Vec<(f64, f64)> = local
                .iter()
                .map(|&(x, y)| (c * x - s * y + shift.0, s * x + c * y + shift.1))
                .collect();
            let curve = CubicBezier(pts(&placed).try_into().unwrap());
            let samples = curve.sample(8).unwrap();
            let fitted = CubicBezier::fit(&samples).unwrap();
            let again = fitted.sample(8).unwrap();
            for (a, b) in samples.iter().zip(&again) {
                prop_assert!(a.dist(*b) < 1e-6, "{:?} vs {:?}", a, b);
            }
        }
    }
}
