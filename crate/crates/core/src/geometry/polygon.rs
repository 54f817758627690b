use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image-plane point; origin top-left, `y` grows downward.
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
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

/// Below this magnitude a shoelace area counts as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-9;

/// Shoelace area; positive for clockwise traversal in y-down coordinates.
pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    0.5 * twice
}

pub fn is_clockwise(points: &[Point]) -> Result<bool> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "orientation needs at least 3 points, got {}",
            points.len()
        )));
    }
    let a = signed_area(points);
    if a.abs() < DEGENERATE_AREA {
        return Err(Error::Degenerate(format!("polygon area {a:e}")));
    }
    Ok(a > 0.0)
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point::new(sx / n, sy / n)
}

/// Ordered control points of one text instance.
///
/// The first `N/2` points trace one long side and the remaining `N/2` the
/// other, in opposite directions, so the sequence closes into a ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Polygon {
    points: Vec<Point>,
}

impl Polygon {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 4 || points.len() % 2 != 0 {
            return Err(Error::Format(format!(
                "polygon needs an even number (>= 4) of points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::Format("polygon has non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn from_xy(coords: &[(f64, f64)]) -> Result<Self> {
        Self::new(coords.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn half(&self) -> usize {
        self.points.len() / 2
    }

    pub fn first_side(&self) -> &[Point] {
        &self.points[..self.half()]
    }

    pub fn second_side(&self) -> &[Point] {
        &self.points[self.half()..]
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn is_clockwise(&self) -> Result<bool> {
        is_clockwise(&self.points)
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        bounds(&self.points)
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Polygon {
        Polygon {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }

    /// Rotates the sequence left by `k` positions.
    pub fn rotated(&self, k: usize) -> Polygon {
        let mut points = self.points.clone();
        points.rotate_left(k % self.points.len());
        Polygon { points }
    }

    pub fn reversed(&self) -> Polygon {
        let mut points = self.points.clone();
        points.reverse();
        Polygon { points }
    }
}

impl TryFrom<Vec<Point>> for Polygon {
    type Error = Error;

    fn try_from(points: Vec<Point>) -> Result<Self> {
        Polygon::new(points)
    }
}

impl From<Polygon> for Vec<Point> {
    fn from(p: Polygon) -> Self {
        p.points
    }
}

pub fn bounds(points: &[Point]) -> (Point, Point) {
    points.iter().fold(
        (
            Point::new(f64::INFINITY, f64::INFINITY),
            Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        ),
        |(lo, hi), p| {
            (
                Point::new(lo.x.min(p.x), lo.y.min(p.y)),
                Point::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Point> {
        [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
            .iter()
            .map(|&(x, y)| Point::new(x, y))
            .collect()
    }

    #[test]
    fn unit_square_is_clockwise_with_unit_area() {
        assert_eq!(signed_area(&square()), 1.0);
        assert!(is_clockwise(&square()).unwrap());
    }

    #[test]
    fn reversed_square_is_counter_clockwise() {
        let mut s = square();
        s.reverse();
        assert!(!is_clockwise(&s).unwrap());
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)];
        assert!(matches!(is_clockwise(&pts), Err(Error::Degenerate(_))));
    }

    #[test]
    fn polygon_rejects_odd_or_nan_points() {
        assert!(Polygon::from_xy(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)]).is_err());
        assert!(Polygon::from_xy(&[(0.0, 0.0), (1.0, f64::NAN), (1.0, 1.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn polygon_serializes_as_point_list() {
        let p = Polygon::new(square()).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: Polygon = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
