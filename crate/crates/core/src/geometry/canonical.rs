//! Positional label form: a control-point ordering that depends only on
//! geometry, never on reading direction.
//!
//! 1. Orientation is forced clockwise. A reversed sequence is re-paired so
//!    that its halves are again the two long sides.
//! 2. The start side is chosen spatially. Sides stacked vertically start on
//!    the one whose centroid is higher. Sides arranged left/right start on
//!    the one reaching further up (smaller minimum `y`); on a tie the side
//!    that already holds the first point keeps it.
//! 3. The sequence is rotated so the chosen side comes first.

use serde::{Deserialize, Serialize};

use super::polygon::{centroid, Point, Polygon};
use crate::error::Result;

/// Two minimum-`y` values closer than this count as a tie.
pub const MIN_Y_TIE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CanonicalMode {
    /// Clockwise order plus spatial start side.
    Positional,
    /// Only the orientation rule; the start side is left alone.
    ClockwiseOnly,
}

/// How the two sides of a polygon are laid out relative to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideArrangement {
    TopBottom,
    LeftRight,
}

pub fn side_arrangement(polygon: &Polygon) -> SideArrangement {
    let (a, b) = (centroid(polygon.first_side()), centroid(polygon.second_side()));
    if (a.y - b.y).abs() >= (a.x - b.x).abs() {
        SideArrangement::TopBottom
    } else {
        SideArrangement::LeftRight
    }
}

fn end_gap(points: &[Point], shift: usize) -> f64 {
    let n = points.len();
    let h = n / 2;
    let at = |i: usize| points[(i + shift) % n];
    at(n - 1).dist(at(0)) + at(h - 1).dist(at(h))
}

/// Reverses traversal direction. Of the two rotations that keep the
/// sequence ring-consistent (pure reversal, or reversal keeping the first
/// point in place), the one whose end edges between the halves are shorter
/// is taken; pure reversal wins ties.
fn reverse_repaired(polygon: &Polygon) -> Polygon {
    let rev = polygon.reversed();
    // rotating right by one keeps the original first point first
    let shifted = rev.rotated(rev.len() - 1);
    if end_gap(shifted.points(), 0) < end_gap(rev.points(), 0) {
        shifted
    } else {
        rev
    }
}

/// Whether the second half should become the start side.
fn second_side_starts(polygon: &Polygon) -> bool {
    let (a, b) = (polygon.first_side(), polygon.second_side());
    match side_arrangement(polygon) {
        SideArrangement::TopBottom => centroid(b).y < centroid(a).y,
        SideArrangement::LeftRight => {
            let min_y = |s: &[Point]| s.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            let (ma, mb) = (min_y(a), min_y(b));
            (ma - mb).abs() >= MIN_Y_TIE && mb < ma
        }
    }
}

/// Applies the label-form rules. Fails only on degenerate (zero-area) input.
pub fn canonicalize(polygon: &Polygon, mode: CanonicalMode) -> Result<Polygon> {
    let clockwise = if polygon.is_clockwise()? {
        polygon.clone()
    } else {
        reverse_repaired(polygon)
    };
    if mode == CanonicalMode::ClockwiseOnly {
        return Ok(clockwise);
    }
    Ok(if second_side_starts(&clockwise) {
        clockwise.rotated(clockwise.half())
    } else {
        clockwise
    })
}

pub fn canonicalize_positional_label(polygon: &Polygon) -> Result<Polygon> {
    canonicalize(polygon, CanonicalMode::Positional)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TL: (f64, f64) = (0.0, 0.0);
    const TR: (f64, f64) = (4.0, 0.0);
    const BR: (f64, f64) = (4.0, 1.0);
    const BL: (f64, f64) = (0.0, 1.0);

    fn poly(c: &[(f64, f64)]) -> Polygon {
        Polygon::from_xy(c).unwrap()
    }

    #[test]
    fn canonical_rectangle_is_unchanged() {
        let p = poly(&[TL, TR, BR, BL]);
        assert_eq!(canonicalize_positional_label(&p).unwrap(), p);
    }

    #[test]
    fn upside_down_reading_order_moves_start_to_top() {
        let p = poly(&[BR, BL, TL, TR]);
        assert_eq!(canonicalize_positional_label(&p).unwrap(), poly(&[TL, TR, BR, BL]));
    }

    #[test]
    fn counter_clockwise_input_is_reversed_then_started_on_top() {
        let p = poly(&[TL, BL, BR, TR]);
        assert_eq!(canonicalize_positional_label(&p).unwrap(), poly(&[TL, TR, BR, BL]));
    }

    #[test]
    fn mirrored_label_is_reordered() {
        // top side right-to-left, bottom left-to-right
        let p = poly(&[TR, TL, BL, BR]);
        assert!(!p.is_clockwise().unwrap());
        assert_eq!(canonicalize_positional_label(&p).unwrap(), poly(&[TL, TR, BR, BL]));
    }

    #[test]
    fn left_right_sides_start_on_the_side_reaching_higher() {
        // a tall instance: first side on the right running down, second on
        // the left running up; the left side reaches y = -0.5
        let p = poly(&[(2.0, 0.0), (2.0, 3.0), (2.0, 6.0), (0.0, 6.0), (0.0, 3.0), (0.0, -0.5)]);
        assert!(p.is_clockwise().unwrap());
        assert_eq!(side_arrangement(&p), SideArrangement::LeftRight);
        let c = canonicalize_positional_label(&p).unwrap();
        assert_eq!(c.points()[0], Point::new(0.0, 6.0));
    }

    #[test]
    fn left_right_tie_keeps_current_first_side() {
        let p = poly(&[(2.0, 0.0), (2.0, 6.0), (0.0, 6.0), (0.0, 0.0)]);
        assert_eq!(side_arrangement(&p), SideArrangement::LeftRight);
        assert_eq!(canonicalize_positional_label(&p).unwrap(), p);
        let q = p.rotated(2);
        assert_eq!(canonicalize_positional_label(&q).unwrap(), q);
    }

    #[test]
    fn clockwise_only_mode_keeps_start_side() {
        let p = poly(&[BR, BL, TL, TR]);
        assert_eq!(canonicalize(&p, CanonicalMode::ClockwiseOnly).unwrap(), p);
    }

    #[test]
    fn degenerate_polygon_is_rejected() {
        let p = poly(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        assert!(canonicalize_positional_label(&p).is_err());
    }

    fn ring() -> impl Strategy<Value = Polygon> {
        // star-shaped rings around a centre, so they are simple
        (3usize..9, 0.2f64..3.0, proptest::collection::vec((0.5f64..3.0, -0.3f64..0.3), 16), -10.0f64..10.0, -10.0f64..10.0, any::<bool>())
            .prop_map(|(half, aspect, radii, cx, cy, flip)| {
                let n = 2 * half;
                let mut pts: Vec<Point> = (0..n)
                    .map(|i| {
                        let (r, jitter) = radii[i];
                        let a = (i as f64 + jitter) / n as f64 * std::f64::consts::TAU;
                        Point::new(cx + r * aspect * a.cos(), cy + r * a.sin())
                    })
                    .collect();
                if flip {
                    pts.reverse();
                }
                Polygon::new(pts).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn canonicalization_is_idempotent_and_clockwise(p in ring()) {
            let once = canonicalize_positional_label(&p).unwrap();
            let twice = canonicalize_positional_label(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.is_clockwise().unwrap());
            let key = |q: &Polygon| {
                let mut v: Vec<(u64, u64)> = q.points().iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
                v.sort();
                v
            };
            prop_assert_eq!(key(&once), key(&p));
        }
    }
}
