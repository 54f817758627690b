use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::tensor::{Tape, Var, INVERSE_SIGMOID_EPS};

/// Axis-aligned proposal box in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorBoxProposal {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

impl AnchorBoxProposal {
    /// Shrinks width and height so the box stays inside the unit square.
    pub fn clipped(self) -> Self {
        let cx = self.cx.clamp(0.0, 1.0);
        let cy = self.cy.clamp(0.0, 1.0);
        Self {
            cx,
            cy,
            w: self.w.min(2.0 * cx.min(1.0 - cx)).max(0.0),
            h: self.h.min(2.0 * cy.min(1.0 - cy)).max(0.0),
            score: self.score,
        }
    }
}

/// Places `n / 2` points left to right along the top edge of `b` and
/// `n / 2` right to left along the bottom edge, clipped to `[0, 1]`.
pub fn prior_points_sampling(b: &AnchorBoxProposal, n: usize) -> Result<Vec<Point>> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::Config(format!("prior sampling needs an even N >= 4, got {n}")));
    }
    let half = n / 2;
    let step = b.w / (half - 1) as f64;
    let (left, top, bottom) = (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cy + b.h / 2.0);
    Ok((1..=n)
        .map(|i| {
            let (x, y) = if i <= half {
                (left + (i - 1) as f64 * step, top)
            } else {
                (left + (n - i) as f64 * step, bottom)
            };
            Point::new(x.clamp(0.0, 1.0), y.clamp(0.0, 1.0))
        })
        .collect())
}

/// Refines `points` by `offsets` in logit space. The incoming points are
/// treated as constants, so no gradient reaches earlier layers through them.
pub fn point_update(tape: &mut Tape, points: Var, offsets: Var) -> Result<Var> {
    let base = tape.detach(points);
    let logit = tape.inverse_sigmoid(base, INVERSE_SIGMOID_EPS);
    let moved = tape.add(logit, offsets)?;
    Ok(tape.sigmoid(moved))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::signed_area;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxed(cx: f64, cy: f64, w: f64, h: f64) -> AnchorBoxProposal {
        AnchorBoxProposal { cx, cy, w, h, score: 0.0 }
    }

    #[test]
    fn four_point_example_is_exact() {
        let pts = prior_points_sampling(&boxed(0.5, 0.5, 0.4, 0.2), 4).unwrap();
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(xy, vec![(0.3, 0.4), (0.7, 0.4), (0.7, 0.6), (0.3, 0.6)]);
    }

    #[test]
    fn first_point_is_top_left_corner() {
        let b = boxed(0.41, 0.37, 0.22, 0.13);
        let p = prior_points_sampling(&b, 8).unwrap()[0];
        assert_eq!(p, Point::new(b.cx - b.w / 2.0, b.cy - b.h / 2.0));
    }

    #[test]
    fn collapsed_box_gives_coincident_points() {
        let pts = prior_points_sampling(&boxed(0.2, 0.7, 0.0, 0.0), 8).unwrap();
        assert!(pts.iter().all(|&p| p == Point::new(0.2, 0.7)));
    }

    #[test]
    fn two_points_are_rejected() {
        assert!(prior_points_sampling(&boxed(0.5, 0.5, 0.1, 0.1), 2).is_err());
        assert!(prior_points_sampling(&boxed(0.5, 0.5, 0.1, 0.1), 5).is_err());
    }

    #[test]
    fn random_boxes_sample_clockwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let b = boxed(rng.gen(), rng.gen(), rng.gen_range(0.01..0.5), rng.gen_range(0.01..0.5))
                .clipped();
            let n = 2 * rng.gen_range(2..9);
            let pts = prior_points_sampling(&b, n).unwrap();
            assert!(signed_area(&pts) > 0.0, "{b:?}");
            assert!(pts.iter().all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
        }
    }

    #[test]
    fn clipping_keeps_box_inside_unit_square() {
        let b = boxed(0.1, 0.95, 0.6, 0.4).clipped();
        assert!(b.cx - b.w / 2.0 >= 0.0 && b.cx + b.w / 2.0 <= 1.0);
        assert!(b.cy - b.h / 2.0 >= 0.0 && b.cy + b.h / 2.0 <= 1.0 + 1e-15);
    }

    #[test]
    fn zero_offsets_keep_points() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::new([3, 2], vec![0.1, 0.5, 0.9, 0.25, 0.75, 0.33]).unwrap());
        let o = t.param(Tensor::zeros([3, 2]));
        let u = point_update(&mut t, p, o).unwrap();
        for (a, b) in t.value(u).data().iter().zip(t.value(p).data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn log_three_offset_moves_half_to_three_quarters() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::new([1, 1], vec![0.5]).unwrap());
        let o = t.param(Tensor::new([1, 1], vec![3f64.ln()]).unwrap());
        let u = point_update(&mut t, p, o).unwrap();
        assert!((t.value(u).item() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn updated_points_stay_in_open_unit_interval() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::new([1, 4], vec![0.0, 1.0, 0.5, 1e-9]).unwrap());
        let o = t.param(Tensor::new([1, 4], vec![-30.0, 30.0, 700.0, -700.0]).unwrap());
        let u = point_update(&mut t, p, o).unwrap();
        assert!(t.value(u).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let g = { let s = t.sum(u); t.backward(s) }.unwrap();
        assert!(g.get(p).is_none());
    }
}
