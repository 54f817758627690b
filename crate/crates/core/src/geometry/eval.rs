//! Detection scores under one-to-one IoU matching.

use serde::{Deserialize, Serialize};

use super::iou::polygon_iou;
use super::polygon::Polygon;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPolygon {
    pub polygon: Polygon,
    pub score: f64,
}

/// Raw match counts; summing them over scenes gives dataset-level metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub true_positives: usize,
    pub predictions: usize,
    pub ground_truths: usize,
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.true_positives += o.true_positives;
        self.predictions += o.predictions;
        self.ground_truths += o.ground_truths;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FMeasure {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// Neither predictions nor ground truth were present.
    pub vacuous: bool,
}

impl MatchCounts {
    pub fn score(&self) -> FMeasure {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.true_positives, self.predictions);
        let recall = ratio(self.true_positives, self.ground_truths);
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        FMeasure {
            precision,
            recall,
            f_measure,
            vacuous: self.predictions == 0 && self.ground_truths == 0,
        }
    }
}

/// Greedy matching in descending score order (ties keep input order). Each
/// prediction claims the unmatched ground truth of highest IoU, if that IoU
/// reaches the threshold.
pub fn match_counts(
    predictions: &[ScoredPolygon],
    ground_truth: &[Polygon],
    iou_threshold: f64,
    resolution: usize,
) -> MatchCounts {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&i, &j| predictions[j].score.total_cmp(&predictions[i].score));
    let mut taken = vec![false; ground_truth.len()];
    let mut tp = 0;
    for i in order {
        let best = ground_truth
            .iter()
            .enumerate()
            .filter(|(g, _)| !taken[*g])
            .map(|(g, gt)| (g, polygon_iou(&predictions[i].polygon, gt, resolution).iou))
            .filter(|&(_, iou)| iou >= iou_threshold)
            .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        if let Some((g, _)) = best {
            taken[g] = true;
            tp += 1;
        }
    }
    MatchCounts {
        true_positives: tp,
        predictions: predictions.len(),
        ground_truths: ground_truth.len(),
    }
}

pub fn f_measure(
    predictions: &[ScoredPolygon],
    ground_truth: &[Polygon],
    iou_threshold: f64,
    resolution: usize,
) -> FMeasure {
    match_counts(predictions, ground_truth, iou_threshold, resolution).score()
}
