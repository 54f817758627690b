//! Set-prediction losses: Hungarian matching per image, sigmoid focal
//! classification and L1 on control points, applied to every decoder layer
//! and to the encoder proposals.

use serde::{Deserialize, Serialize};

use super::hungarian::hungarian_match;
use crate::error::{Error, Result};
use crate::geometry::{bounds, Polygon};
use crate::model::{grid_centers, DetectionOutput};
use crate::tensor::{sigmoid_scalar, Focal, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub class: f64,
    pub point: f64,
    pub focal: Focal,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { class: 2.0, point: 5.0, focal: Focal::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerLoss {
    pub classification: f64,
    pub point_l1: f64,
}

/// Scalar loss values. `classification` and `point_l1` are summed over the
/// decoder layers before weighting; `encoder_proposal` is already weighted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classification: f64,
    pub point_l1: f64,
    pub encoder_proposal: f64,
    pub per_layer: Vec<LayerLoss>,
    pub total: f64,
}

impl LossBreakdown {
    /// Recomputes the weighted total from the components.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.class * self.classification + w.point * self.point_l1 + self.encoder_proposal
    }
}

pub struct DetectionLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Classification part of the matching cost for one probability.
fn class_cost(p: f64, f: &Focal) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    let pos = f.alpha * (1.0 - p).powf(f.gamma) * -p.ln();
    let neg = (1.0 - f.alpha) * p.powf(f.gamma) * -(1.0 - p).ln();
    pos - neg
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Matches the `rows` predictions of one image to its targets. `pred` holds
/// one flat vector per prediction, `gt` one per target, of equal length.
fn match_image(
    logits: &[f64],
    pred: &[&[f64]],
    gt: &[Vec<f64>],
    w: &LossWeights,
) -> Result<Vec<(usize, usize)>> {
    let (rows, cols) = (pred.len(), gt.len());
    let mut cost = Vec::with_capacity(rows * cols);
    for (r, p) in pred.iter().enumerate() {
        let c = w.class * class_cost(sigmoid_scalar(logits[r]), &w.focal);
        cost.extend(gt.iter().map(|g| c + w.point * mean_abs_diff(p, g)));
    }
    Ok(hungarian_match(&cost, rows, cols)?.pairs)
}

/// Focal sum over all logits, divided by the number of ground truths,
/// with the matched rows as positives.
fn classification(tape: &mut Tape, logits: Var, positives: &[usize], num_gt: usize, f: Focal) -> Result<Var> {
    let mut targets = vec![0.0; tape.value(logits).len()];
    positives.iter().for_each(|&r| targets[r] = 1.0);
    let sum = tape.focal_loss(logits, &targets, f)?;
    Ok(tape.scale(sum, 1.0 / num_gt.max(1) as f64))
}

/// Mean L1 between the gathered prediction rows and their targets.
fn gathered_l1(tape: &mut Tape, pred: Var, rows: &[usize], target: Vec<f64>) -> Result<Var> {
    if rows.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let picked = tape.gather_rows(pred, rows)?;
    let width = tape.value(pred).cols();
    let t = tape.constant(Tensor::new([rows.len(), width], target)?);
    tape.l1_loss(picked, t)
}

fn flat_targets(targets: &[Vec<Polygon>], n: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    targets
        .iter()
        .map(|img| {
            img.iter()
                .map(|p| {
                    if p.len() != n {
                        return Err(Error::Shape {
                            op: "detection_loss",
                            detail: format!("target with {} points, model predicts {n}", p.len()),
                        });
                    }
                    Ok(p.points().iter().flat_map(|q| [q.x, q.y]).collect())
                })
                .collect()
        })
        .collect()
}

/// Loss for one set of per-image predictions (a decoder layer, or the
/// encoder positions). Returns the classification and regression terms.
#[allow(clippy::too_many_arguments)]
fn set_loss(
    tape: &mut Tape,
    logits: Var,
    pred: Var,
    per_image: usize,
    gt: &[Vec<Vec<f64>>],
    match_on: Option<&[Vec<f64>]>,
    regress_cols: std::ops::Range<usize>,
    w: &LossWeights,
) -> Result<(Var, Var)> {
    let lv = tape.value(logits).data().to_vec();
    let pv = tape.value(pred).clone();
    let width = match match_on {
        Some(m) => m[0].len(),
        None => pv.cols(),
    };
    let mut positives = Vec::new();
    let mut target = Vec::new();
    let mut num_gt = 0;
    for (b, g) in gt.iter().enumerate() {
        num_gt += g.len();
        if g.is_empty() {
            continue;
        }
        let base = b * per_image;
        let rows: Vec<&[f64]> = (base..base + per_image)
            .map(|r| match match_on {
                Some(m) => &m[r][..],
                None => pv.row(r),
            })
            .collect();
        debug_assert!(g.iter().all(|v| v.len() == width));
        for (r, c) in match_image(&lv[base..base + per_image], &rows, g, w)? {
            positives.push(base + r);
            target.extend_from_slice(&g[c][regress_cols.clone()]);
        }
    }
    let cls = classification(tape, logits, &positives, num_gt, w.focal)?;
    let reg = gathered_l1(tape, pred, &positives, target)?;
    Ok((cls, reg))
}

/// Axis-aligned box `(cx, cy, w, h)` of a normalized polygon, clipped.
fn target_box(p: &Polygon) -> Vec<f64> {
    let (lo, hi) = bounds(p.points());
    let (x0, y0) = (lo.x.clamp(0.0, 1.0), lo.y.clamp(0.0, 1.0));
    let (x1, y1) = (hi.x.clamp(0.0, 1.0), hi.y.clamp(0.0, 1.0));
    vec![(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0]
}

/// Loss over all decoder layers and the encoder proposals.
///
/// `targets[b]` lists the normalized `N`-point ground-truth polygons of
/// image `b`, already in the label form the model is trained on.
pub fn detection_loss(
    tape: &mut Tape,
    out: &DetectionOutput,
    targets: &[Vec<Polygon>],
    num_queries: usize,
    num_points: usize,
    w: &LossWeights,
) -> Result<DetectionLoss> {
    let batch = out.encoder.proposals.len();
    if targets.len() != batch {
        return Err(Error::Shape {
            op: "detection_loss",
            detail: format!("{} target lists for a batch of {batch}", targets.len()),
        });
    }
    let gt = flat_targets(targets, num_points)?;
    let mut breakdown = LossBreakdown::default();
    let mut terms = Vec::new();
    for layer in &out.layers {
        let (cls, pt) = set_loss(tape, layer.logits, layer.points, num_queries, &gt, None, 0..num_points * 2, w)?;
        breakdown.per_layer.push(LayerLoss {
            classification: tape.value(cls).item(),
            point_l1: tape.value(pt).item(),
        });
        terms.push(tape.scale(cls, w.class));
        terms.push(tape.scale(pt, w.point));
    }
    breakdown.classification = breakdown.per_layer.iter().map(|l| l.classification).sum();
    breakdown.point_l1 = breakdown.per_layer.iter().map(|l| l.point_l1).sum();

    let map = out.encoder.map;
    let hw = map.height * map.width;
    let centers = grid_centers(map.height, map.width);
    let wh = tape.value(out.encoder.wh).clone();
    let boxes: Vec<Vec<f64>> = (0..batch * hw)
        .map(|r| {
            let c = centers[r % hw];
            vec![c.x, c.y, wh.row(r)[0], wh.row(r)[1]]
        })
        .collect();
    let gt_boxes: Vec<Vec<Vec<f64>>> = targets.iter().map(|img| img.iter().map(target_box).collect()).collect();
    let (obj, size) = set_loss(tape, out.encoder.objectness, out.encoder.wh, hw, &gt_boxes, Some(&boxes), 2..4, w)?;
    let obj = tape.scale(obj, w.class);
    let size = tape.scale(size, w.point);
    breakdown.encoder_proposal = tape.value(obj).item() + tape.value(size).item();
    terms.push(obj);
    terms.push(size);

    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    breakdown.total = tape.value(total).item();
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!("detection loss is {}", breakdown.total)));
    }
    Ok(DetectionLoss { total, breakdown })
}
