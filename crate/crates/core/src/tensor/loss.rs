use super::ops::sigmoid_scalar;
use super::tape::{Tape, Var};
use super::value::Tensor;
use crate::error::{shape_err, Result};

/// Focal-loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Focal {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for Focal {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl Focal {
    /// Loss for one probability / binary target pair.
    pub fn loss_prob(&self, p: f64, target: f64) -> f64 {
        let pt = p * target + (1.0 - p) * (1.0 - target);
        let at = self.alpha * target + (1.0 - self.alpha) * (1.0 - target);
        let ce = -(target * p.max(f64::MIN_POSITIVE).ln()
            + (1.0 - target) * (1.0 - p).max(f64::MIN_POSITIVE).ln());
        at * (1.0 - pt).powf(self.gamma) * ce
    }

    /// Loss and derivative with respect to the logit.
    pub fn loss_logit(&self, x: f64, t: f64) -> (f64, f64) {
        let p = sigmoid_scalar(x);
        // log(1 + e^-|x|) keeps the cross entropy finite for large logits.
        let ce = x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        let pt = p * t + (1.0 - p) * (1.0 - t);
        let at = self.alpha * t + (1.0 - self.alpha) * (1.0 - t);
        let m = 1.0 - pt;
        let mod_g = m.powf(self.gamma);
        let dpt = (2.0 * t - 1.0) * p * (1.0 - p);
        let dmod = if self.gamma == 0.0 {
            0.0
        } else {
            -self.gamma * m.powf(self.gamma - 1.0) * dpt
        };
        (at * mod_g * ce, at * (dmod * ce + mod_g * (p - t)))
    }
}

impl Tape {
    /// Mean absolute difference over all elements.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(shape_err(
                "l1_loss",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let n = self.value(pred).len();
        let diff: Vec<f64> = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(a, b)| a - b)
            .collect();
        let loss = if n == 0 {
            0.0
        } else {
            diff.iter().map(|d| d.abs()).sum::<f64>() / n as f64
        };
        Ok(self.push(Tensor::scalar(loss), vec![pred, target], move |a| {
            let g: Vec<f64> = diff
                .iter()
                .map(|&d| {
                    let sign = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    a.grad[0] * sign / n as f64
                })
                .collect();
            let neg = g.iter().map(|v| -v).collect();
            vec![Some(g), Some(neg)]
        }))
    }

    /// Sigmoid focal loss summed over all logits; `targets` are constants.
    pub fn focal_loss(&mut self, logits: Var, targets: &[f64], focal: Focal) -> Result<Var> {
        if self.value(logits).len() != targets.len() {
            return Err(shape_err(
                "focal_loss",
                format!("{} logits, {} targets", self.value(logits).len(), targets.len()),
            ));
        }
        let (loss, grad): (Vec<f64>, Vec<f64>) = self
            .value(logits)
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| focal.loss_logit(x, t))
            .unzip();
        let total = loss.iter().sum();
        Ok(self.push(Tensor::scalar(total), vec![logits], move |a| {
            vec![Some(grad.iter().map(|g| g * a.grad[0]).collect())]
        }))
    }
}
