//! The optimization loop, periodic held-out evaluation and checkpointing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{detection_loss, LossBreakdown, LossWeights};
use super::prepare::{BaseSample, LabelMode, Prepared};
use super::synth::{derive_seed, INVERSE_ROTATION, TRAIN_ROTATIONS};
use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::geometry::{match_counts, FMeasure, MatchCounts, Polygon, ScoredPolygon, DEFAULT_IOU_RESOLUTION};
use crate::model::{save_checkpoint, Model, ModelConfig};
use crate::tensor::{adamw_step, clip_grad_norm, AdamWConfig, AdamWState, Mode, Session, Tensor};

pub const METRICS_HEADER: &str = "iteration,split,precision,recall,f_measure,loss_cls,loss_pt,loss_total";
pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.json";
pub const FINAL_CHECKPOINT: &str = "final.json";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Iteration from which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_step: usize,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub label_mode: LabelMode,
    /// Draw each training image's rotation from the augmentation angle set.
    pub rotation_augment: bool,
    pub loss: LossWeights,
    pub eval: EvalSettings,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            iterations: 2000,
            batch_size: 8,
            learning_rate: 1e-4,
            lr_decay_step: 1600,
            lr_decay_factor: 0.1,
            weight_decay: 1e-4,
            grad_clip: 0.1,
            seed: 0,
            eval_every: 250,
            label_mode: LabelMode::Positional,
            rotation_augment: false,
            loss: LossWeights::default(),
            eval: EvalSettings::default(),
            train_data: None,
            eval_data: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return bad("iterations, batch_size and eval_every must be positive".into());
        }
        if self.lr_decay_step >= self.iterations {
            return bad(format!(
                "lr_decay_step {} must be below iterations {}",
                self.lr_decay_step, self.iterations
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return bad("learning_rate and grad_clip must be positive".into());
        }
        self.eval.validate()
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        if iteration >= self.lr_decay_step {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig { weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Detections scoring below this are discarded before matching.
    pub score_threshold: f64,
    pub iou_threshold: f64,
    pub iou_resolution: usize,
    pub batch_size: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            score_threshold: 0.5,
            iou_threshold: 0.5,
            iou_resolution: DEFAULT_IOU_RESOLUTION,
            batch_size: 16,
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_threshold) || self.iou_resolution == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("invalid evaluation settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub split: String,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub loss_cls: f64,
    pub loss_pt: f64,
    pub loss_total: f64,
}

impl MetricsRow {
    fn new(iteration: usize, split: &str, r: &EvalReport) -> Self {
        Self {
            iteration,
            split: split.to_string(),
            precision: r.score.precision,
            recall: r.score.recall,
            f_measure: r.score.f_measure,
            loss_cls: r.loss.classification,
            loss_pt: r.loss.point_l1,
            loss_total: r.loss.total,
        }
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.iteration, r.split, r.precision, r.recall, r.f_measure, r.loss_cls, r.loss_pt, r.loss_total
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub counts: MatchCounts,
    pub score: FMeasure,
    /// Mean over evaluation batches.
    pub loss: LossBreakdown,
    /// Thresholded detections per image.
    pub detections: Vec<Vec<ScoredPolygon>>,
}

fn image_batch(items: &[&[f64]]) -> Result<Tensor> {
    let cols = items.first().map_or(0, |i| i.len());
    Tensor::new([items.len(), cols], items.iter().flat_map(|i| i.iter().copied()).collect())
}

/// Scores the model on a prepared split with running batch-norm statistics.
pub fn evaluate(model: &Model, data: &[Prepared], weights: &LossWeights, settings: &EvalSettings) -> Result<EvalReport> {
    let c = &model.config;
    let mut counts = MatchCounts::default();
    let mut loss = LossBreakdown::default();
    let mut batches = 0usize;
    let mut detections = Vec::with_capacity(data.len());
    for chunk in data.chunks(settings.batch_size) {
        let images = image_batch(&chunk.iter().map(|p| &p.image[..]).collect::<Vec<_>>())?;
        let targets: Vec<Vec<Polygon>> = chunk.iter().map(|p| p.targets.clone()).collect();
        let mut s = Session::new(&model.params, Mode::Eval);
        let out = model.forward(&mut s, &images)?;
        let l = detection_loss(&mut s.tape, &out, &targets, c.num_queries, c.num_points, weights)?;
        accumulate(&mut loss, &l.breakdown);
        batches += 1;
        for (dets, gt) in model.detections(&s.tape, &out)?.into_iter().zip(&targets) {
            let kept: Vec<ScoredPolygon> = dets.into_iter().filter(|d| d.score >= settings.score_threshold).collect();
            counts += match_counts(&kept, gt, settings.iou_threshold, settings.iou_resolution);
            detections.push(kept);
        }
    }
    if batches > 0 {
        scale(&mut loss, 1.0 / batches as f64);
    }
    Ok(EvalReport { counts, score: counts.score(), loss, detections })
}

fn accumulate(acc: &mut LossBreakdown, b: &LossBreakdown) {
    acc.classification += b.classification;
    acc.point_l1 += b.point_l1;
    acc.encoder_proposal += b.encoder_proposal;
    acc.total += b.total;
    acc.per_layer.resize(b.per_layer.len(), Default::default());
    for (a, l) in acc.per_layer.iter_mut().zip(&b.per_layer) {
        a.classification += l.classification;
        a.point_l1 += l.point_l1;
    }
}

fn scale(acc: &mut LossBreakdown, f: f64) {
    acc.classification *= f;
    acc.point_l1 *= f;
    acc.encoder_proposal *= f;
    acc.total *= f;
    for l in &mut acc.per_layer {
        l.classification *= f;
        l.point_l1 *= f;
    }
}

/// Training split plus the held-out split evaluated every `eval_every` steps.
pub struct TrainData {
    pub train: Vec<BaseSample>,
    pub eval: Vec<Prepared>,
    pub eval_split: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub best: Model,
    pub curve: Vec<MetricsRow>,
    pub best_iteration: usize,
    /// Training-batch loss before each step.
    pub train_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_f(&self) -> f64 {
        self.curve.last().map_or(0.0, |r| r.f_measure)
    }

    /// First evaluated iteration whose F reaches `target`.
    pub fn iterations_to_reach(&self, target: f64) -> Option<usize> {
        self.curve.iter().find(|r| r.f_measure >= target).map(|r| r.iteration)
    }
}

fn checkpoint_meta(cfg: &TrainConfig, iteration: usize, f: f64) -> serde_json::Value {
    serde_json::json!({ "iteration": iteration, "f_measure": f, "seed": cfg.seed, "label_mode": cfg.label_mode })
}

/// Runs the configured schedule. With `out_dir`, the metrics CSV and the
/// best and final checkpoints are written there; a non-finite loss or
/// gradient stops training and leaves the last good parameters on disk.
pub fn train(cfg: &TrainConfig, data: &TrainData, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let mc = &cfg.model;
    let mut model = Model::new(mc.clone(), cfg.seed)?;
    let mut opt = AdamWState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7261_696e));
    let cached: Option<Vec<Prepared>> = if cfg.rotation_augment {
        None
    } else {
        Some(data.train.iter().map(|b| b.to_input(mc.image_size, cfg.label_mode)).collect::<Result<_>>()?)
    };
    let angles: Vec<f64> = std::iter::once(0.0)
        .chain(TRAIN_ROTATIONS)
        .chain(std::iter::once(INVERSE_ROTATION))
        .collect();

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut curve = Vec::new();
    let mut train_losses = Vec::with_capacity(cfg.iterations);
    let mut best = (f64::NEG_INFINITY, 0usize, model.clone());

    let mut record = |it: usize, model: &Model, curve: &mut Vec<MetricsRow>| -> Result<()> {
        let report = evaluate(model, &data.eval, &cfg.loss, &cfg.eval)?;
        let row = MetricsRow::new(it, &data.eval_split, &report);
        if row.f_measure > best.0 {
            best = (row.f_measure, it, model.clone());
            if let Some(dir) = out_dir {
                save_checkpoint(&dir.join(BEST_CHECKPOINT), model, checkpoint_meta(cfg, it, row.f_measure))?;
            }
        }
        curve.push(row);
        if let Some(dir) = out_dir {
            write_atomic(&dir.join(METRICS_FILE), metrics_csv(curve).as_bytes())?;
        }
        Ok(())
    };

    record(0, &model, &mut curve)?;
    for it in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order = (0..data.train.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            batch.push(match &cached {
                Some(c) => c[i].clone(),
                None => {
                    let a = *angles.choose(&mut rng).expect("non-empty");
                    data.train[i].rotated(a).to_input(mc.image_size, cfg.label_mode)?
                }
            });
        }

        let mut step = || -> Result<f64> {
            let images = image_batch(&batch.iter().map(|p| &p.image[..]).collect::<Vec<_>>())?;
            let targets: Vec<Vec<Polygon>> = batch.iter().map(|p| p.targets.clone()).collect();
            let mut s = Session::new(&model.params, Mode::Train);
            let out = model.forward(&mut s, &images)?;
            let loss = detection_loss(&mut s.tape, &out, &targets, mc.num_queries, mc.num_points, &cfg.loss)?;
            let grads = s.tape.backward(loss.total)?;
            let mut g = s.param_grads(&grads);
            clip_grad_norm(&mut g, cfg.grad_clip);
            let stats = s.take_batch_stats();
            drop(s);
            adamw_step(&mut model.params, &g, &mut opt, cfg.learning_rate_at(it), &cfg.adamw())?;
            for (name, st) in &stats {
                model.params.update_running_stats(name, st)?;
            }
            Ok(loss.breakdown.total)
        };
        let value = match step() {
            Ok(v) => v,
            Err(Error::NonFinite(msg)) => {
                let mut msg = format!("iteration {it}: {msg}");
                if let Some(dir) = out_dir {
                    let path = dir.join(LAST_GOOD_CHECKPOINT);
                    save_checkpoint(&path, &model, checkpoint_meta(cfg, it, f64::NAN))?;
                    let _ = write!(msg, "; last good parameters saved to {}", path.display());
                }
                return Err(Error::NonFinite(msg));
            }
            Err(e) => return Err(e),
        };
        train_losses.push(value);
        if (it + 1) % cfg.eval_every == 0 {
            record(it + 1, &model, &mut curve)?;
        }
    }
    let final_f = curve.last().map_or(0.0, |r| r.f_measure);
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join(FINAL_CHECKPOINT), &model, checkpoint_meta(cfg, cfg.iterations, final_f))?;
    }
    let (_, best_iteration, best_model) = best;
    Ok(TrainOutcome { model, best: best_model, curve, best_iteration, train_losses })
}
