//! Ablation grids: one training run per configuration and seed, scored on
//! every held-out test split.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prepare::{prepare_all, BaseSample, LabelMode};
use super::trainer::{evaluate, metrics_csv, train, MetricsRow, TrainConfig, TrainData, METRICS_FILE};
use crate::data::{write_atomic, Sample};
use crate::error::{Error, Result};
use crate::model::{EfsaMode, QueryMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub query_mode: QueryMode,
    pub efsa_mode: EfsaMode,
    pub label_mode: LabelMode,
    pub rotation: bool,
}

impl AblationConfig {
    pub fn name(&self) -> String {
        let q = match self.query_mode {
            QueryMode::BoxBaseline => "box",
            QueryMode::ExplicitPoint => "point",
        };
        let e = match self.efsa_mode {
            EfsaMode::Fsa => "fsa",
            EfsaMode::Efsa => "efsa",
        };
        let l = match self.label_mode {
            LabelMode::Original => "orig",
            LabelMode::Positional => "pos",
        };
        format!("{q}-{e}-{l}-{}", if self.rotation { "rot" } else { "norot" })
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.model.query_mode = self.query_mode;
        cfg.model.efsa_mode = self.efsa_mode;
        cfg.label_mode = self.label_mode;
        cfg.rotation_augment = self.rotation;
        cfg
    }
}

/// Both query modes, both attention modes and both label forms, with
/// rotation augmentation on.
pub fn default_grid() -> Vec<AblationConfig> {
    let mut grid = Vec::with_capacity(8);
    for query_mode in [QueryMode::BoxBaseline, QueryMode::ExplicitPoint] {
        for efsa_mode in [EfsaMode::Fsa, EfsaMode::Efsa] {
            for label_mode in [LabelMode::Original, LabelMode::Positional] {
                grid.push(AblationConfig { query_mode, efsa_mode, label_mode, rotation: true });
            }
        }
    }
    grid
}

/// Raw samples shared by every run of a grid.
pub struct AblationSplits {
    pub train: Vec<Sample>,
    pub normal: Vec<Sample>,
    pub rotated: Vec<Sample>,
    pub inverse: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub f_normal: f64,
    pub f_rotated: f64,
    pub f_inverse: f64,
    pub curve: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub runs: Vec<SeedResult>,
}

fn tag(v: &impl Serialize) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl AblationRow {
    pub fn mean_f(&self) -> (f64, f64, f64) {
        (
            mean(self.runs.iter().map(|r| r.f_normal)),
            mean(self.runs.iter().map(|r| r.f_rotated)),
            mean(self.runs.iter().map(|r| r.f_inverse)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

const HEADER: [&str; 9] = [
    "config", "query_mode", "efsa_mode", "label_mode", "rotation", "seeds", "f_normal", "f_rotated", "f_inverse",
];

impl AblationReport {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let c = &r.config;
                let (n, rot, inv) = r.mean_f();
                vec![
                    c.name(),
                    tag(&c.query_mode),
                    tag(&c.efsa_mode),
                    tag(&c.label_mode),
                    if c.rotation { "on" } else { "off" }.to_string(),
                    r.runs.len().to_string(),
                    format!("{n:.4}"),
                    format!("{rot:.4}"),
                    format!("{inv:.4}"),
                ]
            })
            .collect()
    }

    /// Seed-mean F per configuration on the three test splits.
    pub fn to_csv(&self) -> String {
        let mut s = HEADER.join(",");
        s.push('\n');
        for row in self.cells() {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// The same table with space-aligned columns.
    pub fn to_text(&self) -> String {
        let header: Vec<String> = HEADER.iter().map(|h| h.to_string()).collect();
        let body = self.cells();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| std::iter::once(&header).chain(&body).map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for row in std::iter::once(&header).chain(&body) {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(s, "{}", line.join("  ").trim_end());
        }
        s
    }
}

/// Trains every configuration for every seed and scores the final model.
/// With `out_dir`, each run's metrics CSV goes to `<config>/seed<k>/`.
pub fn ablate(
    base: &TrainConfig,
    grid: &[AblationConfig],
    seeds: &[u64],
    splits: &AblationSplits,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one configuration and one seed".into()));
    }
    let (size, n) = (base.model.image_size, base.model.num_points);
    let train_base: Vec<BaseSample> = splits.train.iter().map(|s| BaseSample::new(s, n)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(grid.len());
    for config in grid {
        let normal = prepare_all(&splits.normal, size, n, config.label_mode)?;
        let rotated = prepare_all(&splits.rotated, size, n, config.label_mode)?;
        let inverse = prepare_all(&splits.inverse, size, n, config.label_mode)?;
        let data = TrainData { train: train_base.clone(), eval: normal, eval_split: "normal".into() };
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..config.apply(base) };
            let dir = out_dir.map(|d| d.join(config.name()).join(format!("seed{seed}")));
            if let Some(d) = &dir {
                std::fs::create_dir_all(d)?;
            }
            let outcome = train(&cfg, &data, dir.as_deref())?;
            let f = |split: &[_]| -> Result<f64> {
                Ok(evaluate(&outcome.model, split, &cfg.loss, &cfg.eval)?.score.f_measure)
            };
            runs.push(SeedResult {
                seed,
                f_normal: outcome.final_f(),
                f_rotated: f(&rotated)?,
                f_inverse: f(&inverse)?,
                curve: outcome.curve,
            });
        }
        rows.push(AblationRow { config: *config, runs });
    }
    let report = AblationReport { rows };
    if let Some(d) = out_dir {
        write_atomic(&d.join("summary.csv"), report.to_csv().as_bytes())?;
        write_atomic(&d.join("summary.txt"), report.to_text().as_bytes())?;
        for row in &report.rows {
            let all: Vec<MetricsRow> = row.runs.iter().flat_map(|r| r.curve.clone()).collect();
            write_atomic(&d.join(row.config.name()).join(METRICS_FILE), metrics_csv(&all).as_bytes())?;
        }
    }
    Ok(report)
}
