//! Turns stored samples into model inputs and loss targets.

use serde::{Deserialize, Serialize};

use crate::data::{GrayImage, Sample};
use crate::error::Result;
use crate::geometry::{canonicalize_positional_label, resample_polygon, Point, Polygon, Rotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Control points follow the annotated reading order.
    #[default]
    Original,
    /// Control points are canonicalized to the positional label form.
    Positional,
}

impl std::str::FromStr for LabelMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "original" => Ok(Self::Original),
            "positional" => Ok(Self::Positional),
            _ => Err(format!("unknown label mode {s:?} (original|positional)")),
        }
    }
}

/// A sample with polygons already resampled to the model's point count,
/// still in pixel coordinates and reading order.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSample {
    pub image: GrayImage,
    pub polygons: Vec<Polygon>,
}

impl BaseSample {
    pub fn new(sample: &Sample, num_points: usize) -> Result<Self> {
        let polygons = sample
            .annotations
            .iter()
            .map(|a| resample_polygon(&a.polygon, num_points))
            .collect::<Result<_>>()?;
        Ok(Self { image: sample.image.clone(), polygons })
    }

    /// Rotates about the image center onto the expanded canvas.
    pub fn rotated(&self, angle: f64) -> Self {
        if angle == 0.0 {
            return self.clone();
        }
        let rot = Rotation::new(angle, self.image.width, self.image.height);
        Self {
            image: self.image.rotate(&rot),
            polygons: self.polygons.iter().map(|p| rot.apply_polygon(p)).collect(),
        }
    }

    /// Resizes to `size x size`, normalizes coordinates to `[0, 1]` and
    /// applies the label form.
    pub fn to_input(&self, size: usize, mode: LabelMode) -> Result<Prepared> {
        let (w, h) = (self.image.width as f64, self.image.height as f64);
        let image = self.image.resize(size, size).to_unit();
        let targets = self
            .polygons
            .iter()
            .map(|p| {
                let p = match mode {
                    LabelMode::Original => p.clone(),
                    LabelMode::Positional => canonicalize_positional_label(p)?,
                };
                Ok(p.map(|q| Point::new(q.x / w, q.y / h)))
            })
            .collect::<Result<_>>()?;
        Ok(Prepared { image, targets })
    }
}

/// Model input (`size * size` values in `[0, 1]`) and normalized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub image: Vec<f64>,
    pub targets: Vec<Polygon>,
}

pub fn prepare_all(samples: &[Sample], size: usize, num_points: usize, mode: LabelMode) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| BaseSample::new(s, num_points)?.to_input(size, mode))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::synth::{generate_scenes, SceneParams};

    #[test]
    fn positional_targets_are_canonical_and_normalized() {
        let p = SceneParams { inverse_prob: 0.5, mirrored_prob: 0.2, ..Default::default() };
        let samples: Vec<Sample> = generate_scenes(1, 30, &p).unwrap().into_iter().map(|s| s.into_sample()).collect();
        for prepared in prepare_all(&samples, 32, 8, LabelMode::Positional).unwrap() {
            assert_eq!(prepared.image.len(), 32 * 32);
            for t in &prepared.targets {
                assert_eq!(t.len(), 8);
                assert_eq!(&canonicalize_positional_label(t).unwrap(), t);
                assert!(t.points().iter().all(|q| (0.0..=1.0).contains(&q.x) && (0.0..=1.0).contains(&q.y)));
            }
        }
    }

    #[test]
    fn half_turn_keeps_original_labels_in_reading_order() {
        let samples: Vec<Sample> = generate_scenes(2, 1, &SceneParams::default()).unwrap().into_iter().map(|s| s.into_sample()).collect();
        let base = BaseSample::new(&samples[0], 8).unwrap();
        let turned = base.rotated(180.0);
        let a = base.polygons[0].points()[0];
        let b = turned.polygons[0].points()[0];
        assert!((a.x + b.x - 64.0).abs() < 1e-9 && (a.y + b.y - 64.0).abs() < 1e-9);
    }
}
