//! Annotation JSON for one split plus its PGM images.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic::write_atomic;
use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::geometry::{Orientation, Point, Polygon, TextAnnotation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: usize,
    pub width: usize,
    pub height: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: usize,
    pub points: Vec<[f64; 2]>,
    pub orientation: Orientation,
}

impl AnnotationRecord {
    pub fn polygon(&self) -> Result<Polygon> {
        Polygon::new(self.points.iter().map(|p| Point::new(p[0], p[1])).collect())
    }

    pub fn from_annotation(image_id: usize, a: &TextAnnotation) -> Self {
        Self {
            image_id,
            points: a.polygon.points().iter().map(|p| [p.x, p.y]).collect(),
            orientation: a.orientation,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
}

impl AnnotationFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Format(format!(
                "annotation JSON, line {} column {}: {e}",
                e.line(),
                e.column()
            ))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Annotations of one image, in file order, as typed polygons.
    pub fn annotations_for(&self, image_id: usize) -> Result<Vec<TextAnnotation>> {
        self.annotations
            .iter()
            .filter(|a| a.image_id == image_id)
            .enumerate()
            .map(|(i, a)| Ok(TextAnnotation::new(i, a.polygon()?, a.orientation)))
            .collect()
    }
}

/// An image with its annotations, held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    pub annotations: Vec<TextAnnotation>,
}

pub const ANNOTATION_FILE: &str = "annotations.json";

/// Writes `samples` as `<dir>/<id>.pgm` plus one annotation JSON.
pub fn save_split(dir: &Path, samples: &[Sample]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut file = AnnotationFile::default();
    for (id, s) in samples.iter().enumerate() {
        let name = format!("{id:05}.pgm");
        s.image.save_pgm(&dir.join(&name))?;
        file.images.push(ImageRecord {
            id,
            width: s.image.width,
            height: s.image.height,
            file: name,
        });
        file.annotations
            .extend(s.annotations.iter().map(|a| AnnotationRecord::from_annotation(id, a)));
    }
    write_atomic(&dir.join(ANNOTATION_FILE), file.to_json()?.as_bytes())?;
    Ok(())
}

pub fn load_split(dir: &Path) -> Result<Vec<Sample>> {
    let file = AnnotationFile::load(&dir.join(ANNOTATION_FILE))?;
    file.images
        .iter()
        .map(|rec| {
            let image = GrayImage::load_pgm(&dir.join(&rec.file))?;
            if (image.width, image.height) != (rec.width, rec.height) {
                return Err(Error::Format(format!(
                    "{}: size {}x{} disagrees with annotation {}x{}",
                    rec.file, image.width, image.height, rec.width, rec.height
                )));
            }
            Ok(Sample { image, annotations: file.annotations_for(rec.id)? })
        })
        .collect()
}
