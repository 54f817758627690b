//! Rotation about the image center onto an expanded canvas.
//!
//! Angles are in degrees; a positive angle turns the picture
//! counter-clockwise as seen on screen (with `y` pointing down).

use super::annotation::TextAnnotation;
use super::canonical::canonicalize_positional_label;
use super::polygon::{Point, Polygon};
use crate::error::Result;

/// Slack subtracted before rounding canvas sizes up, so that exact
/// multiples of 90 degrees do not grow the canvas by a pixel.
const CANVAS_SLACK: f64 = 1e-6;

/// Affine map taking source-image coordinates to the rotated canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    cos: f64,
    sin: f64,
    src_center: Point,
    dst_center: Point,
    pub width: usize,
    pub height: usize,
}

impl Rotation {
    pub fn new(angle_degrees: f64, width: usize, height: usize) -> Self {
        let (sin, cos) = angle_degrees.to_radians().sin_cos();
        let (w, h) = (width as f64, height as f64);
        let nw = ((w * cos).abs() + (h * sin).abs() - CANVAS_SLACK).ceil().max(1.0);
        let nh = ((w * sin).abs() + (h * cos).abs() - CANVAS_SLACK).ceil().max(1.0);
        Self {
            cos,
            sin,
            src_center: Point::new(w / 2.0, h / 2.0),
            dst_center: Point::new(nw / 2.0, nh / 2.0),
            width: nw as usize,
            height: nh as usize,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let (dx, dy) = (p.x - self.src_center.x, p.y - self.src_center.y);
        Point::new(
            self.dst_center.x + self.cos * dx + self.sin * dy,
            self.dst_center.y - self.sin * dx + self.cos * dy,
        )
    }

    /// Maps a canvas coordinate back into the source image.
    pub fn invert(&self, p: Point) -> Point {
        let (dx, dy) = (p.x - self.dst_center.x, p.y - self.dst_center.y);
        Point::new(
            self.src_center.x + self.cos * dx - self.sin * dy,
            self.src_center.y + self.sin * dx + self.cos * dy,
        )
    }

    pub fn apply_polygon(&self, polygon: &Polygon) -> Polygon {
        polygon.map(|p| self.apply(p))
    }
}

/// Rotates one annotation. In positional mode the result is re-canonicalized;
/// otherwise the reading-order labelling is carried through unchanged.
/// Returns the annotation together with the expanded canvas size.
pub fn rotate_annotation(
    annotation: &TextAnnotation,
    angle_degrees: f64,
    image_size: (usize, usize),
    positional: bool,
) -> Result<(TextAnnotation, (usize, usize))> {
    let rot = Rotation::new(angle_degrees, image_size.0, image_size.1);
    let mut polygon = rot.apply_polygon(&annotation.polygon);
    if positional {
        polygon = canonicalize_positional_label(&polygon)?;
    }
    Ok((
        TextAnnotation { polygon, ..annotation.clone() },
        (rot.width, rot.height),
    ))
}
