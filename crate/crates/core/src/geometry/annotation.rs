use serde::{Deserialize, Serialize};

use super::polygon::Polygon;

/// Reading-direction tag carried for stratified evaluation only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    #[default]
    Normal,
    Inverse,
    Mirrored,
}

impl Orientation {
    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Normal => "normal",
            Orientation::Inverse => "inverse",
            Orientation::Mirrored => "mirrored",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextAnnotation {
    pub instance_id: usize,
    pub polygon: Polygon,
    pub orientation: Orientation,
}

impl TextAnnotation {
    pub fn new(instance_id: usize, polygon: Polygon, orientation: Orientation) -> Self {
        Self { instance_id, polygon, orientation }
    }
}
