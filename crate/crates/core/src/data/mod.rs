//! Image rasters and the on-disk dataset format.

mod atomic;
mod dataset;
mod image;

pub use dataset::{
    load_split, save_split, AnnotationFile, AnnotationRecord, ImageRecord, Sample,
    ANNOTATION_FILE,
};
pub use atomic::write_atomic;
pub use image::GrayImage;
