//! Point-query text detection transformer.

pub mod data;
pub mod error;
pub mod geometry;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
