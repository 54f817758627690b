//! Polygon geometry, label canonicalization, rotation and IoU evaluation.

mod annotation;
mod bezier;
mod canonical;
mod eval;
mod iou;
mod polygon;
mod rotate;

pub use annotation::{Orientation, TextAnnotation};
pub use bezier::{resample_polygon, resample_polyline, BezierSidePair, CubicBezier};
pub use canonical::{
    canonicalize, canonicalize_positional_label, side_arrangement, CanonicalMode,
    SideArrangement, MIN_Y_TIE,
};
pub use eval::{f_measure, match_counts, FMeasure, MatchCounts, ScoredPolygon};
pub use iou::{polygon_iou, IouResult, DEFAULT_IOU_RESOLUTION};
pub use polygon::{bounds, centroid, is_clockwise, signed_area, Point, Polygon, DEGENERATE_AREA};
pub use rotate::{rotate_annotation, Rotation};
