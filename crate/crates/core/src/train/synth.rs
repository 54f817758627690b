//! Synthetic ribbon scenes.
//!
//! Each instance is a band of constant width swept along a quadratic spine.
//! Brightness ramps from the reading-order start to the end, so the
//! direction a label should run in can be read off the pixels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GrayImage, Sample};
use crate::error::{Error, Result};
use crate::geometry::{bounds, Orientation, Point, Polygon, Rotation, TextAnnotation};

/// Rotation-augmentation angle set used during training, in degrees.
pub const TRAIN_ROTATIONS: [f64; 6] = [-45.0, -30.0, -15.0, 15.0, 30.0, 45.0];
/// The half turn applied to upright instances.
pub const INVERSE_ROTATION: f64 = 180.0;
/// Large angles of the rotated test split, applied in addition to the original.
pub const ROT_TEST_ROTATIONS: [f64; 5] = [45.0, 135.0, 180.0, 225.0, 315.0];

const MAX_ATTEMPTS: usize = 100;
const SPINE_SAMPLES: usize = 64;
const SUPERSAMPLE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub image_size: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Spine chord length as a fraction of the image side.
    pub length: (f64, f64),
    /// Ribbon width in pixels.
    pub width: (f64, f64),
    /// Sag of the quadratic control point, as a fraction of the chord.
    pub curvature: (f64, f64),
    /// Largest chord tilt away from horizontal, degrees.
    pub max_tilt: f64,
    pub inverse_prob: f64,
    pub mirrored_prob: f64,
    /// Points stored per long side.
    pub points_per_side: usize,
    pub noise: f64,
    /// Whole-scene rotations drawn uniformly; empty for none.
    pub rotations: Vec<f64>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            image_size: 64,
            min_instances: 1,
            max_instances: 3,
            length: (0.35, 0.7),
            width: (6.0, 10.0),
            curvature: (-0.15, 0.15),
            max_tilt: 20.0,
            inverse_prob: 0.03,
            mirrored_prob: 0.0,
            points_per_side: 8,
            noise: 0.04,
            rotations: Vec::new(),
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 16 {
            return bad(format!("image size {} below 16", self.image_size));
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return bad(format!("instance range {}..={}", self.min_instances, self.max_instances));
        }
        for (name, (lo, hi)) in [("length", self.length), ("width", self.width), ("curvature", self.curvature)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return bad(format!("{name} range ({lo}, {hi})"));
            }
        }
        if self.length.0 <= 0.0 || self.width.0 <= 0.0 {
            return bad("length and width must be positive".into());
        }
        for (name, p) in [("inverse", self.inverse_prob), ("mirrored", self.mirrored_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if self.inverse_prob + self.mirrored_prob > 1.0 {
            return bad("inverse and mirrored probabilities sum above 1".into());
        }
        if self.points_per_side < 4 {
            return bad(format!("{} points per side, need at least 4", self.points_per_side));
        }
        Ok(())
    }
}

/// The quadratic spine of one instance, in reading order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spine {
    pub start: Point,
    pub control: Point,
    pub end: Point,
    pub width: f64,
}

impl Spine {
    fn at(&self, t: f64) -> Point {
        let s = 1.0 - t;
        Point::new(
            s * s * self.start.x + 2.0 * s * t * self.control.x + t * t * self.end.x,
            s * s * self.start.y + 2.0 * s * t * self.control.y + t * t * self.end.y,
        )
    }

    fn tangent(&self, t: f64) -> Point {
        let s = 1.0 - t;
        let dx = 2.0 * s * (self.control.x - self.start.x) + 2.0 * t * (self.end.x - self.control.x);
        let dy = 2.0 * s * (self.control.y - self.start.y) + 2.0 * t * (self.end.y - self.control.y);
        let len = dx.hypot(dy).max(1e-12);
        Point::new(dx / len, dy / len)
    }

    fn reversed(&self) -> Self {
        Self { start: self.end, end: self.start, ..*self }
    }

    /// One side offset along the normal `(ty, -tx)` (scaled by `sign`).
    fn side(&self, m: usize, sign: f64) -> Vec<Point> {
        (0..m)
            .map(|i| {
                let t = i as f64 / (m - 1) as f64;
                let (p, d) = (self.at(t), self.tangent(t));
                let o = sign * self.width / 2.0;
                Point::new(p.x + o * d.y, p.y - o * d.x)
            })
            .collect()
    }

    /// The labelled outline: first side start to end, second side back.
    /// With `flip_normal` the first side is the one on the other hand of
    /// the reading direction, which makes the outline counter-clockwise.
    fn outline(&self, m: usize, flip_normal: bool) -> Vec<Point> {
        let sign = if flip_normal { -1.0 } else { 1.0 };
        let mut pts = self.side(m, sign);
        let mut other = self.side(m, -sign);
        other.reverse();
        pts.extend(other);
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub seed: u64,
    pub spines: Vec<Spine>,
    pub orientations: Vec<Orientation>,
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: GrayImage,
    pub annotations: Vec<TextAnnotation>,
    pub meta: SceneMeta,
}

impl SyntheticScene {
    pub fn into_sample(self) -> Sample {
        Sample { image: self.image, annotations: self.annotations }
    }
}

/// SplitMix64 finalizer; gives well-separated per-item seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn upright_spine(rng: &mut ChaCha8Rng, p: &SceneParams) -> Spine {
    let size = p.image_size as f64;
    let len = draw(rng, p.length) * size;
    let tilt = draw(rng, (-p.max_tilt, p.max_tilt)).to_radians();
    let (dx, dy) = (tilt.cos() * len / 2.0, tilt.sin() * len / 2.0);
    let sag = draw(rng, p.curvature) * len * 2.0;
    let width = draw(rng, p.width);
    // keep the chord ends and the bulge roughly on the canvas
    let mx = (dx.abs() + width).min(size / 2.0);
    let my = (dy.abs() + width + sag.abs() / 2.0).min(size / 2.0);
    let center = Point::new(rng.gen_range(mx..=size - mx), rng.gen_range(my..=size - my));
    Spine {
        start: Point::new(center.x - dx, center.y - dy),
        // the normal of a left-to-right chord is (dy, -dx) / |.|
        control: Point::new(center.x + sag * dy / len * 2.0, center.y - sag * dx / len * 2.0),
        end: Point::new(center.x + dx, center.y + dy),
        width,
    }
}

fn inside(points: &[Point], x: f64, y: f64) -> bool {
    let mut c = false;
    let n = points.len();
    for i in 0..n {
        let (a, b) = (points[i], points[(i + n - 1) % n]);
        if (a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x {
            c = !c;
        }
    }
    c
}

fn overlaps(a: (Point, Point), b: (Point, Point), margin: f64) -> bool {
    a.0.x - margin < b.1.x && b.0.x - margin < a.1.x && a.0.y - margin < b.1.y && b.0.y - margin < a.1.y
}

/// Paints one ribbon; brightness follows reading progress along `spine`.
fn paint(canvas: &mut [f64], size: usize, outline: &[Point], spine: &Spine, rng: &mut ChaCha8Rng, noise: f64) {
    let track: Vec<Point> = (0..=SPINE_SAMPLES).map(|i| spine.at(i as f64 / SPINE_SAMPLES as f64)).collect();
    let (lo, hi) = bounds(outline);
    let (x0, x1) = (lo.x.floor().max(0.0) as usize, (hi.x.ceil() as usize).min(size));
    let (y0, y1) = (lo.y.floor().max(0.0) as usize, (hi.y.ceil() as usize).min(size));
    let sub = SUPERSAMPLE as f64;
    for y in y0..y1 {
        for x in x0..x1 {
            let mut cover = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let (px, py) = (x as f64 + (sx as f64 + 0.5) / sub, y as f64 + (sy as f64 + 0.5) / sub);
                    if inside(outline, px, py) {
                        cover += 1.0 / (sub * sub);
                    }
                }
            }
            if cover == 0.0 {
                continue;
            }
            let c = Point::new(x as f64 + 0.5, y as f64 + 0.5);
            let nearest = track
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.dist(c).total_cmp(&b.1.dist(c)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let progress = nearest as f64 / SPINE_SAMPLES as f64;
            let value = 0.35 + 0.65 * progress + rng.gen_range(-noise..=noise);
            let px = &mut canvas[y * size + x];
            *px = (*px * (1.0 - cover) + value * cover).max(*px);
        }
    }
}

type Placed = (Spine, Orientation, Vec<Point>);

/// Places `count` ribbons one after another, each with up to
/// `MAX_ATTEMPTS` draws; `None` if one of them never fits.
fn try_layout(rng: &mut ChaCha8Rng, params: &SceneParams, count: usize) -> Option<Vec<Placed>> {
    let lim = params.image_size as f64 - 1.0;
    let mut layout: Vec<Placed> = Vec::with_capacity(count);
    let mut boxes = Vec::with_capacity(count);
    for _ in 0..count {
        let placed = (0..MAX_ATTEMPTS).find_map(|_| {
            let upright = upright_spine(rng, params);
            let u: f64 = rng.gen();
            let orientation = if u < params.inverse_prob {
                Orientation::Inverse
            } else if u < params.inverse_prob + params.mirrored_prob {
                Orientation::Mirrored
            } else {
                Orientation::Normal
            };
            let (spine, flip) = match orientation {
                Orientation::Normal => (upright, false),
                Orientation::Inverse => (upright.reversed(), false),
                Orientation::Mirrored => (upright.reversed(), true),
            };
            let outline = spine.outline(params.points_per_side, flip);
            let b = bounds(&outline);
            let outside = b.0.x < 1.0 || b.0.y < 1.0 || b.1.x > lim || b.1.y > lim;
            if outside || boxes.iter().any(|&o| overlaps(o, b, 2.0)) {
                None
            } else {
                Some((b, (spine, orientation, outline)))
            }
        })?;
        boxes.push(placed.0);
        layout.push(placed.1);
    }
    Some(layout)
}

/// Generates one scene. An instance that leaves the image or touches an
/// earlier one is redrawn, and the whole layout is restarted when one
/// never fits; after 100 failed layouts this returns an error.
pub fn generate_synthetic_scene(seed: u64, params: &SceneParams) -> Result<SyntheticScene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = params.image_size;
    let count = rng.gen_range(params.min_instances..=params.max_instances);

    let mut layout = Vec::new();
    for _ in 0..MAX_ATTEMPTS {
        if let Some(l) = try_layout(&mut rng, params, count) {
            layout = l;
            break;
        }
    }
    if layout.is_empty() {
        return Err(Error::Config(format!(
            "no in-bounds layout of {count} ribbons after {MAX_ATTEMPTS} attempts"
        )));
    }

    let mut canvas: Vec<f64> = (0..size * size).map(|_| rng.gen_range(0.0..=2.0 * params.noise)).collect();
    let mut annotations = Vec::with_capacity(count);
    for (i, (spine, orientation, outline)) in layout.iter().enumerate() {
        paint(&mut canvas, size, outline, spine, &mut rng, params.noise);
        annotations.push(TextAnnotation::new(i, Polygon::new(outline.clone())?, *orientation));
    }
    let image = GrayImage::from_unit(size, size, &canvas)?;
    let rotation = params.rotations.choose(&mut rng).copied().unwrap_or(0.0);
    let mut scene = SyntheticScene {
        image,
        annotations,
        meta: SceneMeta {
            seed,
            spines: layout.iter().map(|l| l.0).collect(),
            orientations: layout.iter().map(|l| l.1).collect(),
            rotation: 0.0,
        },
    };
    if rotation != 0.0 {
        scene = rotate_scene(&scene, rotation);
    }
    Ok(scene)
}

/// Rotates the raster onto an expanded canvas; labels keep their order.
pub fn rotate_scene(scene: &SyntheticScene, angle: f64) -> SyntheticScene {
    let rot = Rotation::new(angle, scene.image.width, scene.image.height);
    let annotations = scene
        .annotations
        .iter()
        .map(|a| TextAnnotation { polygon: rot.apply_polygon(&a.polygon), ..a.clone() })
        .collect();
    let mut meta = scene.meta.clone();
    meta.rotation += angle;
    SyntheticScene { image: scene.image.rotate(&rot), annotations, meta }
}

/// `count` scenes with per-scene seeds derived from `seed`.
pub fn generate_scenes(seed: u64, count: usize, params: &SceneParams) -> Result<Vec<SyntheticScene>> {
    (0..count as u64)
        .map(|i| generate_synthetic_scene(derive_seed(seed, i), params))
        .collect()
}

/// Each scene followed by its copies at the large test angles.
pub fn expand_rot_test_set(scenes: &[SyntheticScene]) -> Vec<SyntheticScene> {
    scenes
        .iter()
        .flat_map(|s| {
            std::iter::once(s.clone()).chain(ROT_TEST_ROTATIONS.iter().map(move |&a| rotate_scene(s, a)))
        })
        .collect()
}
