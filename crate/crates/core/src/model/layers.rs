//! Building blocks shared by the encoder and decoder.

use rand::Rng;

use super::config::{EfsaMode, ModelConfig};
use crate::error::Result;
use crate::tensor::{multi_head_attention, MapShape, MhaWeights, ParamStore, Session, Tensor, Var};

/// Row layout of decoder queries: `(batch, instance, point)`, point fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryLayout {
    pub batch: usize,
    pub instances: usize,
    pub points: usize,
}

impl QueryLayout {
    pub fn rows(&self) -> usize {
        self.batch * self.instances * self.points
    }

    pub fn groups(&self) -> usize {
        self.batch * self.instances
    }

    /// Row `(b, n, k)` of the permuted tensor reads row `(b, k, n)`.
    pub fn point_major(&self) -> Vec<usize> {
        let (k, n) = (self.instances, self.points);
        (0..self.batch)
            .flat_map(|b| (0..n).flat_map(move |p| (0..k).map(move |i| (b * k + i) * n + p)))
            .collect()
    }

    pub fn instance_major(&self) -> Vec<usize> {
        let (k, n) = (self.instances, self.points);
        (0..self.batch)
            .flat_map(|b| (0..k).flat_map(move |i| (0..n).map(move |p| (b * n + p) * k + i)))
            .collect()
    }
}

pub fn init_deformable(
    store: &mut ParamStore,
    name: &str,
    d: usize,
    heads: usize,
    points: usize,
    rng: &mut impl Rng,
) {
    store.init_linear(&format!("{name}.value"), d, d, rng);
    store.init_linear(&format!("{name}.out"), d, d, rng);
    // sampling offsets start on rays spread evenly over the heads, growing
    // one feature cell per sampling point
    let mut bias = Vec::with_capacity(heads * points * 2);
    for h in 0..heads {
        let theta = h as f64 * std::f64::consts::TAU / heads as f64;
        let (s, c) = theta.sin_cos();
        let m = c.abs().max(s.abs());
        for p in 0..points {
            bias.push(c / m * (p + 1) as f64);
            bias.push(s / m * (p + 1) as f64);
        }
    }
    store.insert(format!("{name}.offsets.weight"), Tensor::zeros([d, heads * points * 2]));
    store.insert(
        format!("{name}.offsets.bias"),
        Tensor::new([heads * points * 2], bias).expect("length matches"),
    );
    store.insert(format!("{name}.weights.weight"), Tensor::zeros([d, heads * points]));
    store.insert(format!("{name}.weights.bias"), Tensor::zeros([heads * points]));
}

/// Deformable attention of `query: [Q, d]` around `reference: [Q, 2]` into an
/// already projected `value: [B*H*W, d]`. Offsets are predicted in feature
/// cells and converted to normalized units.
#[allow(clippy::too_many_arguments)]
pub fn deformable_attention(
    s: &mut Session<'_>,
    name: &str,
    query: Var,
    reference: Var,
    value: Var,
    map: MapShape,
    heads: usize,
    points: usize,
) -> Result<Var> {
    let q = s.tape.value(query).rows();
    let width = heads * points * 2;
    let raw = s.linear(&format!("{name}.offsets"), query)?;
    let scale: Vec<f64> = (0..q * width)
        .map(|i| if i % 2 == 0 { 1.0 / map.width as f64 } else { 1.0 / map.height as f64 })
        .collect();
    let scale = s.tape.constant(Tensor::new([q, width], scale)?);
    let offsets = s.tape.mul(raw, scale)?;
    let index = (0..q).flat_map(|r| (0..width).map(move |c| r * 2 + c % 2)).collect();
    let base = s.tape.gather(reference, index, vec![q, width])?;
    let locations = s.tape.add(base, offsets)?;

    let logits = s.linear(&format!("{name}.weights"), query)?;
    let logits = s.tape.reshape(logits, vec![q * heads, points])?;
    let weights = s.tape.softmax(logits);
    let weights = s.tape.reshape(weights, vec![q, heads * points])?;

    let sampled = s.tape.deformable_core(value, locations, weights, map, heads, points)?;
    s.linear(&format!("{name}.out"), sampled)
}

pub fn init_ffn(store: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut impl Rng) {
    store.init_linear(&format!("{name}.ffn1"), d, hidden, rng);
    store.init_linear(&format!("{name}.ffn2"), hidden, d, rng);
    store.init_norm(&format!("{name}.ffn_norm"), d);
}

pub fn ffn(s: &mut Session<'_>, name: &str, x: Var) -> Result<Var> {
    let h = s.linear(&format!("{name}.ffn1"), x)?;
    let h = s.tape.relu(h);
    let y = s.linear(&format!("{name}.ffn2"), h)?;
    let sum = s.tape.add(x, y)?;
    s.layer_norm(&format!("{name}.ffn_norm"), sum)
}

/// Sine features of every point, then a shared linear map and layer norm:
/// `[R, 2] -> [R, d]`.
pub fn positional_query_encode(s: &mut Session<'_>, points: Var, d: usize) -> Result<Var> {
    let enc = s.tape.sine_encode(points, d / 2)?;
    let p = s.linear("query.point_proj", enc)?;
    s.layer_norm("query.point_norm", p)
}

/// Encodes each `(x, y, w, h)` box once and repeats it for all `n` point
/// queries of the instance: `[R, 4] -> [R*n, d]`.
pub fn baseline_box_query_encode(s: &mut Session<'_>, boxes: Var, d: usize, n: usize) -> Result<Var> {
    let r = s.tape.value(boxes).rows();
    let enc = s.tape.sine_encode(boxes, d / 2)?;
    let p = s.linear("query.box_proj", enc)?;
    let p = s.layer_norm("query.box_norm", p)?;
    let rows: Vec<usize> = (0..r).flat_map(|i| std::iter::repeat(i).take(n)).collect();
    s.tape.gather_rows(p, &rows)
}

pub fn init_query_encoders(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) {
    let d = cfg.d_model;
    store.init_linear("query.point_proj", d, d, rng);
    store.init_norm("query.point_norm", d);
    store.init_linear("query.box_proj", 2 * d, d, rng);
    store.init_norm("query.box_norm", d);
}

pub fn init_efsa(store: &mut ParamStore, cfg: &ModelConfig, name: &str, rng: &mut impl Rng) {
    let d = cfg.d_model;
    MhaWeights::init(store, &format!("{name}.intra"), d, rng);
    MhaWeights::init(store, &format!("{name}.inter"), d, rng);
    store.init_norm(&format!("{name}.inter_norm"), d);
    match cfg.efsa_mode {
        EfsaMode::Fsa => store.init_norm(&format!("{name}.intra_norm"), d),
        EfsaMode::Efsa => {
            let ks = cfg.kernel_size();
            for c in 0..cfg.efsa_conv_layers {
                let fan = d * ks;
                let limit = (6.0 / (2 * fan) as f64).sqrt();
                let w = (0..d * d * ks).map(|_| rng.gen_range(-limit..limit)).collect();
                store.insert(
                    format!("{name}.conv{c}.kernel"),
                    Tensor::new([d, d, ks], w).expect("length matches"),
                );
                store.init_batch_norm(&format!("{name}.conv{c}.bn"), d);
            }
            store.init_norm(&format!("{name}.fuse_norm_a"), d);
            store.init_linear(&format!("{name}.fuse_fc"), d, d, rng);
            store.init_norm(&format!("{name}.fuse_norm_b"), d);
        }
    }
}

/// The circular-convolution branch: `ReLU(BN(CirConv(q)))`, repeated per
/// configured layer, over the points of each instance.
pub fn efsa_local_branch(
    s: &mut Session<'_>,
    cfg: &ModelConfig,
    name: &str,
    q: Var,
    points: usize,
) -> Result<Var> {
    let mut x = q;
    for c in 0..cfg.efsa_conv_layers {
        let k = s.param(&format!("{name}.conv{c}.kernel"))?;
        x = s.tape.circular_conv1d(x, k, points)?;
        x = s.batch_norm(&format!("{name}.conv{c}.bn"), x)?;
        x = s.tape.relu(x);
    }
    Ok(x)
}

/// Self-attention over the decoder queries: within each instance (with the
/// optional circular branch), then across instances per point index.
pub fn efsa(
    s: &mut Session<'_>,
    cfg: &ModelConfig,
    name: &str,
    tgt: Var,
    pos: Var,
    layout: QueryLayout,
) -> Result<Var> {
    let q = s.tape.add(tgt, pos)?;
    let w = MhaWeights::bind(s, &format!("{name}.intra"))?;
    let intra = multi_head_attention(&mut s.tape, &w, q, q, tgt, layout.groups(), cfg.n_heads)?;
    let fused = match cfg.efsa_mode {
        EfsaMode::Fsa => {
            let sum = s.tape.add(tgt, intra)?;
            s.layer_norm(&format!("{name}.intra_norm"), sum)?
        }
        EfsaMode::Efsa => {
            let local = efsa_local_branch(s, cfg, name, q, layout.points)?;
            let a = s.tape.add(intra, local)?;
            let a = s.layer_norm(&format!("{name}.fuse_norm_a"), a)?;
            let b = s.tape.add(tgt, a)?;
            let b = s.linear(&format!("{name}.fuse_fc"), b)?;
            s.layer_norm(&format!("{name}.fuse_norm_b"), b)?
        }
    };

    let to_points = layout.point_major();
    let with_pos = s.tape.add(fused, pos)?;
    let x = s.tape.gather_rows(with_pos, &to_points)?;
    let base = s.tape.gather_rows(fused, &to_points)?;
    let w = MhaWeights::bind(s, &format!("{name}.inter"))?;
    let groups = layout.batch * layout.points;
    let inter = multi_head_attention(&mut s.tape, &w, x, x, x, groups, cfg.n_heads)?;
    let out = s.tape.add(base, inter)?;
    let out = s.layer_norm(&format!("{name}.inter_norm"), out)?;
    s.tape.gather_rows(out, &layout.instance_major())
}

/// Deformable block `da` with zero offsets and uniform weights over
/// 2 heads x 3 points on width 8.
#[cfg(test)]
pub(crate) fn init_deformable_for_tests(store: &mut ParamStore, rng: &mut impl Rng) {
    init_deformable(store, "da", 8, 2, 3, rng);
    store.insert("da.offsets.bias", Tensor::zeros([12]));
}
