use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EfsaMode, ModelConfig, QueryMode};
use super::layers::{
    baseline_box_query_encode, deformable_attention, efsa, ffn, init_deformable, init_efsa,
    init_ffn, init_query_encoders, positional_query_encode, QueryLayout,
};
use super::prior::{point_update, prior_points_sampling, AnchorBoxProposal};
use crate::error::{Error, Result};
use crate::geometry::{Point, Polygon, ScoredPolygon};
use crate::tensor::{
    inverse_sigmoid_scalar, sigmoid_scalar, MapShape, Mode, ParamStore, Session, Tape, Tensor, Var,
    INVERSE_SIGMOID_EPS,
};

/// Prior probability the class heads start from.
const CLASS_PRIOR: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub memory: Var,
    pub map: MapShape,
    /// Objectness logit per memory position, `[B*H*W, 1]`.
    pub objectness: Var,
    /// Decoded proposal width and height per memory position, `[B*H*W, 2]`.
    pub wh: Var,
    /// Top-K proposals per image, detached from the tape.
    pub proposals: Vec<Vec<AnchorBoxProposal>>,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerOutput {
    /// `[B*K, 1]`.
    pub logits: Var,
    /// `[B*K, N*2]`, normalized `(x, y)` pairs.
    pub points: Var,
}

#[derive(Debug, Clone)]
pub struct DetectionOutput {
    pub encoder: EncoderOutput,
    pub layers: Vec<LayerOutput>,
}

impl DetectionOutput {
    pub fn last(&self) -> &LayerOutput {
        self.layers.last().expect("at least one decoder layer")
    }
}

/// Normalized centers of an `h x w` grid, row-major.
pub fn grid_centers(h: usize, w: usize) -> Vec<Point> {
    (0..h)
        .flat_map(|i| {
            (0..w).map(move |j| Point::new((j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = &config;
        let d = c.d_model;
        let widths = [1, c.stem_channels[0], c.stem_channels[1], d];
        for i in 0..3 {
            p.init_linear(&format!("stem.conv{i}"), 9 * widths[i], widths[i + 1], &mut rng);
        }
        p.init_norm("stem.norm", d);
        for l in 0..c.n_encoder_layers {
            let name = format!("enc{l}");
            init_deformable(&mut p, &format!("{name}.attn"), d, c.n_heads, c.n_deform_points, &mut rng);
            p.init_norm(&format!("{name}.attn_norm"), d);
            init_ffn(&mut p, &name, d, c.ffn_dim, &mut rng);
        }
        p.init_linear("proposal.proj", d, d, &mut rng);
        p.init_norm("proposal.norm", d);
        init_class_head(&mut p, "proposal.cls", d, &mut rng);
        p.init_linear("proposal.wh1", d, d, &mut rng);
        init_zero_linear(&mut p, "proposal.wh2", d, 2);

        let std = (1.0 / d as f64).sqrt();
        let content = (0..c.num_points * d).map(|_| rng.gen_range(-std..std)).collect();
        p.insert("query.content", Tensor::new([c.num_points, d], content)?);
        init_query_encoders(&mut p, c, &mut rng);
        for l in 0..c.n_decoder_layers {
            let name = format!("dec{l}");
            init_efsa(&mut p, c, &name, &mut rng);
            init_deformable(&mut p, &format!("{name}.cross"), d, c.n_heads, c.n_deform_points, &mut rng);
            p.init_norm(&format!("{name}.cross_norm"), d);
            init_ffn(&mut p, &name, d, c.ffn_dim, &mut rng);
            init_class_head(&mut p, &format!("{name}.cls"), d, &mut rng);
            p.init_linear(&format!("{name}.pts0"), d, d, &mut rng);
            p.init_linear(&format!("{name}.pts1"), d, d, &mut rng);
            init_zero_linear(&mut p, &format!("{name}.pts2"), d, 2);
        }
        if c.query_mode == QueryMode::ExplicitPoint {
            p.remove_prefix("query.box_");
        } else {
            p.remove_prefix("query.point_");
        }
        Ok(Self { config, params: p })
    }

    /// Runs the stem and encoder on `images: [B, S*S]` (values in `[0, 1]`)
    /// and selects the top-K proposals per image.
    pub fn encoder_forward(&self, s: &mut Session<'_>, images: &Tensor) -> Result<EncoderOutput> {
        let c = &self.config;
        let size = c.image_size;
        if images.cols() != size * size {
            return Err(Error::Shape {
                op: "encoder_forward",
                detail: format!("images {:?}, expected rows of {}", images.shape(), size * size),
            });
        }
        let batch = images.rows();
        let x = s.tape.constant(images.clone().reshape([batch * size * size, 1])?);
        let (mut x, mut h, mut w) = (x, size, size);
        for i in 0..3 {
            let wt = s.param(&format!("stem.conv{i}.weight"))?;
            let b = s.param(&format!("stem.conv{i}.bias"))?;
            let (y, ho, wo) = s.tape.conv2d(x, wt, Some(b), batch, h, w, 3, c.stem_strides[i], 1)?;
            x = if i < 2 { s.tape.relu(y) } else { y };
            (h, w) = (ho, wo);
        }
        let mut src = s.layer_norm("stem.norm", x)?;
        let map = MapShape { batch, height: h, width: w };
        let hw = h * w;
        if c.num_queries > hw {
            return Err(Error::Config(format!("{} queries exceed {hw} positions", c.num_queries)));
        }

        let centers = grid_centers(h, w);
        let mut flat = Vec::with_capacity(batch * hw * 2);
        for _ in 0..batch {
            flat.extend(centers.iter().flat_map(|p| [p.x, p.y]));
        }
        let refs = s.tape.constant(Tensor::new([batch * hw, 2], flat)?);
        let pos = s.tape.sine_encode(refs, c.d_model / 2)?;
        for l in 0..c.n_encoder_layers {
            let name = format!("enc{l}");
            let q = s.tape.add(src, pos)?;
            let v = s.linear(&format!("{name}.attn.value"), src)?;
            let a = deformable_attention(
                s,
                &format!("{name}.attn"),
                q,
                refs,
                v,
                map,
                c.n_heads,
                c.n_deform_points,
            )?;
            let sum = s.tape.add(src, a)?;
            src = s.layer_norm(&format!("{name}.attn_norm"), sum)?;
            src = ffn(s, &name, src)?;
        }

        let o = s.linear("proposal.proj", src)?;
        let o = s.layer_norm("proposal.norm", o)?;
        let objectness = s.linear("proposal.cls", o)?;
        let hid = s.linear("proposal.wh1", o)?;
        let hid = s.tape.relu(hid);
        let delta = s.linear("proposal.wh2", hid)?;
        let base = inverse_sigmoid_scalar(c.anchor_size, INVERSE_SIGMOID_EPS);
        let base = s.tape.constant(Tensor::full([batch * hw, 2], base));
        let logit = s.tape.add(delta, base)?;
        let wh = s.tape.sigmoid(logit);

        let obj_d = s.tape.detach(objectness);
        let wh_d = s.tape.detach(wh);
        let obj = s.tape.value(obj_d).data();
        let whv = s.tape.value(wh_d).data();
        let proposals = (0..batch)
            .map(|b| {
                let mut order: Vec<usize> = (0..hw).collect();
                order.sort_by(|&i, &j| obj[b * hw + j].total_cmp(&obj[b * hw + i]));
                order[..c.num_queries]
                    .iter()
                    .map(|&i| {
                        let r = b * hw + i;
                        AnchorBoxProposal {
                            cx: centers[i].x,
                            cy: centers[i].y,
                            w: whv[r * 2],
                            h: whv[r * 2 + 1],
                            score: sigmoid_scalar(obj[r]),
                        }
                        .clipped()
                    })
                    .collect()
            })
            .collect();
        Ok(EncoderOutput { memory: src, map, objectness, wh, proposals })
    }

    pub fn decoder_forward(&self, s: &mut Session<'_>, enc: &EncoderOutput) -> Result<Vec<LayerOutput>> {
        let c = &self.config;
        let (k, n, d) = (c.num_queries, c.num_points, c.d_model);
        let layout = QueryLayout { batch: enc.proposals.len(), instances: k, points: n };
        let boxes: Vec<&AnchorBoxProposal> = enc.proposals.iter().flatten().collect();
        if boxes.len() != layout.groups() {
            return Err(Error::Shape {
                op: "decoder_forward",
                detail: format!("{} proposals for {} instances", boxes.len(), layout.groups()),
            });
        }

        let content = s.param("query.content")?;
        let slots: Vec<usize> = (0..layout.rows()).map(|r| r % n).collect();
        let mut tgt = s.tape.gather_rows(content, &slots)?;

        let centers: Vec<f64> = boxes
            .iter()
            .flat_map(|b| std::iter::repeat([b.cx, b.cy]).take(n).flatten())
            .collect();
        let centers = s.tape.constant(Tensor::new([layout.rows(), 2], centers)?);
        let (mut points, box_pos) = match c.query_mode {
            QueryMode::ExplicitPoint => {
                let mut flat = Vec::with_capacity(layout.rows() * 2);
                for b in &boxes {
                    flat.extend(prior_points_sampling(b, n)?.iter().flat_map(|p| [p.x, p.y]));
                }
                (s.tape.constant(Tensor::new([layout.rows(), 2], flat)?), None)
            }
            QueryMode::BoxBaseline => {
                let flat = boxes.iter().flat_map(|b| [b.cx, b.cy, b.w, b.h]).collect();
                let bx = s.tape.constant(Tensor::new([layout.groups(), 4], flat)?);
                (centers, Some(baseline_box_query_encode(s, bx, d, n)?))
            }
        };

        let mut out = Vec::with_capacity(c.n_decoder_layers);
        for l in 0..c.n_decoder_layers {
            let name = format!("dec{l}");
            let pos = match box_pos {
                Some(p) => p,
                None => positional_query_encode(s, points, d)?,
            };
            let x = efsa(s, c, &name, tgt, pos, layout)?;
            let q = s.tape.add(x, pos)?;
            let v = s.linear(&format!("{name}.cross.value"), enc.memory)?;
            let a = deformable_attention(
                s,
                &format!("{name}.cross"),
                q,
                points,
                v,
                enc.map,
                c.n_heads,
                c.n_deform_points,
            )?;
            let sum = s.tape.add(x, a)?;
            let t = s.layer_norm(&format!("{name}.cross_norm"), sum)?;
            tgt = ffn(s, &name, t)?;

            let pooled = s.tape.group_mean(tgt, n)?;
            let logits = s.linear(&format!("{name}.cls"), pooled)?;
            let mut h = tgt;
            for i in 0..2 {
                h = s.linear(&format!("{name}.pts{i}"), h)?;
                h = s.tape.relu(h);
            }
            let offsets = s.linear(&format!("{name}.pts2"), h)?;
            let moved = point_update(&mut s.tape, points, offsets)?;
            let flat = s.tape.reshape(moved, vec![layout.groups(), n * 2])?;
            out.push(LayerOutput { logits, points: flat });
            if c.query_mode == QueryMode::ExplicitPoint {
                points = s.tape.detach(moved);
            }
        }
        Ok(out)
    }

    pub fn forward(&self, s: &mut Session<'_>, images: &Tensor) -> Result<DetectionOutput> {
        let encoder = self.encoder_forward(s, images)?;
        let layers = self.decoder_forward(s, &encoder)?;
        Ok(DetectionOutput { encoder, layers })
    }

    /// Final-layer detections per image in normalized coordinates, scored by
    /// class probability, with batch-norm running statistics.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<Vec<ScoredPolygon>>> {
        let mut s = Session::new(&self.params, Mode::Eval);
        let out = self.forward(&mut s, images)?;
        self.detections(&s.tape, &out)
    }

    /// Reads the final-layer detections out of a finished forward pass.
    pub fn detections(&self, tape: &Tape, out: &DetectionOutput) -> Result<Vec<Vec<ScoredPolygon>>> {
        let last = out.last();
        let logits = tape.value(last.logits).data();
        let pts = tape.value(last.points).data();
        let (k, n) = (self.config.num_queries, self.config.num_points);
        (0..out.encoder.proposals.len())
            .map(|b| {
                (0..k)
                    .map(|i| {
                        let r = b * k + i;
                        let row = &pts[r * n * 2..(r + 1) * n * 2];
                        let polygon = Polygon::new(row.chunks(2).map(|p| Point::new(p[0], p[1])).collect())?;
                        Ok(ScoredPolygon { polygon, score: sigmoid_scalar(logits[r]) })
                    })
                    .collect()
            })
            .collect()
    }

    pub fn uses_conv_branch(&self) -> bool {
        self.config.efsa_mode == EfsaMode::Efsa
    }
}

fn init_class_head(p: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) {
    p.init_linear(name, d, 1, rng);
    let bias = -((1.0 - CLASS_PRIOR) / CLASS_PRIOR).ln();
    p.insert(format!("{name}.bias"), Tensor::full([1], bias));
}

fn init_zero_linear(p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) {
    p.insert(format!("{name}.weight"), Tensor::zeros([fan_in, fan_out]));
    p.insert(format!("{name}.bias"), Tensor::zeros([fan_out]));
}
