//! Differentiable bilinear sampling and the deformable-attention core.

use super::kernels::Tap;
use super::tape::{Tape, Var};
use super::value::Tensor;
use crate::error::{shape_err, Error, Result};

/// Geometry of a batched single-scale feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapShape {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl MapShape {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }
}

impl Tape {
    /// Samples `map: [H, W, C]` at normalized `locations: [.., 2]` (x, y).
    pub fn bilinear_sample(&mut self, map: Var, locations: Var) -> Result<Var> {
        let ms = self.shape(map).to_vec();
        if ms.len() != 3 || self.value(locations).cols() != 2 {
            return Err(shape_err(
                "bilinear_sample",
                format!("map {ms:?}, locations {:?}", self.shape(locations)),
            ));
        }
        let (h, w, c) = (ms[0], ms[1], ms[2]);
        let m = self.value(locations).rows();
        let fv = self.value(map).data();
        let taps: Vec<Tap> = self
            .value(locations)
            .data()
            .chunks(2)
            .map(|p| Tap::new(p[0], p[1], h, w))
            .collect();
        let mut data = vec![0.0; m * c];
        for (i, t) in taps.iter().enumerate() {
            for k in 0..4 {
                let src = &fv[t.idx[k] * c..(t.idx[k] + 1) * c];
                data[i * c..(i + 1) * c]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(o, v)| *o += t.wts[k] * v);
            }
        }
        let mut shape = self.shape(locations).to_vec();
        *shape.last_mut().expect("non-scalar") = c;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, vec![map, locations], move |a| {
            let fv = a.parents[0].data();
            let mut gmap = vec![0.0; h * w * c];
            let mut gloc = vec![0.0; m * 2];
            for (i, t) in taps.iter().enumerate() {
                let g = &a.grad[i * c..(i + 1) * c];
                for k in 0..4 {
                    let base = t.idx[k] * c;
                    let mut dot = 0.0;
                    for ch in 0..c {
                        gmap[base + ch] += t.wts[k] * g[ch];
                        dot += g[ch] * fv[base + ch];
                    }
                    gloc[i * 2] += t.dwx[k] * dot;
                    gloc[i * 2 + 1] += t.dwy[k] * dot;
                }
            }
            vec![Some(gmap), Some(gloc)]
        }))
    }

    /// Deformable attention core.
    ///
    /// * `value: [B*H*W, D]`, split into `heads` slices of `D / heads` channels;
    /// * `locations: [Q, heads*points*2]` normalized sampling positions;
    /// * `weights: [Q, heads*points]` attention weights (already normalized).
    ///
    /// Queries are grouped by batch item in order, `Q / B` per item. Output is
    /// `[Q, D]`: for each head the weighted sum of bilinear samples.
    pub fn deformable_core(
        &mut self,
        value: Var,
        locations: Var,
        weights: Var,
        map: MapShape,
        heads: usize,
        points: usize,
    ) -> Result<Var> {
        let d = self.value(value).cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("dim {d} not divisible by {heads} heads")));
        }
        let q = self.value(locations).rows();
        if self.value(value).rows() != map.batch * map.positions()
            || self.value(locations).cols() != heads * points * 2
            || self.value(weights).cols() != heads * points
            || self.value(weights).rows() != q
            || map.batch == 0
            || q % map.batch != 0
        {
            return Err(shape_err(
                "deformable_core",
                format!(
                    "value {:?}, locations {:?}, weights {:?}, map {map:?}",
                    self.shape(value),
                    self.shape(locations),
                    self.shape(weights)
                ),
            ));
        }
        let dh = d / heads;
        let per_batch = q / map.batch;
        let hw = map.positions();
        let vv = self.value(value).data();
        let wv = self.value(weights).data();
        let taps: Vec<Tap> = self
            .value(locations)
            .data()
            .chunks(2)
            .map(|p| Tap::new(p[0], p[1], map.height, map.width))
            .collect();
        let mut out = vec![0.0; q * d];
        for qi in 0..q {
            let vbase = (qi / per_batch) * hw;
            for h in 0..heads {
                let orow = &mut out[qi * d + h * dh..qi * d + (h + 1) * dh];
                for s in 0..points {
                    let ts = (qi * heads + h) * points + s;
                    let (t, aw) = (&taps[ts], wv[ts]);
                    for k in 0..4 {
                        let src = (vbase + t.idx[k]) * d + h * dh;
                        let wk = aw * t.wts[k];
                        orow.iter_mut()
                            .zip(&vv[src..src + dh])
                            .for_each(|(o, v)| *o += wk * v);
                    }
                }
            }
        }
        let out = Tensor::new(vec![q, d], out)?;
        Ok(self.push(out, vec![value, locations, weights], move |a| {
            let (vv, wv) = (a.parents[0].data(), a.parents[2].data());
            let mut gval = vec![0.0; vv.len()];
            let mut gloc = vec![0.0; taps.len() * 2];
            let mut gw = vec![0.0; taps.len()];
            for qi in 0..q {
                let vbase = (qi / per_batch) * hw;
                for h in 0..heads {
                    let g = &a.grad[qi * d + h * dh..qi * d + (h + 1) * dh];
                    for s in 0..points {
                        let ts = (qi * heads + h) * points + s;
                        let (t, aw) = (&taps[ts], wv[ts]);
                        let mut sampled_dot = 0.0;
                        for k in 0..4 {
                            let src = (vbase + t.idx[k]) * d + h * dh;
                            let dot: f64 =
                                g.iter().zip(&vv[src..src + dh]).map(|(a, b)| a * b).sum();
                            sampled_dot += t.wts[k] * dot;
                            gloc[ts * 2] += aw * t.dwx[k] * dot;
                            gloc[ts * 2 + 1] += aw * t.dwy[k] * dot;
                            let wk = aw * t.wts[k];
                            gval[src..src + dh]
                                .iter_mut()
                                .zip(g)
                                .for_each(|(o, g)| *o += wk * g);
                        }
                        gw[ts] = sampled_dot;
                    }
                }
            }
            vec![Some(gval), Some(gloc), Some(gw)]
        }))
    }
}
