//! Normalization, attention, convolution and positional-encoding primitives.

use super::ops::GATHER_ZERO;
use super::tape::{Tape, Var};
use super::value::Tensor;
use crate::error::{shape_err, Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-9;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const SINE_TEMPERATURE: f64 = 10000.0;

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as folded into running statistics.
    pub var: Vec<f64>,
}

/// Shared backward for normalizations: `xhat` normalized values, `inv` the
/// reciprocal std per normalized group. `row_major` normalizes along each
/// row (layer norm), otherwise along each column (batch norm).
fn norm_backward(
    grad: &[f64],
    xhat: &[f64],
    inv: &[f64],
    gamma: &[f64],
    rows: usize,
    d: usize,
    row_major: bool,
) -> Vec<f64> {
    let mut gx = vec![0.0; rows * d];
    if row_major {
        for r in 0..rows {
            let s = r * d;
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for c in 0..d {
                let gh = grad[s + c] * gamma[c];
                sum_g += gh;
                sum_gx += gh * xhat[s + c];
            }
            let n = d as f64;
            for c in 0..d {
                let gh = grad[s + c] * gamma[c];
                gx[s + c] = inv[r] / n * (n * gh - sum_g - xhat[s + c] * sum_gx);
            }
        }
    } else {
        let n = rows as f64;
        let mut sum_g = vec![0.0; d];
        let mut sum_gx = vec![0.0; d];
        for r in 0..rows {
            for c in 0..d {
                let gh = grad[r * d + c] * gamma[c];
                sum_g[c] += gh;
                sum_gx[c] += gh * xhat[r * d + c];
            }
        }
        for r in 0..rows {
            for c in 0..d {
                let gh = grad[r * d + c] * gamma[c];
                gx[r * d + c] =
                    inv[c] / n * (n * gh - sum_g[c] - xhat[r * d + c] * sum_gx[c]);
            }
        }
    }
    gx
}

fn affine_grads(grad: &[f64], xhat: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gg = vec![0.0; d];
    let mut gb = vec![0.0; d];
    for (gr, xr) in grad.chunks(d).zip(xhat.chunks(d)) {
        for c in 0..d {
            gg[c] += gr[c] * xr[c];
            gb[c] += gr[c];
        }
    }
    (gg, gb)
}

impl Tape {
    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let d = self.value(x).cols();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(d) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let out = Tensor::new(self.shape(x).to_vec(), data).expect("same shape");
        self.push(out, vec![x], move |a| {
            let y = a.output.data();
            let mut g = vec![0.0; y.len()];
            for ((gr, yr), out) in a.grad.chunks(d).zip(y.chunks(d)).zip(g.chunks_mut(d)) {
                let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                for c in 0..d {
                    out[c] = yr[c] * (gr[c] - dot);
                }
            }
            vec![Some(g)]
        })
    }

    /// Layer norm over the last axis with learnable affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(shape_err("layer_norm", "affine length differs from last axis"));
        }
        let rows = self.value(x).rows();
        let xv = self.value(x).data();
        let mut xhat = vec![0.0; rows * d];
        let mut inv = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d as f64;
            inv[r] = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for c in 0..d {
                xhat[r * d + c] = (row[c] - mu) * inv[r];
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat
            .chunks(d)
            .flat_map(|xr| (0..d).map(move |c| xr[c] * g[c] + b[c]))
            .collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(out, vec![x, gamma, beta], move |a| {
            let gamma = a.parents[1].data();
            let gx = norm_backward(a.grad, &xhat, &inv, gamma, rows, d, true);
            let (gg, gb) = affine_grads(a.grad, &xhat, d);
            vec![Some(gx), Some(gg), Some(gb)]
        }))
    }

    /// Batch norm over rows of `x: [M, C]`, per channel.
    ///
    /// With `running = None` the batch statistics are used and returned so
    /// the caller can fold them into its running estimates. With running
    /// statistics supplied the op is a fixed per-channel affine map.
    pub fn batch_norm_1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let d = self.value(x).cols();
        let rows = self.value(x).rows();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(shape_err("batch_norm_1d", "affine length differs from channels"));
        }
        if let Some((m, v)) = running {
            if m.len() != d || v.len() != d {
                return Err(shape_err("batch_norm_1d", "running stats length"));
            }
        }
        let xv = self.value(x).data();
        let (mean, var_biased, stats) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec(), None),
            None => {
                if rows == 0 {
                    return Err(shape_err("batch_norm_1d", "empty batch"));
                }
                let mut mean = vec![0.0; d];
                for row in xv.chunks(d) {
                    mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; d];
                for row in xv.chunks(d) {
                    for c in 0..d {
                        var[c] += (row[c] - mean[c]).powi(2);
                    }
                }
                let unbiased = var
                    .iter()
                    .map(|v| v / (rows.max(2) - 1) as f64)
                    .collect();
                var.iter_mut().for_each(|v| *v /= rows as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
        };
        let train = stats.is_some();
        let inv: Vec<f64> = var_biased
            .iter()
            .map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt())
            .collect();
        let xhat: Vec<f64> = xv
            .chunks(d)
            .flat_map(|row| (0..d).map(|c| (row[c] - mean[c]) * inv[c]).collect::<Vec<_>>())
            .collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = xhat
            .chunks(d)
            .flat_map(|xr| (0..d).map(move |c| xr[c] * g[c] + b[c]))
            .collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        let v = self.push(out, vec![x, gamma, beta], move |a| {
            let gamma = a.parents[1].data();
            let gx = if train {
                norm_backward(a.grad, &xhat, &inv, gamma, rows, d, false)
            } else {
                a.grad
                    .chunks(d)
                    .flat_map(|gr| (0..d).map(|c| gr[c] * gamma[c] * inv[c]).collect::<Vec<_>>())
                    .collect()
            };
            let (gg, gb) = affine_grads(a.grad, &xhat, d);
            vec![Some(gx), Some(gg), Some(gb)]
        });
        Ok((v, stats))
    }

    /// Scaled dot-product attention core over contiguous row groups.
    ///
    /// `q: [G*lq, D]`, `k, v: [G*lk, D]`. Each group attends only within
    /// itself; `heads` splits `D` into equal slices.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, groups: usize, heads: usize) -> Result<Var> {
        let d = self.value(q).cols();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("dim {d} not divisible by {heads} heads")));
        }
        if self.value(k).cols() != d || self.value(v).cols() != d {
            return Err(shape_err("attention", "q/k/v widths differ"));
        }
        let (qr, kr) = (self.value(q).rows(), self.value(k).rows());
        if groups == 0 || qr % groups != 0 || kr % groups != 0 || self.value(v).rows() != kr {
            return Err(shape_err(
                "attention",
                format!("{qr} query rows, {kr} key rows, {groups} groups"),
            ));
        }
        let (lq, lk, dh) = (qr / groups, kr / groups, d / heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; groups * heads * lq * lk];
        let mut out = vec![0.0; qr * d];
        for g in 0..groups {
            for h in 0..heads {
                let off = h * dh;
                let pbase = (g * heads + h) * lq * lk;
                for i in 0..lq {
                    let qi = &qv[(g * lq + i) * d + off..][..dh];
                    let prow = &mut probs[pbase + i * lk..pbase + (i + 1) * lk];
                    let mut m = f64::NEG_INFINITY;
                    for j in 0..lk {
                        let kj = &kv[(g * lk + j) * d + off..][..dh];
                        let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        prow[j] = s;
                        m = m.max(s);
                    }
                    let mut z = 0.0;
                    for p in prow.iter_mut() {
                        *p = (*p - m).exp();
                        z += *p;
                    }
                    prow.iter_mut().for_each(|p| *p /= z);
                    let orow = &mut out[(g * lq + i) * d + off..][..dh];
                    for j in 0..lk {
                        let vj = &vv[(g * lk + j) * d + off..][..dh];
                        orow.iter_mut().zip(vj).for_each(|(o, v)| *o += prow[j] * v);
                    }
                }
            }
        }
        let out = Tensor::new(vec![qr, d], out)?;
        Ok(self.push(out, vec![q, k, v], move |a| {
            let (qv, kv, vv) = (a.parents[0].data(), a.parents[1].data(), a.parents[2].data());
            let mut gq = vec![0.0; qr * d];
            let mut gk = vec![0.0; kr * d];
            let mut gv = vec![0.0; kr * d];
            let mut dp = vec![0.0; lk];
            for g in 0..groups {
                for h in 0..heads {
                    let off = h * dh;
                    let pbase = (g * heads + h) * lq * lk;
                    for i in 0..lq {
                        let go = &a.grad[(g * lq + i) * d + off..][..dh];
                        let prow = &probs[pbase + i * lk..pbase + (i + 1) * lk];
                        let mut dot = 0.0;
                        for j in 0..lk {
                            let vrow = (g * lk + j) * d + off;
                            dp[j] = go.iter().zip(&vv[vrow..vrow + dh]).map(|(a, b)| a * b).sum();
                            dot += dp[j] * prow[j];
                            for c in 0..dh {
                                gv[vrow + c] += prow[j] * go[c];
                            }
                        }
                        let qrow = (g * lq + i) * d + off;
                        for j in 0..lk {
                            let ds = prow[j] * (dp[j] - dot) * scale;
                            let krow = (g * lk + j) * d + off;
                            for c in 0..dh {
                                gq[qrow + c] += ds * kv[krow + c];
                                gk[krow + c] += ds * qv[qrow + c];
                            }
                        }
                    }
                }
            }
            vec![Some(gq), Some(gk), Some(gv)]
        }))
    }

    /// Circular 1-D convolution over contiguous groups of `n` rows.
    ///
    /// `x: [G*n, C_in]`, `kernel: [C_out, C_in, ksize]` with odd `ksize <= n`.
    /// Output row `i` combines input rows `(i + o) mod n`, `o` in
    /// `-(ksize-1)/2 ..= (ksize-1)/2`.
    pub fn circular_conv1d(&mut self, x: Var, kernel: Var, n: usize) -> Result<Var> {
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 3 {
            return Err(shape_err("circular_conv1d", format!("kernel shape {ks:?}")));
        }
        let (c_out, c_in, ksize) = (ks[0], ks[1], ks[2]);
        if ksize % 2 == 0 {
            return Err(Error::Config(format!("circular kernel size {ksize} must be odd")));
        }
        if ksize > n {
            return Err(Error::Config(format!(
                "circular kernel size {ksize} exceeds sequence length {n}"
            )));
        }
        let rows = self.value(x).rows();
        if self.value(x).cols() != c_in || n == 0 || rows % n != 0 {
            return Err(shape_err(
                "circular_conv1d",
                format!("input {:?}, kernel {ks:?}, n {n}", self.shape(x)),
            ));
        }
        let half = (ksize / 2) as isize;
        // Unfold neighbours: columns ordered (offset, channel).
        let mut idx = Vec::with_capacity(rows * ksize * c_in);
        for r in 0..rows {
            let (g, i) = (r / n, r % n);
            for o in -half..=half {
                let src = g * n + (i as isize + o).rem_euclid(n as isize) as usize;
                idx.extend((0..c_in).map(|c| src * c_in + c));
            }
        }
        let cols = self.gather(x, idx, vec![rows, ksize * c_in])?;
        // Kernel [C_out, C_in, ksize] -> [(ksize, C_in), C_out].
        let mut kidx = Vec::with_capacity(ksize * c_in * c_out);
        for t in 0..ksize {
            for ci in 0..c_in {
                kidx.extend((0..c_out).map(|co| (co * c_in + ci) * ksize + t));
            }
        }
        let w = self.gather(kernel, kidx, vec![ksize * c_in, c_out])?;
        self.matmul(cols, w)
    }

    /// 2-D convolution over a batch of `[H, W, C]` maps stored as
    /// `[B*H*W, C_in]`; `weight: [kh*kw*C_in, C_out]`, zero padding.
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        batch: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<(Var, usize, usize)> {
        let c_in = self.value(x).cols();
        if self.value(x).rows() != batch * height * width {
            return Err(shape_err("conv2d", "input rows != B*H*W"));
        }
        if self.value(weight).rows() != kernel * kernel * c_in {
            return Err(shape_err("conv2d", format!("weight {:?}", self.shape(weight))));
        }
        if height + 2 * pad < kernel || width + 2 * pad < kernel || stride == 0 {
            return Err(shape_err("conv2d", "kernel larger than padded input"));
        }
        let ho = (height + 2 * pad - kernel) / stride + 1;
        let wo = (width + 2 * pad - kernel) / stride + 1;
        let mut idx = Vec::with_capacity(batch * ho * wo * kernel * kernel * c_in);
        for b in 0..batch {
            for oy in 0..ho {
                for ox in 0..wo {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= height as isize || ix >= width as isize {
                                idx.extend(std::iter::repeat(GATHER_ZERO).take(c_in));
                            } else {
                                let base = ((b * height + iy as usize) * width + ix as usize) * c_in;
                                idx.extend(base..base + c_in);
                            }
                        }
                    }
                }
            }
        }
        let cols = self.gather(x, idx, vec![batch * ho * wo, kernel * kernel * c_in])?;
        let mut y = self.matmul(cols, weight)?;
        if let Some(b) = bias {
            y = self.add_row(y, b)?;
        }
        Ok((y, ho, wo))
    }

    /// Sine encoding of each coordinate of `x: [.., c]` into `feats` channels
    /// (sin/cos interleaved, DETR convention); output `[.., c*feats]`.
    /// Coordinates are expected in `[0, 1]` and are scaled by 2π.
    pub fn sine_encode(&mut self, x: Var, feats: usize) -> Result<Var> {
        if feats == 0 || feats % 2 != 0 {
            return Err(Error::Config(format!("sine features {feats} must be even")));
        }
        let c = self.value(x).cols();
        let rows = self.value(x).rows();
        let freqs = sine_frequencies(feats);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(rows * c * feats);
        for v in xv {
            for (i, f) in freqs.iter().enumerate() {
                let arg = v * f;
                data.push(if i % 2 == 0 { arg.sin() } else { arg.cos() });
            }
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().expect("non-scalar") = c * feats;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, vec![x], move |a| {
            let xv = a.parents[0].data();
            let g = xv
                .iter()
                .enumerate()
                .map(|(e, v)| {
                    freqs
                        .iter()
                        .enumerate()
                        .map(|(i, f)| {
                            let d = if i % 2 == 0 { f * (v * f).cos() } else { -f * (v * f).sin() };
                            a.grad[e * feats + i] * d
                        })
                        .sum()
                })
                .collect();
            vec![Some(g)]
        }))
    }
}

/// Angular frequencies `2π / T^(2⌊i/2⌋/feats)` for each encoded channel.
pub fn sine_frequencies(feats: usize) -> Vec<f64> {
    (0..feats)
        .map(|i| {
            let dim_t = SINE_TEMPERATURE.powf((2 * (i / 2)) as f64 / feats as f64);
            2.0 * std::f64::consts::PI / dim_t
        })
        .collect()
}
