//! Elementwise, reduction, indexing and matrix primitives.

use super::kernels::gemm;
use super::tape::{Tape, Var};
use super::value::Tensor;
use crate::error::{shape_err, Result};

/// Sentinel index for [`Tape::gather`]: the output element is zero.
pub const GATHER_ZERO: usize = usize::MAX;

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(shape_err(
            op,
            format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    Ok(())
}

fn map_unary(
    tape: &mut Tape,
    x: Var,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var {
    let xv = tape.value(x);
    let out = Tensor::new(
        xv.shape().to_vec(),
        xv.data().iter().map(|&v| f(v)).collect(),
    )
    .expect("same length");
    tape.push(out, vec![x], move |a| {
        let g = a
            .grad
            .iter()
            .zip(a.parents[0].data())
            .zip(a.output.data())
            .map(|((g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(g)]
    })
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, vec![a, b], |a| {
            vec![Some(a.grad.to_vec()), Some(a.grad.to_vec())]
        }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, vec![a, b], |a| {
            vec![
                Some(a.grad.to_vec()),
                Some(a.grad.iter().map(|g| -g).collect()),
            ]
        }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(out, vec![a, b], |a| {
            let (x, y) = (a.parents[0].data(), a.parents[1].data());
            vec![
                a.needs[0].then(|| a.grad.iter().zip(y).map(|(g, y)| g * y).collect()),
                a.needs[1].then(|| a.grad.iter().zip(x).map(|(g, x)| g * x).collect()),
            ]
        }))
    }

    /// `x[.., D] + bias[D]`, broadcasting the bias over every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(bias).len() != d {
            return Err(shape_err(
                "add_row",
                format!("{:?} + {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let data = self
            .value(x)
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(&b).map(|(v, b)| v + b))
            .collect();
        let out = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(out, vec![x, bias], move |a| {
            let mut gb = vec![0.0; d];
            if a.needs[1] {
                for row in a.grad.chunks(d) {
                    gb.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                }
            }
            vec![Some(a.grad.to_vec()), a.needs[1].then_some(gb)]
        }))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        map_unary(self, x, |v| v * s, move |_, _| s)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        map_unary(
            self,
            x,
            |v| v.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        map_unary(self, x, sigmoid_scalar, |_, y| y * (1.0 - y))
    }

    /// Logit of `x` after clamping it to `[eps, 1 - eps]`. The clamp has zero
    /// derivative outside the open interval.
    pub fn inverse_sigmoid(&mut self, x: Var, eps: f64) -> Var {
        map_unary(
            self,
            x,
            move |v| inverse_sigmoid_scalar(v, eps),
            move |x, _| {
                if x > eps && x < 1.0 - eps {
                    1.0 / (x * (1.0 - x))
                } else {
                    0.0
                }
            },
        )
    }

    /// `[M, K] · [K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            0.0,
            &mut c,
        );
        let out = Tensor::new(vec![m, n], c)?;
        Ok(self.push(out, vec![a, b], move |a| {
            let (x, w) = (a.parents[0].data(), a.parents[1].data());
            let ga = a.needs[0].then(|| {
                let mut g = vec![0.0; m * k];
                gemm(m, n, k, a.grad, false, w, true, 0.0, &mut g);
                g
            });
            let gb = a.needs[1].then(|| {
                let mut g = vec![0.0; k * n];
                gemm(k, m, n, x, true, a.grad, false, 0.0, &mut g);
                g
            });
            vec![ga, gb]
        }))
    }

    /// `x · weight + bias` with `x: [.., in]`, `weight: [in, out]`, `bias: [out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rows = self.value(x).rows();
        let cols = self.value(x).cols();
        let flat = self.reshape(x, vec![rows, cols])?;
        let mut y = self.matmul(flat, weight)?;
        if let Some(b) = bias {
            y = self.add_row(y, b)?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("non-scalar") = self.value(y).cols();
        self.reshape(y, out_shape)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if self.shape(x) == shape.as_slice() {
            return Ok(x);
        }
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, vec![x], |a| vec![Some(a.grad.to_vec())]))
    }

    /// `out[i] = x[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    /// The backward pass scatter-adds.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let n = self.value(x).len();
        if shape.iter().product::<usize>() != index.len() {
            return Err(shape_err("gather", "index count differs from output shape"));
        }
        if let Some(bad) = index.iter().find(|&&i| i != GATHER_ZERO && i >= n) {
            return Err(shape_err("gather", format!("index {bad} out of {n}")));
        }
        let xv = self.value(x).data();
        let data = index
            .iter()
            .map(|&i| if i == GATHER_ZERO { 0.0 } else { xv[i] })
            .collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, vec![x], move |a| {
            let mut g = vec![0.0; n];
            for (&i, gv) in index.iter().zip(a.grad) {
                if i != GATHER_ZERO {
                    g[i] += gv;
                }
            }
            vec![Some(g)]
        }))
    }

    /// Selects whole rows of a `[.., D]` tensor; output is `[rows.len(), D]`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let d = self.value(x).cols();
        let index = rows
            .iter()
            .flat_map(|&r| (r * d..(r + 1) * d).collect::<Vec<_>>())
            .collect();
        self.gather(x, index, vec![rows.len(), d])
    }

    /// Column slice `[.., start..start+len]` flattened to `[rows, len]`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, d) = (self.value(x).rows(), self.value(x).cols());
        if start + len > d {
            return Err(shape_err("slice_cols", format!("{start}+{len} > {d}")));
        }
        let index = (0..rows)
            .flat_map(|r| (r * d + start..r * d + start + len).collect::<Vec<_>>())
            .collect();
        self.gather(x, index, vec![rows, len])
    }

    /// Concatenates `[.., D]` tensors along rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let d = self.value(parts[0]).cols();
        if parts.iter().any(|&p| self.value(p).cols() != d) {
            return Err(shape_err("concat_rows", "column counts differ"));
        }
        let lens: Vec<usize> = parts.iter().map(|&p| self.value(p).len()).collect();
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|&p| self.value(p).data().to_vec())
            .collect();
        let out = Tensor::new(vec![data.len() / d.max(1), d], data)?;
        Ok(self.push(out, parts.to_vec(), move |a| {
            let mut off = 0;
            lens.iter()
                .map(|&l| {
                    let g = a.grad[off..off + l].to_vec();
                    off += l;
                    Some(g)
                })
                .collect()
        }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), vec![x], move |a| {
            vec![Some(vec![a.grad[0]; n])]
        })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean over consecutive groups of `group` rows: `[G*group, D] -> [G, D]`.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Result<Var> {
        let (rows, d) = (self.value(x).rows(), self.value(x).cols());
        if group == 0 || rows % group != 0 {
            return Err(shape_err("group_mean", format!("{rows} rows, group {group}")));
        }
        let g = rows / group;
        let inv = 1.0 / group as f64;
        let xv = self.value(x).data();
        let mut data = vec![0.0; g * d];
        for r in 0..rows {
            let dst = &mut data[(r / group) * d..(r / group + 1) * d];
            dst.iter_mut()
                .zip(&xv[r * d..(r + 1) * d])
                .for_each(|(o, v)| *o += v * inv);
        }
        let out = Tensor::new(vec![g, d], data)?;
        Ok(self.push(out, vec![x], move |a| {
            let mut gx = vec![0.0; rows * d];
            for r in 0..rows {
                let src = &a.grad[(r / group) * d..(r / group + 1) * d];
                gx[r * d..(r + 1) * d]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(o, g)| *o = g * inv);
            }
            vec![Some(gx)]
        }))
    }
}

pub fn inverse_sigmoid_scalar(x: f64, eps: f64) -> f64 {
    let x = x.clamp(eps, 1.0 - eps);
    (x / (1.0 - x)).ln()
}
