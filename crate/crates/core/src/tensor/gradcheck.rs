//! Central finite-difference verification of backward passes.
//!
//! Each case builds a tensor-valued function of its inputs on a fresh tape.
//! The check contracts the output with a fixed random projection, so one
//! scalar loss exercises every output element, then compares the analytic
//! input gradients against `(f(x+h) - f(x-h)) / 2h` element by element.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{multi_head_attention, MhaWeights};
use super::loss::Focal;
use super::ops::GATHER_ZERO;
use super::sample::MapShape;
use super::tape::{Tape, Var};
use super::value::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms; below it
/// the finite-difference estimate itself is dominated by truncation noise.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

type InputFn = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;
type BuildFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct GradCase {
    pub name: String,
    make_inputs: InputFn,
    build: BuildFn,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        make_inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + 'static,
        build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            make_inputs: Box::new(make_inputs),
            build: Box::new(build),
        }
    }

    /// The same case with a deliberately wrong backward pass: the output
    /// is routed through an identity whose gradient is halved.
    pub fn corrupted(self) -> Self {
        let build = self.build;
        Self {
            name: self.name,
            make_inputs: self.make_inputs,
            build: Box::new(move |t, v| {
                let out = build(t, v)?;
                let value = t.value(out).clone();
                Ok(t.push(value, vec![out], |a| vec![Some(a.grad.iter().map(|g| 0.5 * g).collect())]))
            }),
        }
    }

    fn eval(&self, inputs: &[Tensor], proj: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = (self.build)(&mut tape, &vars)?;
        Ok(tape
            .value(out)
            .data()
            .iter()
            .zip(proj)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Maximum relative error over every input element for one seed.
    pub fn check(&self, seed: u64, step: f64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = (self.make_inputs)(&mut rng);

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = (self.build)(&mut tape, &vars)?;
        let proj: Vec<f64> = (0..tape.value(out).len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let seed_grad = Tensor::new(tape.shape(out).to_vec(), proj.clone())?;
        let grads = tape.backward_with(out, seed_grad)?;

        let mut worst = 0.0f64;
        for (i, v) in vars.iter().enumerate() {
            let analytic = grads.get_or_zeros(*v, &inputs[i]);
            for j in 0..inputs[i].len() {
                let mut plus = inputs.clone();
                plus[i].data_mut()[j] += step;
                let mut minus = inputs.clone();
                minus[i].data_mut()[j] -= step;
                let numeric = (self.eval(&plus, &proj)? - self.eval(&minus, &proj)?) / (2.0 * step);
                worst = worst.max(rel_err(analytic.data()[j], numeric));
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub max_rel_err: f64,
    pub passed: bool,
    /// Set when the case itself failed to run.
    pub error: Option<String>,
}

pub fn run_cases(cases: &[GradCase], seeds: &[u64], step: f64, tolerance: f64) -> Vec<CaseReport> {
    cases
        .iter()
        .map(|case| {
            let mut worst = 0.0f64;
            let mut error = None;
            for &s in seeds {
                match case.check(s, step) {
                    Ok(e) => worst = worst.max(e),
                    Err(e) => {
                        error = Some(e.to_string());
                        break;
                    }
                }
            }
            CaseReport {
                name: case.name.clone(),
                max_rel_err: worst,
                passed: error.is_none() && worst < tolerance,
                error,
            }
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
        .expect("length matches shape")
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Every differentiable primitive with a randomized small-shape fixture.
pub fn registry() -> Vec<GradCase> {
    let u = |shape: &'static [usize]| move |r: &mut ChaCha8Rng| uniform(r, shape, -1.0, 1.0);
    vec![
        GradCase::new(
            "add",
            move |r| vec![u(&[3, 4])(r), u(&[3, 4])(r)],
            |t, v| t.add(v[0], v[1]),
        ),
        GradCase::new(
            "sub",
            move |r| vec![u(&[3, 4])(r), u(&[3, 4])(r)],
            |t, v| t.sub(v[0], v[1]),
        ),
        GradCase::new(
            "mul",
            move |r| vec![u(&[3, 4])(r), u(&[3, 4])(r)],
            |t, v| t.mul(v[0], v[1]),
        ),
        GradCase::new(
            "add_row",
            move |r| vec![u(&[3, 4])(r), u(&[4])(r)],
            |t, v| t.add_row(v[0], v[1]),
        ),
        GradCase::new("scale", move |r| vec![u(&[3, 4])(r)], |t, v| Ok(t.scale(v[0], -1.7))),
        GradCase::new(
            "relu",
            |r| vec![away_from_zero(r, &[3, 4])],
            |t, v| Ok(t.relu(v[0])),
        ),
        GradCase::new(
            "sigmoid",
            |r| vec![uniform(r, &[3, 4], -3.0, 3.0)],
            |t, v| Ok(t.sigmoid(v[0])),
        ),
        GradCase::new(
            "inverse_sigmoid",
            |r| vec![uniform(r, &[3, 4], 0.05, 0.95)],
            |t, v| Ok(t.inverse_sigmoid(v[0], 1e-6)),
        ),
        GradCase::new(
            "matmul",
            move |r| vec![u(&[3, 4])(r), u(&[4, 5])(r)],
            |t, v| t.matmul(v[0], v[1]),
        ),
        GradCase::new(
            "linear",
            move |r| vec![u(&[3, 4])(r), u(&[4, 5])(r), u(&[5])(r)],
            |t, v| t.linear(v[0], v[1], Some(v[2])),
        ),
        GradCase::new(
            "softmax",
            |r| vec![uniform(r, &[3, 5], -2.0, 2.0)],
            |t, v| Ok(t.softmax(v[0])),
        ),
        GradCase::new(
            "layer_norm",
            move |r| vec![u(&[3, 6])(r), uniform(r, &[6], 0.5, 1.5), u(&[6])(r)],
            |t, v| t.layer_norm(v[0], v[1], v[2]),
        ),
        GradCase::new(
            "batch_norm_train",
            move |r| vec![u(&[6, 3])(r), uniform(r, &[3], 0.5, 1.5), u(&[3])(r)],
            |t, v| Ok(t.batch_norm_1d(v[0], v[1], v[2], None)?.0),
        ),
        GradCase::new(
            "batch_norm_eval",
            move |r| vec![u(&[6, 3])(r), uniform(r, &[3], 0.5, 1.5), u(&[3])(r)],
            |t, v| {
                let (m, s) = ([0.1, -0.2, 0.3], [0.5, 1.0, 2.0]);
                Ok(t.batch_norm_1d(v[0], v[1], v[2], Some((&m, &s)))?.0)
            },
        ),
        GradCase::new(
            "gather",
            move |r| vec![u(&[3, 4])(r)],
            |t, v| {
                let idx = vec![0, 5, 5, GATHER_ZERO, 11, 2, 7, 0];
                t.gather(v[0], idx, vec![2, 4])
            },
        ),
        GradCase::new(
            "group_mean",
            move |r| vec![u(&[6, 3])(r)],
            |t, v| t.group_mean(v[0], 2),
        ),
        GradCase::new(
            "concat_rows",
            move |r| vec![u(&[2, 3])(r), u(&[1, 3])(r)],
            |t, v| t.concat_rows(&[v[0], v[1]]),
        ),
        GradCase::new(
            "l1_loss",
            move |r| vec![u(&[3, 4])(r), u(&[3, 4])(r)],
            |t, v| t.l1_loss(v[0], v[1]),
        ),
        GradCase::new(
            "focal_loss",
            |r| vec![uniform(r, &[6], -3.0, 3.0)],
            |t, v| t.focal_loss(v[0], &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0], Focal::default()),
        ),
        GradCase::new(
            "circular_conv1d",
            move |r| vec![u(&[10, 3])(r), u(&[4, 3, 3])(r)],
            |t, v| t.circular_conv1d(v[0], v[1], 5),
        ),
        GradCase::new(
            "conv2d",
            move |r| vec![u(&[50, 2])(r), u(&[18, 3])(r), u(&[3])(r)],
            |t, v| Ok(t.conv2d(v[0], v[1], Some(v[2]), 2, 5, 5, 3, 2, 1)?.0),
        ),
        GradCase::new(
            "sine_encode",
            |r| vec![uniform(r, &[3, 2], 0.0, 1.0)],
            |t, v| t.sine_encode(v[0], 8),
        ),
        GradCase::new(
            "attention",
            move |r| vec![u(&[6, 8])(r), u(&[8, 8])(r), u(&[8, 8])(r)],
            |t, v| t.attention(v[0], v[1], v[2], 2, 2),
        ),
        GradCase::new(
            "multi_head_attention",
            move |r| {
                let mut v = vec![u(&[6, 8])(r)];
                for _ in 0..4 {
                    v.push(uniform(r, &[8, 8], -0.5, 0.5));
                    v.push(u(&[8])(r));
                }
                v
            },
            |t, v| {
                let w = MhaWeights {
                    wq: v[1],
                    bq: v[2],
                    wk: v[3],
                    bk: v[4],
                    wv: v[5],
                    bv: v[6],
                    wo: v[7],
                    bo: v[8],
                };
                multi_head_attention(t, &w, v[0], v[0], v[0], 2, 2)
            },
        ),
        GradCase::new(
            "bilinear_sample",
            move |r| vec![u(&[4, 4, 3])(r), uniform(r, &[5, 2], 0.05, 0.95)],
            |t, v| t.bilinear_sample(v[0], v[1]),
        ),
        GradCase::new(
            "deformable_core",
            move |r| {
                vec![
                    u(&[32, 4])(r),
                    uniform(r, &[6, 8], 0.05, 0.95),
                    uniform(r, &[6, 4], 0.0, 1.0),
                ]
            },
            |t, v| {
                let map = MapShape {
                    batch: 2,
                    height: 4,
                    width: 4,
                };
                t.deformable_core(v[0], v[1], v[2], map, 2, 2)
            },
        ),
    ]
}
