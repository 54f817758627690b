//! Finite-difference checks of the model's composite layers and of the
//! whole network on a frozen tiny configuration.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{deformable_attention, efsa, init_deformable, positional_query_encode, QueryLayout};
use super::net::Model;
use super::prior::point_update;
use crate::error::Result;
use crate::tensor::gradcheck::{rel_err, GradCase};
use crate::tensor::{MapShape, Mode, ParamStore, Session, Tape, Tensor, Var};

pub const FULL_MODEL_TOLERANCE: f64 = 1e-3;
pub const FULL_MODEL_SAMPLES: usize = 20;
/// Images per batch in the whole-model check.
const FULL_MODEL_BATCH: usize = 2;
const JITTER: f64 = 0.05;

fn with_session(
    store: &ParamStore,
    tape: &mut Tape,
    f: impl FnOnce(&mut Session<'_>) -> Result<Var>,
) -> Result<Var> {
    let mut s = Session::with_tape(store, Mode::Train, std::mem::take(tape));
    let out = f(&mut s);
    *tape = s.into_tape();
    out
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
        .expect("length matches shape")
}

/// Composite layers checked with respect to their tensor inputs, with the
/// layer weights frozen at a seeded initialization.
pub fn layer_cases() -> Vec<GradCase> {
    let cfg = ModelConfig { d_model: 8, n_heads: 2, num_points: 4, efsa_neighborhood: 2, ..ModelConfig::tiny() };
    let model = Rc::new(Model::new(cfg.clone(), 11).expect("valid config"));
    let mut deform = ParamStore::new();
    init_deformable(&mut deform, "da", 8, 2, 2, &mut ChaCha8Rng::seed_from_u64(5));
    // non-zero offset and weight heads so the sampling positions move
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for name in ["da.offsets.weight", "da.weights.weight"] {
        let shape = deform.get(name).expect("initialized").shape().to_vec();
        deform.insert(name, uniform(&mut rng, &shape, -0.3, 0.3));
    }
    let deform = Rc::new(deform);
    let map = MapShape { batch: 1, height: 4, width: 4 };

    let m1 = Rc::clone(&model);
    let m2 = Rc::clone(&model);
    let layout = QueryLayout { batch: 1, instances: 2, points: 4 };
    vec![
        GradCase::new(
            "positional_query_encode",
            |r| vec![uniform(r, &[5, 2], 0.05, 0.95)],
            move |t, v| with_session(&m1.params, t, |s| positional_query_encode(s, v[0], 8)),
        ),
        GradCase::new(
            "deformable_attention",
            |r| {
                vec![
                    uniform(r, &[3, 8], -1.0, 1.0),
                    uniform(r, &[3, 2], 0.2, 0.8),
                    uniform(r, &[16, 8], -1.0, 1.0),
                ]
            },
            move |t, v| {
                with_session(&deform, t, |s| deformable_attention(s, "da", v[0], v[1], v[2], map, 2, 2))
            },
        ),
        GradCase::new(
            "efsa",
            |r| vec![uniform(r, &[8, 8], -1.0, 1.0), uniform(r, &[8, 8], -1.0, 1.0)],
            move |t, v| with_session(&m2.params, t, |s| efsa(s, &m2.config, "dec0", v[0], v[1], layout)),
        ),
        GradCase::new(
            "point_update",
            |r| vec![uniform(r, &[4, 2], -2.0, 2.0)],
            |t, v| {
                let p = t.constant(Tensor::new([4, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])?);
                point_update(t, p, v[0])
            },
        ),
    ]
}

/// Contracts every model output with `proj`. Returns the scalar and, when
/// `grads` is set, each bound parameter's gradient. Detached values are
/// recorded into, or replayed from, `frozen`.
fn projected_output(
    model: &Model,
    images: &Tensor,
    proj: &[f64],
    frozen: &mut Vec<Tensor>,
    grads: bool,
) -> Result<(f64, Vec<(String, Tensor)>)> {
    let mut s = Session::new(&model.params, Mode::Train);
    if grads {
        s.tape.record_detached();
    } else {
        s.tape.replay_detached(frozen.clone());
    }
    let out = model.forward(&mut s, images)?;
    let mut vars = vec![out.encoder.objectness, out.encoder.wh];
    for l in &out.layers {
        vars.extend([l.logits, l.points]);
    }
    let mut total = 0.0;
    let mut offset = 0;
    let mut terms = Vec::with_capacity(vars.len());
    for &v in &vars {
        let w = s.tape.value(v).len();
        let p = &proj[offset..offset + w];
        total += s.tape.value(v).data().iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
        let c = s.tape.constant(Tensor::new(s.tape.shape(v).to_vec(), p.to_vec())?);
        let prod = s.tape.mul(v, c)?;
        terms.push(s.tape.sum(prod));
        offset += w;
    }
    if !grads {
        return Ok((total, Vec::new()));
    }
    *frozen = s.tape.take_detached();
    let loss = terms[1..].iter().try_fold(terms[0], |acc, &t| s.tape.add(acc, t))?;
    let g = s.tape.backward(loss)?;
    Ok((total, s.param_grads(&g).into_iter().collect()))
}

/// Length of the projection vector: every output element of one forward.
fn output_len(cfg: &ModelConfig, batch: usize) -> usize {
    let hw = cfg.feature_size().pow(2);
    let k = batch * cfg.num_queries;
    batch * hw * 3 + cfg.n_decoder_layers * k * (1 + 2 * cfg.num_points)
}

/// Maximum relative error over [`FULL_MODEL_SAMPLES`] randomly chosen
/// parameter entries of the tiny model, for one seed. Parameters are the
/// seeded initialization plus a small uniform jitter. Values the model
/// detaches (proposal scores and boxes, refined points) are held at their
/// unperturbed values, so both sides differentiate the same function.
pub fn full_model_gradcheck(seed: u64, step: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::tiny();
    let mut model = Model::new(cfg.clone(), seed)?;
    // zero-initialized heads put every deformable sample exactly on a cell
    // center, where bilinear interpolation has a kink; jitter to a generic point
    for (_, t) in model.params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-JITTER..JITTER));
    }
    let images = uniform(&mut rng, &[FULL_MODEL_BATCH, cfg.image_size * cfg.image_size], 0.0, 1.0);
    let proj: Vec<f64> = (0..output_len(&cfg, FULL_MODEL_BATCH))
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let mut frozen = Vec::new();
    let (_, grads) = projected_output(&model, &images, &proj, &mut frozen, true)?;

    let sizes: Vec<usize> = grads.iter().map(|(_, t)| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst = 0.0f64;
    for _ in 0..FULL_MODEL_SAMPLES {
        let mut flat = rng.gen_range(0..total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let (name, g) = &grads[which];
        let analytic = g.data()[flat];
        let original = model.params.get(name).expect("bound parameter").data()[flat];
        let mut eval_at = |v: f64| -> Result<f64> {
            model.params.get_mut(name).expect("bound parameter").data_mut()[flat] = v;
            Ok(projected_output(&model, &images, &proj, &mut frozen, false)?.0)
        };
        let numeric = (eval_at(original + step)? - eval_at(original - step)?) / (2.0 * step);
        eval_at(original)?;
        worst = worst.max(rel_err(analytic, numeric));
    }
    Ok(worst)
}
