//! Named parameter storage and per-forward binding onto a tape.

use std::collections::BTreeMap;

use rand::Rng;

use super::nn::{BatchStats, BATCH_NORM_MOMENTUM};
use super::tape::{Gradients, Tape, Var};
use super::value::Tensor;
use crate::error::{Error, Result};

/// Trainable parameters plus non-trainable buffers (running statistics),
/// both keyed by dotted names and iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Tensor) {
        self.buffers.insert(name.into(), value);
    }

    /// Drops every parameter and buffer whose name starts with `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) {
        self.params.retain(|k, _| !k.starts_with(prefix));
        self.buffers.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.buffers.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Xavier-uniform weight `[fan_in, fan_out]` and zero bias.
    pub fn init_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        self.insert(
            format!("{name}.weight"),
            xavier(vec![fan_in, fan_out], fan_in, fan_out, rng),
        );
        self.insert(format!("{name}.bias"), Tensor::zeros(vec![fan_out]));
    }

    pub fn init_norm(&mut self, name: &str, dim: usize) {
        self.insert(format!("{name}.gamma"), Tensor::full(vec![dim], 1.0));
        self.insert(format!("{name}.beta"), Tensor::zeros(vec![dim]));
    }

    /// Affine parameters plus running statistics (mean 0, var 1).
    pub fn init_batch_norm(&mut self, name: &str, dim: usize) {
        self.init_norm(name, dim);
        self.insert_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![dim]));
        self.insert_buffer(format!("{name}.running_var"), Tensor::full(vec![dim], 1.0));
    }

    /// Folds batch statistics into the named batch norm's running estimates.
    pub fn update_running_stats(&mut self, name: &str, stats: &BatchStats) -> Result<()> {
        for (suffix, new) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let key = format!("{name}.{suffix}");
            let buf = self
                .buffers
                .get_mut(&key)
                .ok_or_else(|| Error::Config(format!("unknown buffer {key}")))?;
            for (r, v) in buf.data_mut().iter_mut().zip(new) {
                *r = (1.0 - BATCH_NORM_MOMENTUM) * *r + BATCH_NORM_MOMENTUM * v;
            }
        }
        Ok(())
    }
}

pub fn xavier(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Whether normalization layers use batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a fresh tape plus the parameters bound onto it.
pub struct Session<'p> {
    pub tape: Tape,
    store: &'p ParamStore,
    bound: BTreeMap<String, Var>,
    mode: Mode,
    batch_stats: Vec<(String, BatchStats)>,
}

impl<'p> Session<'p> {
    pub fn new(store: &'p ParamStore, mode: Mode) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: BTreeMap::new(),
            mode,
            batch_stats: Vec::new(),
        }
    }

    /// Continues recording on an existing tape, keeping its variables valid.
    pub fn with_tape(store: &'p ParamStore, mode: Mode, tape: Tape) -> Self {
        Self { tape, ..Self::new(store, mode) }
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Binds (once) and returns the named parameter.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?
            .clone();
        let v = self.tape.param(value);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn linear(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        self.tape.linear(x, w, Some(b))
    }

    pub fn layer_norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let g = self.param(&format!("{name}.gamma"))?;
        let b = self.param(&format!("{name}.beta"))?;
        self.tape.layer_norm(x, g, b)
    }

    /// Batch norm honoring the session mode; training-mode statistics are
    /// collected for [`Session::take_batch_stats`].
    pub fn batch_norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let g = self.param(&format!("{name}.gamma"))?;
        let b = self.param(&format!("{name}.beta"))?;
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.tape.batch_norm_1d(x, g, b, None)?;
                if let Some(s) = stats {
                    self.batch_stats.push((name.to_string(), s));
                }
                Ok(y)
            }
            Mode::Eval => {
                let store = self.store;
                let missing = || Error::Config(format!("missing running stats for {name}"));
                let m = store
                    .buffer(&format!("{name}.running_mean"))
                    .ok_or_else(missing)?;
                let v = store
                    .buffer(&format!("{name}.running_var"))
                    .ok_or_else(missing)?;
                Ok(self.tape.batch_norm_1d(x, g, b, Some((m.data(), v.data())))?.0)
            }
        }
    }

    pub fn take_batch_stats(&mut self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.batch_stats)
    }

    /// Gradients of every bound parameter, zeros where nothing flowed.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .map(|(name, &v)| (name.clone(), grads.get_or_zeros(v, self.tape.value(v))))
            .collect()
    }
}
