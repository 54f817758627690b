//! Define-by-run gradient tape.
//!
//! Every primitive pushes one node holding its forward value, its parent
//! handles and a backward closure. `backward` replays the record in reverse
//! order, so the pass is deterministic for a fixed sequence of pushes.

use super::value::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Inputs handed to a backward closure.
pub struct BackwardArgs<'a> {
    pub parents: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub grad: &'a [f64],
    /// Whether each parent needs a gradient; closures may skip the rest.
    pub needs: Vec<bool>,
}

/// Backward closure: one optional gradient buffer per parent.
pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

/// What [`Tape::detach`] does with the values it cuts off.
#[derive(Default)]
enum DetachLog {
    #[default]
    Off,
    Record(Vec<Tensor>),
    Replay(std::collections::VecDeque<Tensor>),
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    detached: DetachLog,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like it if nothing flowed there.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies the value of `v` into a fresh constant leaf, cutting gradient flow.
    ///
    /// While replaying (see [`Tape::replay_detached`]) the leaf instead takes
    /// the next recorded value, so a perturbed re-run sees the same constants.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = match &mut self.detached {
            DetachLog::Off => self.value(v).clone(),
            DetachLog::Record(log) => {
                let value = self.nodes[v.0].value.clone();
                log.push(value.clone());
                value
            }
            DetachLog::Replay(queue) => match queue.pop_front() {
                Some(t) if t.shape() == self.value(v).shape() => t,
                _ => self.value(v).clone(),
            },
        };
        self.constant(value)
    }

    /// Starts logging every detached value.
    pub fn record_detached(&mut self) {
        self.detached = DetachLog::Record(Vec::new());
    }

    /// Values logged since [`Tape::record_detached`], in call order.
    pub fn take_detached(&mut self) -> Vec<Tensor> {
        match std::mem::take(&mut self.detached) {
            DetachLog::Record(log) => log,
            _ => Vec::new(),
        }
    }

    /// Makes subsequent detaches return `values` in order.
    pub fn replay_detached(&mut self, values: Vec<Tensor>) {
        self.detached = DetachLog::Replay(values.into());
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation. Public so callers can register custom
    /// primitives; the closure must return one entry per parent.
    pub fn custom(&mut self, value: Tensor, parents: Vec<Var>, backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents,
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push<F>(&mut self, value: Tensor, parents: Vec<Var>, backward: F) -> Var
    where
        F: Fn(&BackwardArgs<'_>) -> Vec<Option<Vec<f64>>> + 'static,
    {
        self.custom(value, parents, Box::new(backward))
    }

    /// Reverse pass seeded with ones at `loss` (normally a single element).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let seed = Tensor::full(self.value(loss).shape().to_vec(), 1.0);
        self.backward_with(loss, seed)
    }

    pub fn backward_with(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(root).shape() {
            return Err(shape_err("backward", "seed shape differs from root"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed.into_data());
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let args = BackwardArgs {
                parents: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                output: &node.value,
                grad: &g,
                needs: node
                    .parents
                    .iter()
                    .map(|p| self.nodes[p.0].requires_grad)
                    .collect(),
            };
            let contributions = backward(&args);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for (parent, contrib) in node.parents.iter().zip(contributions) {
                let Some(c) = contrib else { continue };
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(c),
                }
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad).map(|data| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), data)
                        .expect("gradient shape matches value")
                })
            })
            .collect::<Vec<_>>();
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }
}
