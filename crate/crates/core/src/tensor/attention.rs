use rand::Rng;

use super::params::{ParamStore, Session};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Projection weights of one multi-head attention block, bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct MhaWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

impl MhaWeights {
    pub fn bind(session: &mut Session<'_>, name: &str) -> Result<Self> {
        let mut p = |s: &str| session.param(&format!("{name}.{s}"));
        Ok(Self {
            wq: p("q.weight")?,
            bq: p("q.bias")?,
            wk: p("k.weight")?,
            bk: p("k.bias")?,
            wv: p("v.weight")?,
            bv: p("v.bias")?,
            wo: p("o.weight")?,
            bo: p("o.bias")?,
        })
    }

    pub fn init(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) {
        for s in ["q", "k", "v", "o"] {
            store.init_linear(&format!("{name}.{s}"), dim, dim, rng);
        }
    }
}

/// Multi-head scaled dot-product attention with input and output
/// projections. Rows of `queries` / `keys` / `values` form `groups`
/// contiguous, independent attention problems.
pub fn multi_head_attention(
    tape: &mut Tape,
    w: &MhaWeights,
    queries: Var,
    keys: Var,
    values: Var,
    groups: usize,
    heads: usize,
) -> Result<Var> {
    let d = tape.value(queries).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "embedding dim {d} not divisible by {heads} heads"
        )));
    }
    let q = tape.linear(queries, w.wq, Some(w.bq))?;
    let k = tape.linear(keys, w.wk, Some(w.bk))?;
    let v = tape.linear(values, w.wv, Some(w.bv))?;
    let o = tape.attention(q, k, v, groups, heads)?;
    tape.linear(o, w.wo, Some(w.bo))
}
