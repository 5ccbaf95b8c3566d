//! Multi-head scaled dot-product attention and the residual sublayer glue.

use crate::autodiff::{Axis, Graph, Scalar, Var};
use crate::error::{Error, Result};
use crate::model::LayerOrder;

/// Layer-norm epsilon used everywhere in the model.
pub const LN_EPS: f64 = 1e-5;

/// Additive pre-softmax penalty for disallowed attention edges. Large enough
/// that the stabilized softmax underflows the edge weight to exactly zero
/// whenever any edge in the row is allowed.
const MASK_FILL: f64 = -1e9;

/// Attention edge restrictions.
#[derive(Default)]
pub(crate) struct AttnMask<'a> {
    /// Keys with mask 0 are unreachable from every query.
    pub key_mask: Option<&'a [u8]>,
    /// Forbid edges to keys at positions greater than the query position.
    pub causal: bool,
}

impl AttnMask<'_> {
    /// Dense keep/drop table, `[lq * lk]`, or `None` when unrestricted.
    fn table(&self, lq: usize, lk: usize) -> Option<Vec<u8>> {
        if self.key_mask.is_none() && !self.causal {
            return None;
        }
        let mut keep = vec![1u8; lq * lk];
        for i in 0..lq {
            for j in 0..lk {
                let key_ok = self.key_mask.map_or(true, |m| m[j] != 0);
                let causal_ok = !self.causal || j <= i;
                keep[i * lk + j] = (key_ok && causal_ok) as u8;
            }
        }
        Some(keep)
    }
}

/// Multi-head attention. Projections carry no bias; when `wo` is `None` the
/// concatenated head outputs are returned unprojected (used by the fusion
/// block, whose output stays in the common width).
#[allow(clippy::too_many_arguments)]
pub(crate) fn multi_head<S: Scalar>(
    g: &mut Graph<S>,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Option<Var>,
    heads: usize,
    mask: AttnMask<'_>,
) -> Result<Var> {
    let q = g.matmul(q_in, wq)?;
    let k = g.matmul(k_in, wk)?;
    let v = g.matmul(v_in, wv)?;
    let dm = g.shape(q)[1];
    if dm % heads != 0 {
        return Err(Error::shape(
            "attention",
            format!("width {dm} not divisible by {heads} heads"),
        ));
    }
    let dh = dm / heads;
    let (lq, lk) = (g.shape(q)[0], g.shape(k)[0]);
    if let Some(m) = mask.key_mask {
        if m.len() != lk {
            return Err(Error::shape(
                "attention",
                format!("key mask len {} vs {lk} keys", m.len()),
            ));
        }
    }

    let widths = vec![dh; heads];
    let q_heads = g.split(q, 1, &widths)?;
    let k_heads = g.split(k, 1, &widths)?;
    let v_heads = g.split(v, 1, &widths)?;

    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let fill = S::from_f64(MASK_FILL);
    let keep = mask.table(lq, lk);

    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let kt = g.transpose(k_heads[h])?;
        let scores = g.matmul(q_heads[h], kt)?;
        let scores = g.scale(scores, scale)?;
        let scores = match &keep {
            Some(table) => g.masked_fill(scores, table, fill)?,
            None => scores,
        };
        let weights = g.softmax(scores, Axis::Cols)?;
        outs.push(g.matmul(weights, v_heads[h])?);
    }
    let cat = g.concat(&outs, 1)?;
    match wo {
        Some(wo) => g.matmul(cat, wo),
        None => Ok(cat),
    }
}

/// Residual + layer norm around a sublayer, in the configured order.
pub(crate) fn residual_block<S: Scalar>(
    g: &mut Graph<S>,
    order: LayerOrder,
    x: Var,
    gamma: Var,
    beta: Var,
    sublayer: impl FnOnce(&mut Graph<S>, Var) -> Result<Var>,
) -> Result<Var> {
    match order {
        LayerOrder::Postnorm => {
            let s = sublayer(g, x)?;
            let r = g.add(x, s)?;
            g.layernorm(r, gamma, beta, LN_EPS)
        }
        LayerOrder::Prenorm => {
            let n = g.layernorm(x, gamma, beta, LN_EPS)?;
            let s = sublayer(g, n)?;
            g.add(x, s)
        }
    }
}

/// Position-wise feed-forward: `act(x W1 + b1) W2 + b2`.
pub(crate) fn feed_forward<S: Scalar>(
    g: &mut Graph<S>,
    x: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    act: crate::model::Activation,
) -> Result<Var> {
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b1)?;
    let h = act.apply(g, h)?;
    let h = g.matmul(h, w2)?;
    g.add(h, b2)
}
