//! Decoder: causal self-attention, cross-attention into the fused states,
//! feed-forward, and the output projection to vocabulary logits.

use crate::autodiff::{Graph, Scalar, Var};
use crate::error::{Error, Result};
use crate::model::attention::{feed_forward, multi_head, residual_block, AttnMask};
use crate::model::{Bound, ModelConfig};

/// Run the decoder over a teacher-forced input sequence.
///
/// `decoder_in` is the begin-shifted target; `z_tv` the fused encoder output
/// whose keys are masked by `src_mask`. Returns the top-layer states
/// `[N, d]` and logits `[N, V]`.
pub fn decode<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &ModelConfig,
    decoder_in: &[usize],
    tgt_mask: &[u8],
    z_tv: Var,
    src_mask: &[u8],
) -> Result<(Var, Var)> {
    if decoder_in.is_empty() {
        return Err(Error::data("decode: empty target sequence"));
    }
    if decoder_in.len() > cfg.n_max {
        return Err(Error::data(format!(
            "target length {} exceeds n_max {}",
            decoder_in.len(),
            cfg.n_max
        )));
    }
    if decoder_in.len() != tgt_mask.len() {
        return Err(Error::shape(
            "decode",
            format!("{} ids vs {} mask entries", decoder_in.len(), tgt_mask.len()),
        ));
    }
    if let Some(&bad) = decoder_in.iter().find(|&&id| id >= cfg.vocab) {
        return Err(Error::data(format!(
            "target id {bad} out of vocabulary (size {})",
            cfg.vocab
        )));
    }

    let tok = g.embedding(p.var("embed.tok"), decoder_in)?;
    let pos = g.slice(p.var("embed.pos_tgt"), 0, 0, decoder_in.len())?;
    let mut h = g.add(tok, pos)?;

    for i in 0..cfg.n_dec {
        let (wq, wk, wv, wo) = (
            p.var(&format!("dec.{i}.self.wq")),
            p.var(&format!("dec.{i}.self.wk")),
            p.var(&format!("dec.{i}.self.wv")),
            p.var(&format!("dec.{i}.self.wo")),
        );
        h = residual_block(
            g,
            cfg.layer_order,
            h,
            p.var(&format!("dec.{i}.ln1.g")),
            p.var(&format!("dec.{i}.ln1.b")),
            |g, x| {
                multi_head(
                    g,
                    x,
                    x,
                    x,
                    wq,
                    wk,
                    wv,
                    Some(wo),
                    cfg.heads,
                    AttnMask { key_mask: Some(tgt_mask), causal: true },
                )
            },
        )?;

        let (cq, ck, cv, co) = (
            p.var(&format!("dec.{i}.cross.wq")),
            p.var(&format!("dec.{i}.cross.wk")),
            p.var(&format!("dec.{i}.cross.wv")),
            p.var(&format!("dec.{i}.cross.wo")),
        );
        h = residual_block(
            g,
            cfg.layer_order,
            h,
            p.var(&format!("dec.{i}.ln2.g")),
            p.var(&format!("dec.{i}.ln2.b")),
            |g, x| {
                multi_head(
                    g,
                    x,
                    z_tv,
                    z_tv,
                    cq,
                    ck,
                    cv,
                    Some(co),
                    cfg.heads,
                    AttnMask { key_mask: Some(src_mask), causal: false },
                )
            },
        )?;

        let (w1, b1, w2, b2) = (
            p.var(&format!("dec.{i}.ffn.w1")),
            p.var(&format!("dec.{i}.ffn.b1")),
            p.var(&format!("dec.{i}.ffn.w2")),
            p.var(&format!("dec.{i}.ffn.b2")),
        );
        h = residual_block(
            g,
            cfg.layer_order,
            h,
            p.var(&format!("dec.{i}.ln3.g")),
            p.var(&format!("dec.{i}.ln3.b")),
            |g, x| feed_forward(g, x, w1, b1, w2, b2, cfg.activation),
        )?;
    }

    let logits = g.matmul(h, p.var("out.w"))?;
    let logits = g.add(logits, p.var("out.b"))?;
    Ok((h, logits))
}
