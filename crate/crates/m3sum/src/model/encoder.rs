//! Textual encoder: token + learned position embeddings, then self-attention
//! blocks with padded positions unreachable as attention keys.

use crate::autodiff::{Graph, Scalar, Var};
use crate::error::{Error, Result};
use crate::model::attention::{feed_forward, multi_head, residual_block, AttnMask};
use crate::model::{Bound, ModelConfig};

/// One stack of self-attention + feed-forward blocks, shared by the textual
/// and visual encoders (`prefix` selects the parameter family).
pub(crate) fn self_attn_stack<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &ModelConfig,
    prefix: &str,
    layers: usize,
    mut h: Var,
    key_mask: &[u8],
) -> Result<Var> {
    for i in 0..layers {
        let (wq, wk, wv, wo) = (
            p.var(&format!("{prefix}.{i}.attn.wq")),
            p.var(&format!("{prefix}.{i}.attn.wk")),
            p.var(&format!("{prefix}.{i}.attn.wv")),
            p.var(&format!("{prefix}.{i}.attn.wo")),
        );
        h = residual_block(
            g,
            cfg.layer_order,
            h,
            p.var(&format!("{prefix}.{i}.ln1.g")),
            p.var(&format!("{prefix}.{i}.ln1.b")),
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
                    AttnMask { key_mask: Some(key_mask), causal: false },
                )
            },
        )?;
        let (w1, b1, w2, b2) = (
            p.var(&format!("{prefix}.{i}.ffn.w1")),
            p.var(&format!("{prefix}.{i}.ffn.b1")),
            p.var(&format!("{prefix}.{i}.ffn.w2")),
            p.var(&format!("{prefix}.{i}.ffn.b2")),
        );
        h = residual_block(
            g,
            cfg.layer_order,
            h,
            p.var(&format!("{prefix}.{i}.ln2.g")),
            p.var(&format!("{prefix}.{i}.ln2.b")),
            |g, x| feed_forward(g, x, w1, b1, w2, b2, cfg.activation),
        )?;
    }
    Ok(h)
}

/// Encode a token sequence into `[len, d]` states. `mask` is 1 on real
/// tokens and 0 on padding; padded positions never serve as attention keys
/// (their own rows still receive defined values).
pub fn encode_text<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &ModelConfig,
    token_ids: &[usize],
    mask: &[u8],
) -> Result<Var> {
    if token_ids.is_empty() {
        return Err(Error::data("encode_text: empty token sequence"));
    }
    if token_ids.len() != mask.len() {
        return Err(Error::shape(
            "encode-text",
            format!("{} ids vs {} mask entries", token_ids.len(), mask.len()),
        ));
    }
    if token_ids.len() > cfg.m_max {
        return Err(Error::data(format!(
            "source length {} exceeds m_max {}",
            token_ids.len(),
            cfg.m_max
        )));
    }
    if let Some(&bad) = token_ids.iter().find(|&&id| id >= cfg.vocab) {
        return Err(Error::data(format!(
            "token id {bad} out of vocabulary (size {})",
            cfg.vocab
        )));
    }

    let tok = g.embedding(p.var("embed.tok"), token_ids)?;
    let pos = g.slice(p.var("embed.pos_src"), 0, 0, token_ids.len())?;
    let h = g.add(tok, pos)?;
    self_attn_stack(g, p, cfg, "enc", cfg.n_enc, h, mask)
}
