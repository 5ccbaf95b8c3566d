//! Text-vision fusion: cross-modal attention into a common width, a forget
//! gate that filters the attended vision signal per text position, and a
//! projection back to the text width.

use crate::autodiff::{Graph, Scalar, Var};
use crate::error::Result;
use crate::model::attention::{multi_head, AttnMask};
use crate::model::{Bound, ModelConfig};

/// Fusion intermediates, kept for loss modules and inspection.
pub struct FuseOut {
    /// Cross-modal attention output, `[M, d_c]`.
    pub m_cm: Var,
    /// Forget gate, `[M, d_c]`.
    pub gate: Var,
    /// Gated vision signal, `[M, d_c]`.
    pub z_v: Var,
    /// Fused representation, `[M, d]`.
    pub z_tv: Var,
}

/// Fuse text states `[M, d]` with vision states `[n*m, d_v]`.
///
/// `M_cm = MHAttn(H_T W_q, H_V W_k, H_V W_v)` with masked vision keys;
/// `G = sigmoid([H_T; M_cm] W_g + b_g)`; `Z_V = G ⊙ M_cm`;
/// `Z_{T+V} = [H_T; Z_V] W_z + b_z`.
pub fn fuse<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &ModelConfig,
    h_t: Var,
    h_v: Var,
    vision_mask: &[u8],
) -> Result<FuseOut> {
    let m_cm = multi_head(
        g,
        h_t,
        h_v,
        h_v,
        p.var("fuse.wq"),
        p.var("fuse.wk"),
        p.var("fuse.wv"),
        None,
        cfg.heads,
        AttnMask { key_mask: Some(vision_mask), causal: false },
    )?;

    let gate_in = g.concat(&[h_t, m_cm], 1)?;
    let gate_logits = g.matmul(gate_in, p.var("fuse.wg"))?;
    let gate_logits = g.add(gate_logits, p.var("fuse.bg"))?;
    let gate = g.sigmoid(gate_logits)?;

    let z_v = g.mul(gate, m_cm)?;
    let z_in = g.concat(&[h_t, z_v], 1)?;
    let z_tv = g.matmul(z_in, p.var("fuse.wz"))?;
    let z_tv = g.add(z_tv, p.var("fuse.bz"))?;

    Ok(FuseOut { m_cm, gate, z_v, z_tv })
}
