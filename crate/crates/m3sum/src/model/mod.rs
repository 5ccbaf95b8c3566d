//! Gated text-vision transformer: textual encoder, visual encoder over
//! region features, cross-modal fusion with a forget gate, and a decoder
//! that cross-attends into the fused states.

mod attention;
mod decoder;
mod encoder;
mod fusion;
mod params;
mod vision;

pub use attention::LN_EPS;
pub use decoder::decode;
pub use encoder::encode_text;
pub use fusion::{fuse, FuseOut};
pub use params::{bind, init_params, param_shapes, Bound, ParamSet};
pub use vision::{encode_vision, VisionInput};

use crate::autodiff::{Graph, Scalar, Var};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Feed-forward nonlinearity. Recorded in checkpoint headers so a saved
/// model is self-describing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Tanh,
}

impl Activation {
    pub(crate) fn apply<S: Scalar>(self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        match self {
            Activation::Gelu => g.gelu(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Residual sublayer arrangement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LayerOrder {
    /// `LN(x + sublayer(x))`
    #[default]
    Postnorm,
    /// `x + sublayer(LN(x))`
    Prenorm,
}

/// Static architecture description. All shape decisions derive from this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Text hidden size.
    pub d: usize,
    /// Vision hidden size.
    pub d_v: usize,
    /// Fusion common size for the cross-modal attention.
    pub d_c: usize,
    /// Feed-forward hidden width (all stacks).
    pub ffn: usize,
    /// Encoder / decoder / vision layer counts.
    pub n_enc: usize,
    pub n_dec: usize,
    pub n_vis: usize,
    /// Head count shared by every attention (must divide d, d_v and d_c).
    pub heads: usize,
    /// Vocabulary size including reserved ids and language tags.
    pub vocab: usize,
    /// Max source length (language tag included).
    pub m_max: usize,
    /// Max target length.
    pub n_max: usize,
    /// Images per sample.
    pub n_images: usize,
    /// Regions per image.
    pub m_regions: usize,
    /// Number of languages.
    pub k_langs: usize,
    #[serde(default)]
    pub layer_order: LayerOrder,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("d_v", self.d_v),
            ("d_c", self.d_c),
            ("ffn", self.ffn),
            ("n_enc", self.n_enc),
            ("n_dec", self.n_dec),
            ("n_vis", self.n_vis),
            ("heads", self.heads),
            ("vocab", self.vocab),
            ("m_max", self.m_max),
            ("n_max", self.n_max),
            ("n_images", self.n_images),
            ("m_regions", self.m_regions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        if self.k_langs < 2 {
            return Err(Error::config("k_langs must be >= 2"));
        }
        for (name, width) in [("d", self.d), ("d_v", self.d_v), ("d_c", self.d_c)] {
            if width % self.heads != 0 {
                return Err(Error::config(format!(
                    "{name} = {width} not divisible by heads = {}",
                    self.heads
                )));
            }
        }
        if self.vocab < crate::data::RESERVED_TOKENS + self.k_langs {
            return Err(Error::config(format!(
                "vocab = {} too small for {} reserved ids + {} language tags",
                self.vocab,
                crate::data::RESERVED_TOKENS,
                self.k_langs
            )));
        }
        Ok(())
    }

    /// Total region rows per sample.
    pub fn vision_rows(&self) -> usize {
        self.n_images * self.m_regions
    }
}

/// Everything a loss needs from one sample's forward pass.
pub struct ForwardTrace {
    /// Final textual encoder states, `[M, d]`.
    pub h_t: Var,
    /// Final vision encoder states, `[n*m, d_v]`.
    pub h_v: Var,
    /// Cross-modal attention output, `[M, d_c]`.
    pub m_cm: Var,
    /// Forget gate, `[M, d_c]`, entries in (0, 1).
    pub gate: Var,
    /// Gated vision summary, `[M, d_c]`.
    pub z_v: Var,
    /// Fused states fed to the decoder, `[M, d]`.
    pub z_tv: Var,
    /// Top decoder layer states, `[N, d]`.
    pub h_dec_top: Var,
    /// Output logits, `[N, V]`.
    pub logits: Var,
}

/// Run the full model on one prepared sample. `src_ids` must already carry
/// the target-language tag in position 0 and `decoder_in` must be the
/// begin-shifted target.
#[allow(clippy::too_many_arguments)]
pub fn forward_sample<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &ModelConfig,
    src_ids: &[usize],
    src_mask: &[u8],
    vision: &VisionInput<S>,
    decoder_in: &[usize],
    tgt_mask: &[u8],
) -> Result<ForwardTrace> {
    let h_t = encode_text(g, p, cfg, src_ids, src_mask)?;
    let h_v = encode_vision(g, p, cfg, vision)?;
    let fused = fuse(g, p, cfg, h_t, h_v, &vision.mask)?;
    let (h_dec_top, logits) = decode(g, p, cfg, decoder_in, tgt_mask, fused.z_tv, src_mask)?;
    Ok(ForwardTrace {
        h_t,
        h_v,
        m_cm: fused.m_cm,
        gate: fused.gate,
        z_v: fused.z_v,
        z_tv: fused.z_tv,
        h_dec_top,
        logits,
    })
}
