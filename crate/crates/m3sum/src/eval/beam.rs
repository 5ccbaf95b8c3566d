//! Beam search over the decoder with the `((5+len)/6)^gamma` length
//! normalization. The encoder and fusion run once; each decode step rebuilds
//! a fresh graph over the frozen fused states.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Graph, Tensor};
use crate::data::BOS;
use crate::error::{Error, Result};
use crate::model::{bind, decode, encode_text, encode_vision, fuse, ModelConfig, ParamSet, VisionInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Length-penalty exponent; 0 scores by raw summed log-probability.
    pub gamma: f64,
    /// Longest sequence to generate, bounded by the model's n_max.
    pub max_len: usize,
    pub eos: usize,
}

impl BeamConfig {
    /// Paper-default decoding for a given architecture: beam 4, gamma 0.6,
    /// generate up to the decoder's full length.
    pub fn for_model(cfg: &ModelConfig) -> Self {
        BeamConfig { beam_size: 4, gamma: 0.6, max_len: cfg.n_max, eos: crate::data::EOS }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::config("beam_size must be >= 1"));
        }
        if self.gamma < 0.0 {
            return Err(Error::config(format!("gamma = {} must be >= 0", self.gamma)));
        }
        if self.max_len == 0 || self.max_len > cfg.n_max {
            return Err(Error::config(format!(
                "max_len = {} outside 1..={}",
                self.max_len, cfg.n_max
            )));
        }
        if self.eos >= cfg.vocab {
            return Err(Error::config(format!("eos id {} outside vocabulary", self.eos)));
        }
        Ok(())
    }
}

/// One scored hypothesis. `tokens` excludes the begin marker and includes
/// the end marker when `finished`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generated {
    pub tokens: Vec<usize>,
    /// Raw summed log-probability; non-increasing as the sequence extends.
    pub sum_logprob: f64,
    /// `sum_logprob / ((5+len)/6)^gamma`.
    pub score: f64,
    pub finished: bool,
}

/// The selected hypothesis plus every finished one, for inspection.
#[derive(Debug, Clone)]
pub struct BeamOutcome {
    pub best: Generated,
    pub finished: Vec<Generated>,
}

fn length_penalty(len: usize, gamma: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(gamma)
}

struct Hyp {
    tokens: Vec<usize>,
    sum: f64,
}

impl Hyp {
    fn to_generated(&self, gamma: f64, finished: bool) -> Generated {
        Generated {
            tokens: self.tokens.clone(),
            sum_logprob: self.sum,
            score: self.sum / length_penalty(self.tokens.len(), gamma),
            finished,
        }
    }
}

/// Full beam search. Returns the best finished hypothesis by penalized
/// score, falling back to the best unfinished one at `max_len` when nothing
/// finished.
pub fn beam_search(
    cfg: &ModelConfig,
    params: &ParamSet<f32>,
    src_ids: &[usize],
    src_mask: &[u8],
    vision: &VisionInput<f32>,
    bc: &BeamConfig,
) -> Result<BeamOutcome> {
    cfg.validate()?;
    bc.validate(cfg)?;

    // Encoder and fusion once; the fused states are constants afterwards.
    let z_tv_frozen: Tensor<f32> = {
        let mut g = Graph::<f32>::new();
        let p = bind(&mut g, params, false)?;
        let h_t = encode_text(&mut g, &p, cfg, src_ids, src_mask)?;
        let h_v = encode_vision(&mut g, &p, cfg, vision)?;
        let out = fuse(&mut g, &p, cfg, h_t, h_v, &vision.mask)?;
        g.value(out.z_tv).clone()
    };

    let mut live = vec![Hyp { tokens: Vec::new(), sum: 0.0 }];
    let mut finished: Vec<Generated> = Vec::new();

    while !live.is_empty() && live[0].tokens.len() < bc.max_len {
        let mut g = Graph::<f32>::new();
        let p = bind(&mut g, params, false)?;
        let z = g.constant(z_tv_frozen.clone())?;

        // (penalized score, hyp index, token, new raw sum)
        let mut cands: Vec<(f64, usize, usize, f64)> = Vec::new();
        for (hi, hyp) in live.iter().enumerate() {
            let mut dec_in = Vec::with_capacity(hyp.tokens.len() + 1);
            dec_in.push(BOS);
            dec_in.extend_from_slice(&hyp.tokens);
            let tmask = vec![1u8; dec_in.len()];
            let (_, logits) = decode(&mut g, &p, cfg, &dec_in, &tmask, z, src_mask)?;
            let lp = g.log_softmax(logits, Axis::Cols)?;
            let table = g.value(lp);
            let row_start = (dec_in.len() - 1) * cfg.vocab;
            let row = &table.data()[row_start..row_start + cfg.vocab];
            let new_len = hyp.tokens.len() + 1;
            let pen = length_penalty(new_len, bc.gamma);
            for (tok, &lpv) in row.iter().enumerate() {
                let new_sum = hyp.sum + lpv as f64;
                cands.push((new_sum / pen, hi, tok, new_sum));
            }
        }
        // Deterministic order: score descending, then hypothesis index and
        // token id ascending.
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });

        let mut next_live = Vec::with_capacity(bc.beam_size);
        for &(score, hi, tok, new_sum) in &cands {
            if score.is_nan() {
                return Err(Error::numeric("beam", "hypothesis score is NaN"));
            }
            let mut tokens = live[hi].tokens.clone();
            tokens.push(tok);
            if tok == bc.eos {
                finished.push(Generated {
                    tokens,
                    sum_logprob: new_sum,
                    score,
                    finished: true,
                });
            } else if next_live.len() < bc.beam_size {
                next_live.push(Hyp { tokens, sum: new_sum });
            }
            if next_live.len() == bc.beam_size {
                break;
            }
        }
        live = next_live;
    }

    let best = if finished.is_empty() {
        let best_live = live
            .iter()
            .map(|h| h.to_generated(bc.gamma, false))
            .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap_or(std::cmp::Ordering::Equal))
            .ok_or_else(|| Error::contract("beam search ended with no hypotheses"))?;
        best_live
    } else {
        finished
            .iter()
            .cloned()
            .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap_or(std::cmp::Ordering::Equal))
            .expect("finished pool non-empty")
    };
    Ok(BeamOutcome { best, finished })
}

/// Convenience wrapper returning only the selected hypothesis.
pub fn generate(
    cfg: &ModelConfig,
    params: &ParamSet<f32>,
    src_ids: &[usize],
    src_mask: &[u8],
    vision: &VisionInput<f32>,
    bc: &BeamConfig,
) -> Result<Generated> {
    Ok(beam_search(cfg, params, src_ids, src_mask, vision, bc)?.best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_is_identity_at_gamma_zero_and_len_one() {
        assert_eq!(length_penalty(7, 0.0), 1.0);
        assert_eq!(length_penalty(1, 0.6), 1.0);
        assert!(length_penalty(2, 0.6) > 1.0);
    }
}
