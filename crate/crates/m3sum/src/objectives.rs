//! Training losses: label-smoothed cross-entropy for the monolingual and
//! cross-lingual paths, bidirectional knowledge distillation with an
//! annealed balance factor, masked pooling, the target-oriented contrastive
//! loss, and the joint per-step objective.

use crate::autodiff::{Axis, Graph, Scalar, Tensor, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{forward_sample, Activation, Bound, ForwardTrace, ModelConfig};
use serde::{Deserialize, Serialize};

/// Which distance the distillation terms use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KdMode {
    /// Per-position cosine distance between decoder hidden states.
    #[default]
    Cosine,
    /// KL between output distributions (through the shared output head).
    Kl,
}

fn mask_count(mask: &[u8]) -> usize {
    mask.iter().filter(|&&m| m != 0).count()
}

fn mask_row<S: Scalar>(g: &mut Graph<S>, mask: &[u8]) -> Result<Var> {
    let data: Vec<S> = mask.iter().map(|&m| if m != 0 { S::ONE } else { S::ZERO }).collect();
    g.constant(Tensor::matrix(1, mask.len(), data)?)
}

/// Mean of the entries of a length-L vector selected by `mask`.
fn masked_mean_vec<S: Scalar>(g: &mut Graph<S>, v: Var, mask: &[u8]) -> Result<Var> {
    let count = mask_count(mask);
    if count == 0 {
        return Err(Error::data("masked mean over zero positions"));
    }
    let m = mask_row(g, mask)?;
    let col = g.reshape(v, &[mask.len(), 1])?;
    let total = g.matmul(m, col)?;
    let total = g.reshape(total, &[1])?;
    g.scale(total, S::from_f64(1.0 / count as f64))
}

/// Label-smoothed cross-entropy, averaged over unmasked positions:
/// `(1-eps) * nll(gold) + eps * mean_v(-log p_v)`.
pub fn loss_ce<S: Scalar>(
    g: &mut Graph<S>,
    logits: Var,
    target_ids: &[usize],
    target_mask: &[u8],
    smoothing: f64,
) -> Result<Var> {
    let n = g.shape(logits)[0];
    if target_ids.len() != n || target_mask.len() != n {
        return Err(Error::shape(
            "cross-entropy",
            format!("{n} logit rows vs {} ids / {} mask", target_ids.len(), target_mask.len()),
        ));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::config(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    if mask_count(target_mask) == 0 {
        return Err(Error::data("cross-entropy: every target position is masked"));
    }
    let lp = g.log_softmax(logits, Axis::Cols)?;
    let gold = g.pick_per_row(lp, target_ids)?;
    let per_tok = if smoothing == 0.0 {
        g.scale(gold, -S::ONE)?
    } else {
        let uniform = g.mean_axis(lp, Axis::Cols)?;
        let a = g.scale(gold, S::from_f64(-(1.0 - smoothing)))?;
        let b = g.scale(uniform, S::from_f64(-smoothing))?;
        g.add(a, b)?
    };
    masked_mean_vec(g, per_tok, target_mask)
}

/// Cosine distillation distance: mean over unmasked positions of
/// `1 - cos(ref[t], upd[t])`. The reference states are constants; gradient
/// reaches only the updated side.
pub fn kd_cosine<S: Scalar>(
    g: &mut Graph<S>,
    h_ref: Var,
    h_upd: Var,
    mask: &[u8],
) -> Result<Var> {
    if g.shape(h_ref) != g.shape(h_upd) {
        return Err(Error::contract(format!(
            "distillation traces disagree: {:?} vs {:?}",
            g.shape(h_ref),
            g.shape(h_upd)
        )));
    }
    let frozen = g.detach(h_ref)?;
    let cos = g.cosine_similarity(frozen, h_upd)?;
    let ones = g.constant(Tensor::full(&[g.shape(cos)[0]], S::ONE))?;
    let dist = g.sub(ones, cos)?;
    masked_mean_vec(g, dist, mask)
}

/// KL distillation distance over output distributions: mean over unmasked
/// positions of `KL(softmax(ref_logits) || softmax(upd_logits))`. Reference
/// logits are constants.
pub fn kd_kl<S: Scalar>(
    g: &mut Graph<S>,
    logits_ref: Var,
    logits_upd: Var,
    mask: &[u8],
) -> Result<Var> {
    if g.shape(logits_ref) != g.shape(logits_upd) {
        return Err(Error::contract(format!(
            "distillation traces disagree: {:?} vs {:?}",
            g.shape(logits_ref),
            g.shape(logits_upd)
        )));
    }
    let frozen = g.detach(logits_ref)?;
    let p = g.softmax(frozen, Axis::Cols)?;
    let lp = g.log_softmax(frozen, Axis::Cols)?;
    let lq = g.log_softmax(logits_upd, Axis::Cols)?;
    let diff = g.sub(lp, lq)?;
    let prod = g.mul(p, diff)?;
    let per_pos = g.sum_axis(prod, Axis::Cols)?;
    masked_mean_vec(g, per_pos, mask)
}

/// Dispatch on mode using the right trace fields.
pub fn kd_distance<S: Scalar>(
    g: &mut Graph<S>,
    mode: KdMode,
    trace_ref: &ForwardTrace,
    trace_upd: &ForwardTrace,
    mask: &[u8],
) -> Result<Var> {
    match mode {
        KdMode::Cosine => kd_cosine(g, trace_ref.h_dec_top, trace_upd.h_dec_top, mask),
        KdMode::Kl => kd_kl(g, trace_ref.logits, trace_upd.logits, mask),
    }
}

/// Balance factor `alpha = max(0.5, 1 - t1/T1)`.
pub fn alpha_schedule(t1: usize, t1_horizon: usize) -> Result<f64> {
    if t1_horizon == 0 {
        return Err(Error::config("annealing horizon T1 must be positive"));
    }
    Ok((1.0 - t1 as f64 / t1_horizon as f64).max(0.5))
}

/// Masked mean over rows: `[L, d] -> [1, d]`, dividing by the number of
/// unmasked rows.
pub fn pool_masked<S: Scalar>(g: &mut Graph<S>, states: Var, mask: &[u8]) -> Result<Var> {
    let l = g.shape(states)[0];
    if mask.len() != l {
        return Err(Error::shape(
            "pool",
            format!("mask len {} vs {l} rows", mask.len()),
        ));
    }
    let count = mask_count(mask);
    if count == 0 {
        return Err(Error::pooling("mean over an empty mask"));
    }
    let m = mask_row(g, mask)?;
    let sum = g.matmul(m, states)?;
    g.scale(sum, S::from_f64(1.0 / count as f64))
}

/// Vision-to-text projector: one hidden layer of width d.
pub fn vision_mlp<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    h_v: Var,
    act: Activation,
) -> Result<Var> {
    let h = g.matmul(h_v, p.var("tco.w1"))?;
    let h = g.add(h, p.var("tco.b1"))?;
    let h = act.apply(g, h)?;
    let h = g.matmul(h, p.var("tco.w2"))?;
    g.add(h, p.var("tco.b2"))
}

/// Target-oriented contrastive loss with in-batch negatives:
/// `mean_i -log softmax_b(cos(h_vis_i, h_sum_b)/tau)[i]`.
pub fn loss_tco<S: Scalar>(g: &mut Graph<S>, h_vis: Var, h_sum: Var, tau: f64) -> Result<Var> {
    if tau <= 0.0 {
        return Err(Error::config(format!("temperature tau {tau} must be positive")));
    }
    if g.shape(h_vis) != g.shape(h_sum) {
        return Err(Error::shape(
            "contrastive",
            format!("{:?} vs {:?}", g.shape(h_vis), g.shape(h_sum)),
        ));
    }
    let b = g.shape(h_vis)[0];
    let vn = g.normalize_rows(h_vis)?;
    let sn = g.normalize_rows(h_sum)?;
    let snt = g.transpose(sn)?;
    let sims = g.matmul(vn, snt)?;
    let scaled = g.scale(sims, S::from_f64(1.0 / tau))?;
    let lp = g.log_softmax(scaled, Axis::Cols)?;
    let diag_ids: Vec<usize> = (0..b).collect();
    let diag = g.pick_per_row(lp, &diag_ids)?;
    let total = g.sum_all(diag)?;
    g.scale(total, S::from_f64(-1.0 / b as f64))
}

/// Student objective: `L_MXLS + alpha * dist(teacher as constant, student)`.
pub fn loss_student<S: Scalar>(
    g: &mut Graph<S>,
    mode: KdMode,
    trace_student: &ForwardTrace,
    trace_teacher: &ForwardTrace,
    target_ids: &[usize],
    target_mask: &[u8],
    alpha: f64,
    smoothing: f64,
) -> Result<Var> {
    let ce = loss_ce(g, trace_student.logits, target_ids, target_mask, smoothing)?;
    let kd = kd_distance(g, mode, trace_teacher, trace_student, target_mask)?;
    let kd = g.scale(kd, S::from_f64(alpha))?;
    g.add(ce, kd)
}

/// Teacher objective: `L_MMS + (1-alpha) * dist(student as constant, teacher)`.
pub fn loss_teacher<S: Scalar>(
    g: &mut Graph<S>,
    mode: KdMode,
    trace_teacher: &ForwardTrace,
    trace_student: &ForwardTrace,
    target_ids: &[usize],
    target_mask: &[u8],
    alpha: f64,
    smoothing: f64,
) -> Result<Var> {
    let ce = loss_ce(g, trace_teacher.logits, target_ids, target_mask, smoothing)?;
    let kd = kd_distance(g, mode, trace_student, trace_teacher, target_mask)?;
    let kd = g.scale(kd, S::from_f64(1.0 - alpha))?;
    g.add(ce, kd)
}

/// Scalar weights and knobs of one joint step.
#[derive(Debug, Clone, Copy)]
pub struct JointCfg {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub smoothing: f64,
    pub kd_mode: KdMode,
}

/// Graph handles for the joint loss and its components (all scalars).
pub struct JointParts {
    pub joint: Var,
    /// Cross-lingual CE (student path).
    pub l_mxls: Var,
    /// Monolingual CE (teacher path).
    pub l_mms: Var,
    /// Distillation into the student (teacher as reference).
    pub l_kd_ts: Var,
    /// Distillation into the teacher (student as reference).
    pub l_kd_st: Var,
    pub l_tco: Var,
}

/// Loss component values for logging. Components are clamped at zero when
/// rounding produces a tiny negative; anything below -1e-6 is rejected.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBundle {
    pub joint: f64,
    pub l_mms: f64,
    pub l_mxls: f64,
    pub l_kd_ts: f64,
    pub l_kd_st: f64,
    pub l_tco: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl LossBundle {
    pub fn from_parts<S: Scalar>(g: &Graph<S>, parts: &JointParts, jc: &JointCfg) -> Result<Self> {
        let read = |v: Var, name: &str| -> Result<f64> {
            let x = g.value(v).data()[0].to_f64();
            if !x.is_finite() {
                return Err(Error::numeric("loss", format!("{name} is not finite")));
            }
            if x < -1e-6 {
                return Err(Error::numeric("loss", format!("{name} = {x} is negative")));
            }
            Ok(x.max(0.0))
        };
        Ok(LossBundle {
            joint: read(parts.joint, "joint")?,
            l_mms: read(parts.l_mms, "l_mms")?,
            l_mxls: read(parts.l_mxls, "l_mxls")?,
            l_kd_ts: read(parts.l_kd_ts, "l_kd_ts")?,
            l_kd_st: read(parts.l_kd_st, "l_kd_st")?,
            l_tco: read(parts.l_tco, "l_tco")?,
            alpha: jc.alpha,
            beta: jc.beta,
            tau: jc.tau,
        })
    }
}

fn mean_scalars<S: Scalar>(g: &mut Graph<S>, vs: &[Var]) -> Result<Var> {
    let cat = g.concat(vs, 0)?;
    let total = g.sum_all(cat)?;
    g.scale(total, S::from_f64(1.0 / vs.len() as f64))
}

/// Build the full per-step objective over one batch: both forward passes per
/// sample on the shared parameters, both CE terms, both KD directions with
/// the annealed weights, and the batch-level contrastive term.
///
/// `joint = L_MXLS + alpha*KD(t->s) + L_MMS + (1-alpha)*KD(s->t) + beta*TCO`.
pub fn joint_step_loss<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &ModelConfig,
    batch: &Batch,
    jc: &JointCfg,
) -> Result<JointParts> {
    if batch.is_empty() {
        return Err(Error::data("joint loss over an empty batch"));
    }
    if !(0.5..=1.0).contains(&jc.alpha) {
        return Err(Error::config(format!("alpha {} outside [0.5, 1.0]", jc.alpha)));
    }
    let b = batch.len();
    let mut ce_s = Vec::with_capacity(b);
    let mut ce_t = Vec::with_capacity(b);
    let mut kd_ts = Vec::with_capacity(b);
    let mut kd_st = Vec::with_capacity(b);
    let mut vis_rows = Vec::with_capacity(b);
    let mut sum_rows = Vec::with_capacity(b);

    for i in 0..b {
        let vision = batch.vision[i].cast::<S>();
        let trace_s = forward_sample(
            g,
            p,
            cfg,
            &batch.src_ids[i],
            &batch.src_mask[i],
            &vision,
            &batch.decoder_in[i],
            &batch.tgt_mask[i],
        )?;
        let trace_t = forward_sample(
            g,
            p,
            cfg,
            &batch.aligned_src_ids[i],
            &batch.aligned_src_mask[i],
            &vision,
            &batch.decoder_in[i],
            &batch.tgt_mask[i],
        )?;

        ce_s.push(loss_ce(g, trace_s.logits, &batch.tgt_ids[i], &batch.tgt_mask[i], jc.smoothing)?);
        ce_t.push(loss_ce(g, trace_t.logits, &batch.tgt_ids[i], &batch.tgt_mask[i], jc.smoothing)?);
        kd_ts.push(kd_distance(g, jc.kd_mode, &trace_t, &trace_s, &batch.tgt_mask[i])?);
        kd_st.push(kd_distance(g, jc.kd_mode, &trace_s, &trace_t, &batch.tgt_mask[i])?);

        if jc.beta != 0.0 {
            let projected = vision_mlp(g, p, trace_t.h_v, cfg.activation)?;
            vis_rows.push(pool_masked(g, projected, &vision.mask)?);
            let h_sum = crate::model::encode_text(g, p, cfg, &batch.tgt_ids[i], &batch.tgt_mask[i])?;
            sum_rows.push(pool_masked(g, h_sum, &batch.tgt_mask[i])?);
        }
    }

    let l_mxls = mean_scalars(g, &ce_s)?;
    let l_mms = mean_scalars(g, &ce_t)?;
    let l_kd_ts = mean_scalars(g, &kd_ts)?;
    let l_kd_st = mean_scalars(g, &kd_st)?;
    let l_tco = if jc.beta != 0.0 {
        let h_vis = g.concat(&vis_rows, 0)?;
        let h_sum = g.concat(&sum_rows, 0)?;
        loss_tco(g, h_vis, h_sum, jc.tau)?
    } else {
        g.constant(Tensor::scalar(S::ZERO))?
    };

    let kd_s = g.scale(l_kd_ts, S::from_f64(jc.alpha))?;
    let kd_t = g.scale(l_kd_st, S::from_f64(1.0 - jc.alpha))?;
    let tco_w = g.scale(l_tco, S::from_f64(jc.beta))?;
    let mut joint = g.add(l_mxls, kd_s)?;
    joint = g.add(joint, l_mms)?;
    joint = g.add(joint, kd_t)?;
    joint = g.add(joint, tco_w)?;

    Ok(JointParts { joint, l_mxls, l_mms, l_kd_ts, l_kd_st, l_tco })
}
