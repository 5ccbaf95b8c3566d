//! Training loop over sampled direction pairs, Adam with warmup plus
//! inverse-sqrt decay, and self-describing binary checkpoints.

mod adam;
mod checkpoint;
mod run;

pub use adam::Adam;
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use run::{train_loop, StepMetrics, TrainInputs};

use crate::error::{Error, Result};
use crate::objectives::KdMode;
use serde::{Deserialize, Serialize};

/// Optimization and schedule settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Batch size per step.
    pub batch_size: usize,
    /// Total steps.
    pub max_steps: usize,
    /// Annealing horizon; the distillation weight clamps at 0.5 beyond it.
    pub t1: usize,
    /// Peak learning rate, reached at the warmup boundary.
    pub lr: f64,
    /// Linear warmup length in steps.
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Label smoothing rate for both cross-entropy terms.
    pub smoothing: f64,
    /// Contrastive term weight.
    pub beta: f64,
    /// Contrastive temperature.
    pub tau: f64,
    pub seed: u64,
    /// Steps between metric lines and interval checkpoints.
    pub eval_interval: usize,
    pub kd_mode: KdMode,
    /// Pin the distillation weight instead of annealing it. `Some(1.0)`
    /// together with `beta = 0` is the one-way distillation ablation.
    pub fixed_alpha: Option<f64>,
    /// Global gradient norm ceiling; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            max_steps: 500,
            t1: 250,
            lr: 3e-3,
            warmup: 50,
            beta1: 0.9,
            beta2: 0.998,
            adam_eps: 1e-8,
            smoothing: 0.1,
            beta: 0.7,
            tau: 0.1,
            seed: 1,
            eval_interval: 50,
            kd_mode: KdMode::Cosine,
            fixed_alpha: None,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be >= 1"));
        }
        if self.t1 > self.max_steps {
            return Err(Error::config(format!(
                "annealing horizon t1 = {} exceeds max_steps = {}",
                self.t1, self.max_steps
            )));
        }
        if self.t1 == 0 {
            return Err(Error::config("t1 must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("lr = {} must be > 0", self.lr)));
        }
        if self.warmup == 0 {
            return Err(Error::config("warmup must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::config(format!(
                "smoothing = {} outside [0, 1)",
                self.smoothing
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps must be > 0"));
        }
        if self.beta < 0.0 {
            return Err(Error::config(format!("beta = {} must be >= 0", self.beta)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("tau = {} must be > 0", self.tau)));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval must be >= 1"));
        }
        if let Some(a) = self.fixed_alpha {
            if !(0.5..=1.0).contains(&a) {
                return Err(Error::config(format!(
                    "fixed_alpha = {a} outside [0.5, 1.0]"
                )));
            }
        }
        if let Some(m) = self.max_grad_norm {
            if !(m > 0.0) {
                return Err(Error::config("max_grad_norm must be > 0"));
            }
        }
        Ok(())
    }

    /// Learning rate at 0-based step `t`: linear ramp to the peak over
    /// `warmup` steps, then inverse square-root decay. Both branches meet
    /// at the warmup boundary.
    pub fn lr_at(&self, t: usize) -> f64 {
        let s = (t + 1) as f64;
        let w = self.warmup as f64;
        self.lr * (s / w).min((w / s).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_ramps_then_decays() {
        let tc = TrainConfig { lr: 1.0, warmup: 100, ..TrainConfig::default() };
        // Near zero at step 0.
        assert!(tc.lr_at(0) <= 0.01 + 1e-12);
        // Exactly peak at the boundary (t+1 == warmup).
        assert_eq!(tc.lr_at(99), 1.0);
        // Strictly below peak on both sides.
        assert!(tc.lr_at(98) < 1.0);
        assert!(tc.lr_at(100) < 1.0);
        // Inverse-sqrt beyond: lr(4w-1) = peak/2.
        assert!((tc.lr_at(399) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_settings() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.t1 = c.max_steps + 1;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.lr = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.smoothing = 1.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.fixed_alpha = Some(0.4);
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_roundtrips_through_json_with_defaults() {
        let text = r#"{"batch_size": 8, "max_steps": 2000, "t1": 1000, "smoothing": 0.0}"#;
        let tc: TrainConfig = serde_json::from_str(text).unwrap();
        assert_eq!(tc.batch_size, 8);
        assert_eq!(tc.smoothing, 0.0);
        assert_eq!(tc.beta2, 0.998);
        let back: TrainConfig =
            serde_json::from_str(&serde_json::to_string(&tc).unwrap()).unwrap();
        assert_eq!(back, tc);
    }
}
