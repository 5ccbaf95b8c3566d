//! Adam with bias correction and an optional global gradient-norm ceiling.

use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::train::TrainConfig;

/// Optimizer state. First and second moment estimates are kept per named
/// parameter; `t` counts completed updates and drives bias correction, so
/// restoring `(t, m, v)` from a checkpoint resumes the exact trajectory.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    max_grad_norm: Option<f64>,
    t: u64,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new(tc: &TrainConfig, params: &ParamSet<f32>) -> Self {
        let zeros = |p: &ParamSet<f32>| {
            p.iter()
                .map(|(name, t)| (name.to_string(), vec![0.0f32; t.numel()]))
                .collect::<BTreeMap<_, _>>()
        };
        Adam {
            beta1: tc.beta1,
            beta2: tc.beta2,
            eps: tc.adam_eps,
            max_grad_norm: tc.max_grad_norm,
            t: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Moment vectors in parameter order, for checkpointing.
    pub fn moments(&self, name: &str) -> Option<(&[f32], &[f32])> {
        Some((self.m.get(name)?.as_slice(), self.v.get(name)?.as_slice()))
    }

    /// Rebuild optimizer state saved in a checkpoint. Every parameter needs
    /// both moment vectors with matching lengths.
    pub fn restore(
        tc: &TrainConfig,
        params: &ParamSet<f32>,
        t: u64,
        mut m: BTreeMap<String, Vec<f32>>,
        mut v: BTreeMap<String, Vec<f32>>,
    ) -> Result<Self> {
        for (name, tensor) in params.iter() {
            for (kind, map) in [("m", &mut m), ("v", &mut v)] {
                let got = map
                    .get(name)
                    .ok_or_else(|| {
                        Error::format(format!("checkpoint missing adam.{kind}.{name}"))
                    })?
                    .len();
                if got != tensor.numel() {
                    return Err(Error::format(format!(
                        "adam.{kind}.{name} holds {got} values, parameter has {}",
                        tensor.numel()
                    )));
                }
            }
        }
        let mut adam = Adam::new(tc, params);
        adam.t = t;
        adam.m = m;
        adam.v = v;
        Ok(adam)
    }

    /// Apply one update with step size `lr`. Gradients are looked up by
    /// parameter name; a missing entry means zero gradient for that tensor.
    pub fn step(
        &mut self,
        params: &mut ParamSet<f32>,
        grads: &BTreeMap<String, Tensor<f32>>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("gradient for {name} is {:?}, parameter is {:?}", g.shape(), p.shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::numeric("adam", format!("non-finite gradient for {name}")));
            }
        }

        // Optional global norm clip; the norm accumulates in f64 over
        // parameter-name order so the result is run-to-run stable.
        let mut scale = 1.0f32;
        if let Some(ceiling) = self.max_grad_norm {
            let mut sq = 0.0f64;
            for g in grads.values() {
                for &x in g.data() {
                    sq += (x as f64) * (x as f64);
                }
            }
            let norm = sq.sqrt();
            if norm > ceiling {
                scale = (ceiling / norm) as f32;
            }
        }

        self.t += 1;
        let c1 = (1.0 - self.beta1.powi(self.t as i32)) as f32;
        let c2 = (1.0 - self.beta2.powi(self.t as i32)) as f32;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let eps = self.eps as f32;
        let lr = lr as f32;

        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let m = self.m.get_mut(&name).ok_or_else(|| {
                Error::contract(format!("optimizer state missing for parameter {name}"))
            })?;
            let v = self.v.get_mut(&name).unwrap();
            let p = params.get_mut(&name)?;
            let zero;
            let g: &[f32] = match grads.get(&name) {
                Some(t) => t.data(),
                None => {
                    zero = vec![0.0f32; p.numel()];
                    &zero
                }
            };
            for i in 0..p.numel() {
                let gi = g[i] * scale;
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamSet;

    fn one_param(value: &[f32]) -> ParamSet<f32> {
        ParamSet::from_entries(vec![(
            "w".to_string(),
            Tensor::new(vec![value.len()], value.to_vec()).unwrap(),
        )])
        .unwrap()
    }

    fn tc() -> TrainConfig {
        TrainConfig { beta1: 0.9, beta2: 0.999, adam_eps: 1e-8, ..TrainConfig::default() }
    }

    #[test]
    fn first_step_moves_by_lr_regardless_of_gradient_scale() {
        // With bias correction, step 1 is p -= lr * g/|g| elementwise
        // (up to eps), independent of |g|.
        for &gval in &[0.01f32, 1.0, 100.0] {
            let mut params = one_param(&[1.0]);
            let mut adam = Adam::new(&tc(), &params);
            let grads = BTreeMap::from([(
                "w".to_string(),
                Tensor::new(vec![1], vec![gval]).unwrap(),
            )]);
            adam.step(&mut params, &grads, 0.1).unwrap();
            let p = params.get("w").unwrap().data()[0];
            assert!((p - 0.9).abs() < 1e-4, "gval {gval} gave {p}");
        }
    }

    #[test]
    fn descends_a_quadratic() {
        // Minimize (w - 3)^2 by feeding its gradient.
        let mut params = one_param(&[0.0]);
        let mut adam = Adam::new(&tc(), &params);
        for _ in 0..400 {
            let w = params.get("w").unwrap().data()[0];
            let g = 2.0 * (w - 3.0);
            let grads =
                BTreeMap::from([("w".to_string(), Tensor::new(vec![1], vec![g]).unwrap())]);
            adam.step(&mut params, &grads, 0.05).unwrap();
        }
        let w = params.get("w").unwrap().data()[0];
        assert!((w - 3.0).abs() < 0.05, "converged to {w}");
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut config = tc();
        config.max_grad_norm = Some(1.0);
        let mut params = one_param(&[0.0, 0.0]);
        let mut clipped = Adam::new(&config, &params);
        let big = BTreeMap::from([(
            "w".to_string(),
            Tensor::new(vec![2], vec![30.0, 40.0]).unwrap(),
        )]);
        clipped.step(&mut params, &big, 0.1).unwrap();
        // Norm 50 clipped to 1: effective gradient (0.6, 0.8). Step 1 of
        // Adam normalizes per element, so directions match the sign only;
        // verify via the internal first moment instead.
        let (m, _) = clipped.moments("w").unwrap();
        assert!((m[0] - 0.1 * 0.6).abs() < 1e-6);
        assert!((m[1] - 0.1 * 0.8).abs() < 1e-6);
    }

    #[test]
    fn rejects_shape_mismatch_and_nonfinite() {
        let mut params = one_param(&[0.0]);
        let mut adam = Adam::new(&tc(), &params);
        let bad_shape =
            BTreeMap::from([("w".to_string(), Tensor::new(vec![2], vec![0.0, 0.0]).unwrap())]);
        assert!(adam.step(&mut params, &bad_shape, 0.1).is_err());
        let bad_val =
            BTreeMap::from([("w".to_string(), Tensor::new(vec![1], vec![f32::NAN]).unwrap())]);
        assert!(adam.step(&mut params, &bad_val, 0.1).is_err());
    }

    #[test]
    fn restore_validates_lengths() {
        let params = one_param(&[0.0, 0.0]);
        let config = tc();
        let good = BTreeMap::from([("w".to_string(), vec![0.0f32; 2])]);
        let short = BTreeMap::from([("w".to_string(), vec![0.0f32; 1])]);
        assert!(Adam::restore(&config, &params, 5, good.clone(), good.clone()).is_ok());
        assert!(Adam::restore(&config, &params, 5, good.clone(), short.clone()).is_err());
        assert!(Adam::restore(&config, &params, 5, BTreeMap::new(), good).is_err());
    }
}
