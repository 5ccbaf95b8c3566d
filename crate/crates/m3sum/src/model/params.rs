//! Named parameter storage, deterministic initialization, and graph binding.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Ordered, name-addressable parameter tensors. Iteration order is the
/// canonical order of [`param_shapes`], which checkpoints and optimizer
/// state rely on.
#[derive(Debug, Clone)]
pub struct ParamSet<S: Scalar> {
    entries: Vec<(String, Tensor<S>)>,
    index: BTreeMap<String, usize>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn from_entries(entries: Vec<(String, Tensor<S>)>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, (name, _)) in entries.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate parameter name {name}")));
            }
        }
        Ok(ParamSet { entries, index })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::contract(format!("unknown parameter {name}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn total_elems(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast::<T>())).collect(),
            index: self.index.clone(),
        }
    }
}

/// Canonical parameter name/shape table for a configuration. Checkpoint
/// layout, initialization order, and optimizer state all follow this list.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, dv, dc, ffn, v) = (cfg.d, cfg.d_v, cfg.d_c, cfg.ffn, cfg.vocab);
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let mut push = |name: String, shape: &[usize]| out.push((name, shape.to_vec()));

    push("embed.tok".into(), &[v, d]);
    push("embed.pos_src".into(), &[cfg.m_max, d]);
    push("embed.pos_tgt".into(), &[cfg.n_max, d]);

    for i in 0..cfg.n_enc {
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("enc.{i}.attn.{w}"), &[d, d]);
        }
        push(format!("enc.{i}.ln1.g"), &[d]);
        push(format!("enc.{i}.ln1.b"), &[d]);
        push(format!("enc.{i}.ffn.w1"), &[d, ffn]);
        push(format!("enc.{i}.ffn.b1"), &[ffn]);
        push(format!("enc.{i}.ffn.w2"), &[ffn, d]);
        push(format!("enc.{i}.ffn.b2"), &[d]);
        push(format!("enc.{i}.ln2.g"), &[d]);
        push(format!("enc.{i}.ln2.b"), &[d]);
    }

    push("vis.box.w".into(), &[4, dv]);
    push("vis.img".into(), &[cfg.n_images, dv]);
    push("vis.reg".into(), &[cfg.m_regions, dv]);
    for i in 0..cfg.n_vis {
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("vis.{i}.attn.{w}"), &[dv, dv]);
        }
        push(format!("vis.{i}.ln1.g"), &[dv]);
        push(format!("vis.{i}.ln1.b"), &[dv]);
        push(format!("vis.{i}.ffn.w1"), &[dv, ffn]);
        push(format!("vis.{i}.ffn.b1"), &[ffn]);
        push(format!("vis.{i}.ffn.w2"), &[ffn, dv]);
        push(format!("vis.{i}.ffn.b2"), &[dv]);
        push(format!("vis.{i}.ln2.g"), &[dv]);
        push(format!("vis.{i}.ln2.b"), &[dv]);
    }

    push("fuse.wq".into(), &[d, dc]);
    push("fuse.wk".into(), &[dv, dc]);
    push("fuse.wv".into(), &[dv, dc]);
    push("fuse.wg".into(), &[d + dc, dc]);
    push("fuse.bg".into(), &[dc]);
    push("fuse.wz".into(), &[d + dc, d]);
    push("fuse.bz".into(), &[d]);

    for i in 0..cfg.n_dec {
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("dec.{i}.self.{w}"), &[d, d]);
        }
        push(format!("dec.{i}.ln1.g"), &[d]);
        push(format!("dec.{i}.ln1.b"), &[d]);
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("dec.{i}.cross.{w}"), &[d, d]);
        }
        push(format!("dec.{i}.ln2.g"), &[d]);
        push(format!("dec.{i}.ln2.b"), &[d]);
        push(format!("dec.{i}.ffn.w1"), &[d, ffn]);
        push(format!("dec.{i}.ffn.b1"), &[ffn]);
        push(format!("dec.{i}.ffn.w2"), &[ffn, d]);
        push(format!("dec.{i}.ffn.b2"), &[d]);
        push(format!("dec.{i}.ln3.g"), &[d]);
        push(format!("dec.{i}.ln3.b"), &[d]);
    }

    push("out.w".into(), &[d, v]);
    push("out.b".into(), &[v]);

    // Vision-to-text projector used by the contrastive objective.
    push("tco.w1".into(), &[dv, d]);
    push("tco.b1".into(), &[d]);
    push("tco.w2".into(), &[d, d]);
    push("tco.b2".into(), &[d]);

    out
}

/// Deterministic initialization: Xavier-uniform matrices, unit layer-norm
/// gains, zero biases. Same seed, same bytes.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamSet<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (name, shape) in param_shapes(cfg) {
        let t = if shape.len() == 2 {
            let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            let data: Vec<f32> =
                (0..shape[0] * shape[1]).map(|_| rng.gen_range(-limit..limit) as f32).collect();
            Tensor::new(shape, data)?
        } else if name.ends_with(".g") {
            Tensor::full(&shape, 1.0f32)
        } else {
            Tensor::zeros(&shape)
        };
        entries.push((name, t));
    }
    ParamSet::from_entries(entries)
}

/// Parameters registered as graph leaves for one forward/backward pass.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Assemble from explicit (name, var) pairs. Used by gradient checks
    /// that need the leaves under external control.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound { vars: pairs.into_iter().collect() }
    }

    /// Look up a bound parameter. Missing names are a programming error.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(&v) => v,
            None => panic!("parameter {name} not bound"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, &v)| (n.as_str(), v))
    }
}

/// Register every parameter as a leaf on `g`. With `trainable` the leaves
/// participate in backward and their gradients can be read back by name.
pub fn bind<S: Scalar>(g: &mut Graph<S>, params: &ParamSet<S>, trainable: bool) -> Result<Bound> {
    let mut vars = BTreeMap::new();
    for (name, tensor) in params.iter() {
        let var = g.leaf(tensor.clone(), trainable)?;
        vars.insert(name.to_string(), var);
    }
    Ok(Bound { vars })
}
