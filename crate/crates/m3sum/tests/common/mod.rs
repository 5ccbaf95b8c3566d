//! Shared fixtures for integration tests: a micro model configuration and a
//! tiny in-memory synthetic corpus.

#![allow(dead_code)]

use std::collections::BTreeMap;

use m3sum::data::{
    build_vocab, make_batch, synth_corpus, Batch, Sample, SynthConfig, Vocab, VisionRecord,
};
use m3sum::model::{init_params, ModelConfig, ParamSet};

/// Smallest full-featured configuration: every width is a few units, one
/// layer per stack, two heads everywhere.
pub fn micro_config() -> ModelConfig {
    ModelConfig {
        d: 8,
        d_v: 6,
        d_c: 4,
        ffn: 16,
        n_enc: 1,
        n_dec: 1,
        n_vis: 1,
        heads: 2,
        vocab: 16,
        m_max: 5,
        n_max: 4,
        n_images: 2,
        m_regions: 2,
        k_langs: 2,
        layer_order: Default::default(),
        activation: Default::default(),
    }
}

pub fn micro_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        langs: vec!["en".into(), "ru".into()],
        articles_train: 4,
        articles_test: 2,
        latent_vocab: 5,
        doc_len: (2, 3),
        sum_len: (1, 2),
        n_images: 2,
        m_regions: 2,
        d_v: 6,
        noise: 0.02,
    }
}

pub struct Fixture {
    pub cfg: ModelConfig,
    pub vocab: Vocab,
    pub samples: Vec<Sample>,
    pub test_samples: Vec<Sample>,
    pub vision: BTreeMap<String, VisionRecord>,
    pub params: ParamSet<f32>,
}

/// Everything needed to run forward passes, built in memory.
pub fn micro_fixture(seed: u64) -> Fixture {
    let cfg = micro_config();
    let synth = micro_synth(seed);
    let out = synth_corpus(&synth).unwrap();

    let mut texts: Vec<&str> = Vec::new();
    for rec in &out.train {
        texts.push(&rec.doc);
        texts.push(&rec.summary);
        for doc in rec.aligned.values() {
            texts.push(doc);
        }
    }
    let vocab = build_vocab(texts.into_iter(), &synth.langs, cfg.vocab).unwrap();
    assert!(vocab.size() <= cfg.vocab, "vocab {} exceeds config {}", vocab.size(), cfg.vocab);

    let samples: Vec<Sample> = out
        .train
        .iter()
        .map(|r| Sample::from_text(r, &vocab, cfg.m_max, cfg.n_max).unwrap())
        .collect();
    let test_samples: Vec<Sample> = out
        .test
        .iter()
        .map(|r| Sample::from_text(r, &vocab, cfg.m_max, cfg.n_max).unwrap())
        .collect();
    let vision: BTreeMap<String, VisionRecord> =
        out.vision.into_iter().map(|r| (r.id.clone(), r)).collect();
    let params = init_params(&cfg, seed).unwrap();

    Fixture { cfg, vocab, samples, test_samples, vision, params }
}

impl Fixture {
    /// First `b` train samples in the direction's target language.
    pub fn batch(&self, src: &str, tgt: &str, b: usize) -> Batch {
        let picked: Vec<&Sample> =
            self.samples.iter().filter(|s| s.lang == tgt).take(b).collect();
        assert_eq!(picked.len(), b, "not enough {tgt} samples");
        make_batch(&picked, (src, tgt), &self.vocab, &self.cfg, &self.vision).unwrap()
    }
}
