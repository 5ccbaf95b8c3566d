//! Padded batch assembly for one translation direction.

use std::collections::BTreeMap;

use crate::data::{Sample, Vocab, VisionRecord, BOS, PAD};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, VisionInput};

/// One direction's worth of padded, id-level training data. `src` carries
/// the direction's source documents; `aligned_src` carries the same articles
/// in the target language (the monolingual path), so a single batch feeds
/// both forward passes of a distillation step.
#[derive(Debug, Clone)]
pub struct Batch {
    /// (source language, target language).
    pub direction: (String, String),
    pub sample_ids: Vec<String>,
    /// `B x m_max`; position 0 is the target-language tag.
    pub src_ids: Vec<Vec<usize>>,
    pub src_mask: Vec<Vec<u8>>,
    /// Same articles, document in the target language, same tag.
    pub aligned_src_ids: Vec<Vec<usize>>,
    pub aligned_src_mask: Vec<Vec<u8>>,
    /// `B x n_max` gold summary in the target language.
    pub tgt_ids: Vec<Vec<usize>>,
    pub tgt_mask: Vec<Vec<u8>>,
    /// Begin-shifted target: `decoder_in[0] = BOS`, `decoder_in[t] = tgt_ids[t-1]`.
    pub decoder_in: Vec<Vec<usize>>,
    pub vision: Vec<VisionInput<f32>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }
}

fn pad_to(ids: &[usize], len: usize) -> (Vec<usize>, Vec<u8>) {
    let mut out = ids.to_vec();
    let mut mask = vec![1u8; ids.len()];
    out.resize(len, PAD);
    mask.resize(len, 0);
    (out, mask)
}

/// Assemble a batch for `(src_lang, tgt_lang)`. Every sample must be in the
/// target language; cross-lingual directions additionally need the aligned
/// document in the source language.
pub fn make_batch(
    samples: &[&Sample],
    direction: (&str, &str),
    vocab: &Vocab,
    cfg: &ModelConfig,
    vision_store: &BTreeMap<String, VisionRecord>,
) -> Result<Batch> {
    let (src_lang, tgt_lang) = direction;
    if samples.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let tag = vocab.lang_tag_id(tgt_lang)?;
    vocab.lang_tag_id(src_lang)?;

    let mut batch = Batch {
        direction: (src_lang.to_string(), tgt_lang.to_string()),
        sample_ids: Vec::new(),
        src_ids: Vec::new(),
        src_mask: Vec::new(),
        aligned_src_ids: Vec::new(),
        aligned_src_mask: Vec::new(),
        tgt_ids: Vec::new(),
        tgt_mask: Vec::new(),
        decoder_in: Vec::new(),
        vision: Vec::new(),
    };

    for s in samples {
        if s.lang != tgt_lang {
            return Err(Error::data(format!(
                "sample {} is in language {}, batch targets {}",
                s.id, s.lang, tgt_lang
            )));
        }
        let src_doc: &[usize] = if src_lang == tgt_lang {
            &s.doc
        } else {
            s.aligned.get(src_lang).map(|v| v.as_slice()).ok_or_else(|| {
                Error::data(format!(
                    "sample {} has no aligned document for language {}",
                    s.id, src_lang
                ))
            })?
        };

        let mut src = Vec::with_capacity(cfg.m_max);
        src.push(tag);
        src.extend_from_slice(&src_doc[..src_doc.len().min(cfg.m_max - 1)]);
        let (src, src_m) = pad_to(&src, cfg.m_max);

        let mut asrc = Vec::with_capacity(cfg.m_max);
        asrc.push(tag);
        asrc.extend_from_slice(&s.doc[..s.doc.len().min(cfg.m_max - 1)]);
        let (asrc, asrc_m) = pad_to(&asrc, cfg.m_max);

        let (tgt, tgt_m) = pad_to(&s.summary[..s.summary.len().min(cfg.n_max)], cfg.n_max);
        let mut dec_in = vec![BOS];
        dec_in.extend_from_slice(&tgt[..cfg.n_max - 1]);

        let vision = vision_store
            .get(&s.vision_ref)
            .ok_or_else(|| {
                Error::data(format!("sample {} references missing vision record {}", s.id, s.vision_ref))
            })?
            .to_input()?;
        vision.validate(cfg)?;

        batch.sample_ids.push(s.id.clone());
        batch.src_ids.push(src);
        batch.src_mask.push(src_m);
        batch.aligned_src_ids.push(asrc);
        batch.aligned_src_mask.push(asrc_m);
        batch.tgt_ids.push(tgt);
        batch.tgt_mask.push(tgt_m);
        batch.decoder_in.push(dec_in);
        batch.vision.push(vision);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, Sample};

    fn cfg() -> ModelConfig {
        ModelConfig {
            d: 8,
            d_v: 6,
            d_c: 4,
            ffn: 16,
            n_enc: 1,
            n_dec: 1,
            n_vis: 1,
            heads: 2,
            vocab: 64,
            m_max: 6,
            n_max: 4,
            n_images: 2,
            m_regions: 2,
            k_langs: 2,
            layer_order: Default::default(),
            activation: Default::default(),
        }
    }

    fn vocab() -> Vocab {
        let langs = vec!["en".to_string(), "ru".to_string()];
        build_vocab(["alpha beta gamma delta"].into_iter(), &langs, 64).unwrap()
    }

    fn vision_rec(id: &str) -> VisionRecord {
        VisionRecord {
            id: id.into(),
            n_images: 2,
            m_regions: 2,
            d_v: 6,
            features: vec![0.1; 24],
            boxes: vec![0.5; 16],
            mask: vec![1; 4],
        }
    }

    fn sample(id: &str, lang: &str, v: &Vocab, doc: &str, sum: &str, aligned: &[(&str, &str)]) -> Sample {
        let text = crate::data::SampleText {
            id: id.into(),
            url: "https://example.test/a0".into(),
            lang: lang.into(),
            doc: doc.into(),
            summary: sum.into(),
            aligned: aligned.iter().map(|(l, t)| (l.to_string(), t.to_string())).collect(),
            vision_ref: "vis-a0".into(),
        };
        Sample::from_text(&text, v, 6, 4).unwrap()
    }

    #[test]
    fn shift_and_mask_invariants() {
        let v = vocab();
        let c = cfg();
        let store: BTreeMap<String, VisionRecord> =
            [("vis-a0".to_string(), vision_rec("vis-a0"))].into();
        let s = sample("a0-en", "en", &v, "alpha beta", "alpha", &[("ru", "gamma delta")]);
        let b = make_batch(&[&s], ("ru", "en"), &v, &c, &store).unwrap();

        assert_eq!(b.src_ids[0][0], v.lang_tag_id("en").unwrap());
        assert_eq!(b.decoder_in[0][0], BOS);
        for t in 1..c.n_max {
            assert_eq!(b.decoder_in[0][t], b.tgt_ids[0][t - 1]);
        }
        // "alpha" + EOS = 2 real target tokens.
        assert_eq!(b.tgt_mask[0], vec![1, 1, 0, 0]);
        // tag + "gamma delta" + EOS = 4 real source tokens of 6.
        assert_eq!(b.src_mask[0], vec![1, 1, 1, 1, 0, 0]);
        // aligned path holds the English document: tag + "alpha beta" + EOS.
        assert_eq!(b.aligned_src_mask[0], vec![1, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn monolingual_direction_src_equals_aligned() {
        let v = vocab();
        let c = cfg();
        let store: BTreeMap<String, VisionRecord> =
            [("vis-a0".to_string(), vision_rec("vis-a0"))].into();
        let s = sample("a0-en", "en", &v, "alpha beta", "alpha", &[]);
        let b = make_batch(&[&s], ("en", "en"), &v, &c, &store).unwrap();
        assert_eq!(b.src_ids, b.aligned_src_ids);
        assert_eq!(b.src_mask, b.aligned_src_mask);
    }

    #[test]
    fn missing_alignment_names_the_sample() {
        let v = vocab();
        let c = cfg();
        let store: BTreeMap<String, VisionRecord> =
            [("vis-a0".to_string(), vision_rec("vis-a0"))].into();
        let s = sample("a0-en", "en", &v, "alpha", "alpha", &[]);
        let err = make_batch(&[&s], ("ru", "en"), &v, &c, &store).unwrap_err();
        assert!(err.to_string().contains("a0-en"), "{err}");
    }
}
