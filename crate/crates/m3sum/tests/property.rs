//! Randomized structural properties of the data pipeline and metrics.

use std::collections::BTreeMap;
use std::path::Path;

use m3sum::data::{
    build_vocab, detokenize, make_batch, read_vision_file, tokenize, write_vision_file, Sample,
    SampleText, VisionRecord, BOS, EOS, PAD, RESERVED_TOKENS,
};
use m3sum::eval::{rouge_l, rouge_n};
use m3sum::model::ModelConfig;
use m3sum::objectives::alpha_schedule;
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    // Lowercase alphanumeric words, never empty, no angle brackets so they
    // cannot collide with language-tag surface forms.
    proptest::string::string_regex("[a-z][a-z0-9]{0,5}").unwrap()
}

fn sentence(max_words: usize) -> impl Strategy<Value = String> {
    proptest::collection::vec(word(), 1..=max_words).prop_map(|ws| ws.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tokenize_detokenize_roundtrips_known_words(texts in proptest::collection::vec(sentence(6), 1..5)) {
        let langs = ["en".to_string(), "ru".to_string()];
        let vocab = build_vocab(texts.iter().map(String::as_str), &langs, 128).unwrap();
        for text in &texts {
            let ids = tokenize(text, &vocab);
            // Every word was in the vocabulary build set: no UNK, EOS terminal.
            prop_assert_eq!(*ids.last().unwrap(), EOS);
            prop_assert!(ids[..ids.len() - 1].iter().all(|&id| id >= RESERVED_TOKENS + langs.len()));
            let back = detokenize(&ids, &vocab);
            prop_assert_eq!(&back, text);
        }
    }

    #[test]
    fn batches_shift_targets_and_mask_padding(
        doc in sentence(5),
        summary in sentence(3),
        seed in 0u64..1000,
    ) {
        let langs = ["en".to_string(), "ru".to_string()];
        let corpus_text = format!("{doc} {summary}");
        let vocab = build_vocab([corpus_text.as_str()].into_iter(), &langs, 64).unwrap();
        let cfg = ModelConfig {
            d: 4, d_v: 4, d_c: 2, ffn: 8,
            n_enc: 1, n_dec: 1, n_vis: 1, heads: 2,
            vocab: vocab.size().max(16), m_max: 8, n_max: 5,
            n_images: 1, m_regions: 2, k_langs: 2,
            layer_order: Default::default(),
            activation: Default::default(),
        };
        let rec = SampleText {
            id: format!("s{seed}"),
            url: "u://x".into(),
            lang: "en".into(),
            doc: doc.clone(),
            summary: summary.clone(),
            aligned: BTreeMap::from([("ru".to_string(), doc.clone())]),
            vision_ref: "v0".into(),
        };
        let sample = Sample::from_text(&rec, &vocab, cfg.m_max, cfg.n_max).unwrap();
        let rows = cfg.vision_rows();
        let vision = BTreeMap::from([("v0".to_string(), VisionRecord {
            id: "v0".into(),
            n_images: cfg.n_images,
            m_regions: cfg.m_regions,
            d_v: cfg.d_v,
            features: vec![0.0; rows * cfg.d_v],
            boxes: vec![0.0; rows * 4],
            mask: vec![1; rows],
        })]);

        let batch = make_batch(&[&sample], ("ru", "en"), &vocab, &cfg, &vision).unwrap();
        let src = &batch.src_ids[0];
        let mask = &batch.src_mask[0];
        // Language tag leads, rows padded to config length.
        prop_assert_eq!(src.len(), cfg.m_max);
        prop_assert_eq!(src[0], vocab.lang_tag_id("en").unwrap());
        // Mask is 1 exactly on non-pad prefix; padding is PAD id.
        let real = mask.iter().filter(|&&m| m == 1).count();
        prop_assert!(real >= 2);
        for (i, (&id, &m)) in src.iter().zip(mask.iter()).enumerate() {
            if i < real {
                prop_assert_eq!(m, 1);
            } else {
                prop_assert_eq!(m, 0);
                prop_assert_eq!(id, PAD);
            }
        }
        // Teacher forcing: decoder input is begin-shifted gold.
        let tgt = &batch.tgt_ids[0];
        let dec = &batch.decoder_in[0];
        prop_assert_eq!(dec[0], BOS);
        for i in 1..dec.len() {
            prop_assert_eq!(dec[i], tgt[i - 1]);
        }
        // Gold ends with EOS at the last real position.
        let tlen = batch.tgt_mask[0].iter().filter(|&&m| m == 1).count();
        prop_assert_eq!(tgt[tlen - 1], EOS);
    }

    #[test]
    fn vision_file_roundtrips(
        n in 1usize..3,
        m in 1usize..4,
        d_v in 1usize..6,
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows = n * m;
        let rec = VisionRecord {
            id: format!("rec{seed}"),
            n_images: n,
            m_regions: m,
            d_v,
            features: (0..rows * d_v).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            boxes: (0..rows * 4).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
            mask: (0..rows).map(|_| rng.gen_range(0..2) as u8).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.m3sv");
        write_vision_file(&[rec.clone()], Path::new(&path)).unwrap();
        let back = read_vision_file(Path::new(&path)).unwrap();
        prop_assert_eq!(back.len(), 1);
        let got = back.get(&rec.id).unwrap();
        let feat_bits: Vec<u32> = got.features.iter().map(|x| x.to_bits()).collect();
        let want_bits: Vec<u32> = rec.features.iter().map(|x| x.to_bits()).collect();
        prop_assert_eq!(feat_bits, want_bits);
        prop_assert_eq!(&got.boxes, &rec.boxes);
        prop_assert_eq!(&got.mask, &rec.mask);
        prop_assert_eq!(got.d_v, d_v);
    }

    #[test]
    fn overlap_scores_stay_in_unit_interval(
        cand in proptest::collection::vec(0usize..6, 0..10),
        reference in proptest::collection::vec(0usize..6, 0..10),
    ) {
        for order in [1, 2] {
            let sc = rouge_n(&cand, &reference, order).unwrap();
            prop_assert!((0.0..=1.0).contains(&sc.p));
            prop_assert!((0.0..=1.0).contains(&sc.r));
            prop_assert!((0.0..=1.0).contains(&sc.f1));
            prop_assert!(sc.f1 <= sc.p.max(sc.r) + 1e-15);
        }
        let sc = rouge_l(&cand, &reference);
        prop_assert!((0.0..=1.0).contains(&sc.f1));
        // LCS of a sequence with itself is everything.
        let self_sc = rouge_l(&cand, &cand);
        if !cand.is_empty() {
            prop_assert_eq!(self_sc.f1, 1.0);
        }
    }

    #[test]
    fn annealed_weight_always_in_half_to_one(t in 0usize..100_000, t1 in 1usize..50_000) {
        let a = alpha_schedule(t, t1).unwrap();
        prop_assert!((0.5..=1.0).contains(&a));
        if t as f64 / t1 as f64 >= 0.5 {
            prop_assert_eq!(a, 0.5);
        }
    }
}
