//! `synth-data`: generate an aligned multilingual corpus with vision
//! features and write the train/test/vision artifacts.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use m3sum::data::{synth_corpus, write_corpus_text, write_vision_file, SynthConfig};

use crate::args::{ensure_dir, resolve_seed, DataDir};
use crate::manifest::Manifest;

const DEFAULT_LANGS: [&str; 4] = ["en", "id", "ru", "ur"];

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus seed; falls back to M3S_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of languages, drawn from the default list (en, id, ru, ur).
    #[arg(long, default_value_t = 4)]
    langs: usize,
    /// Explicit comma-separated language names; overrides --langs.
    #[arg(long)]
    lang_names: Option<String>,
    /// Training articles per ordered direction pair.
    #[arg(long, default_value_t = 8)]
    per_pair: usize,
    /// Held-out articles per ordered direction pair.
    #[arg(long, default_value_t = 4)]
    test_count: usize,
    /// Latent token space size.
    #[arg(long, default_value_t = 24)]
    latent_vocab: usize,
    /// Document length range, inclusive, as MIN:MAX latent tokens.
    #[arg(long, default_value = "6:10")]
    doc_len: String,
    /// Summary length range, inclusive, as MIN:MAX latent tokens.
    #[arg(long, default_value = "2:3")]
    sum_len: String,
    #[arg(long, default_value_t = 2)]
    images: usize,
    #[arg(long, default_value_t = 3)]
    regions: usize,
    /// Region feature width.
    #[arg(long, default_value_t = 12)]
    d_v: usize,
    /// Feature noise sigma.
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once(':')
        .with_context(|| format!("range {s:?} is not of the form MIN:MAX"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let langs: Vec<String> = match &args.lang_names {
        Some(names) => names.split(',').map(|s| s.trim().to_string()).collect(),
        None => {
            if args.langs > DEFAULT_LANGS.len() {
                bail!(
                    "--langs {} exceeds the {} built-in names; pass --lang-names",
                    args.langs,
                    DEFAULT_LANGS.len()
                );
            }
            DEFAULT_LANGS[..args.langs].iter().map(|s| s.to_string()).collect()
        }
    };
    if langs.len() < 2 {
        bail!("at least 2 languages required, got {}", langs.len());
    }

    let cfg = SynthConfig {
        seed: resolve_seed(args.seed, 0)?,
        langs,
        articles_train: args.per_pair,
        articles_test: args.test_count,
        latent_vocab: args.latent_vocab,
        doc_len: parse_range(&args.doc_len)?,
        sum_len: parse_range(&args.sum_len)?,
        n_images: args.images,
        m_regions: args.regions,
        d_v: args.d_v,
        noise: args.noise,
    };
    let out = synth_corpus(&cfg)?;

    ensure_dir(&args.out)?;
    let paths = DataDir::new(&args.out);
    write_corpus_text(&out.train, &paths.train)?;
    write_corpus_text(&out.test, &paths.test)?;
    write_vision_file(&out.vision, &paths.vision)?;

    let k = cfg.langs.len();
    for src in &cfg.langs {
        for tgt in &cfg.langs {
            if src != tgt {
                println!("{src}->{tgt}: {} train, {} test", cfg.articles_train, cfg.articles_test);
            }
        }
    }
    println!(
        "wrote {} ({} records), {} ({} records), {} ({} vision records) for {k} languages",
        paths.train.display(),
        out.train.len(),
        paths.test.display(),
        out.test.len(),
        paths.vision.display(),
        out.vision.len(),
    );

    let mut manifest = Manifest::new("synth-data");
    manifest.resolved(serde_json::json!({
        "seed": cfg.seed,
        "langs": cfg.langs,
        "articles_train": cfg.articles_train,
        "articles_test": cfg.articles_test,
        "latent_vocab": cfg.latent_vocab,
        "doc_len": cfg.doc_len,
        "sum_len": cfg.sum_len,
        "n_images": cfg.n_images,
        "m_regions": cfg.m_regions,
        "d_v": cfg.d_v,
        "noise": cfg.noise,
    }))?;
    manifest.output(&paths.train);
    manifest.output(&paths.test);
    manifest.output(&paths.vision);
    manifest.write(&args.out)?;
    Ok(())
}
