//! `generate`: decode summaries from a trained checkpoint for selected
//! directions and write one JSONL file per direction.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use m3sum::data::{detokenize, load_corpus, make_batch, read_vision_file, Sample, Vocab};
use m3sum::eval::generate;
use m3sum::train::load_checkpoint;

use crate::args::{ensure_dir, parse_directions, BeamArgs, DataDir};
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Trained checkpoint (model.m3ck or an interval checkpoint).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Data directory holding the corpus, vision features, and vocabulary.
    #[arg(long)]
    data: PathBuf,
    /// Which corpus file to decode.
    #[arg(long, default_value = "test")]
    split: String,
    /// Comma-separated src-tgt pairs, or "all" for the full grid.
    #[arg(long)]
    directions: Option<String>,
    #[command(flatten)]
    beam: BeamArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(serde::Serialize)]
struct GeneratedLine<'a> {
    id: &'a str,
    src: &'a str,
    tgt: &'a str,
    token_ids: &'a [usize],
    text: String,
    score: f64,
    finished: bool,
}

pub fn run(args: &GenerateArgs) -> Result<()> {
    let paths = DataDir::new(&args.data);
    paths.require(&["vision", "vocab"])?;
    let corpus_path = match args.split.as_str() {
        "train" => &paths.train,
        "test" => &paths.test,
        other => anyhow::bail!("--split {other:?} is neither \"train\" nor \"test\""),
    };
    if !corpus_path.is_file() {
        anyhow::bail!("data directory is missing {}", corpus_path.display());
    }

    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let model = &ckpt.header.model;
    let params = ckpt.params()?;

    let vocab = Vocab::read(&paths.vocab)?;
    if vocab.langs() != ckpt.header.langs {
        anyhow::bail!(
            "checkpoint was trained on languages {:?}, vocab.txt defines {:?}",
            ckpt.header.langs,
            vocab.langs()
        );
    }
    if vocab.size() != model.vocab {
        anyhow::bail!(
            "checkpoint expects vocab size {}, vocab.txt defines {}",
            model.vocab,
            vocab.size()
        );
    }
    let vision = read_vision_file(&paths.vision)?;
    let samples = load_corpus(corpus_path, &vocab, model.m_max, model.n_max)?;
    let directions = parse_directions(args.directions.as_deref(), &vocab)?;
    let bc = args.beam.to_config(model);

    ensure_dir(&args.out)?;
    let mut manifest = Manifest::new("generate");
    manifest.input("checkpoint", &args.checkpoint);
    manifest.input("data", &args.data);

    for (src, tgt) in &directions {
        let in_tgt: Vec<&Sample> = samples.iter().filter(|s| &s.lang == tgt).collect();
        if in_tgt.is_empty() {
            anyhow::bail!(
                "direction {src}->{tgt}: {} corpus has no samples in language {tgt}",
                args.split
            );
        }
        let batch = make_batch(&in_tgt, (src, tgt), &vocab, model, &vision)?;
        let mut lines = String::new();
        for i in 0..batch.len() {
            let out = generate(
                model,
                &params,
                &batch.src_ids[i],
                &batch.src_mask[i],
                &batch.vision[i],
                &bc,
            )?;
            let line = GeneratedLine {
                id: &in_tgt[i].id,
                src,
                tgt,
                token_ids: &out.tokens,
                text: detokenize(&out.tokens, &vocab),
                score: out.score,
                finished: out.finished,
            };
            lines.push_str(&serde_json::to_string(&line)?);
            lines.push('\n');
        }
        let path = args.out.join(format!("generated-{src}-{tgt}.jsonl"));
        fs::write(&path, lines).with_context(|| format!("writing {}", path.display()))?;
        println!("{src}->{tgt}: {} summaries -> {}", batch.len(), path.display());
        manifest.output(&path);
    }

    manifest.resolved(serde_json::json!({
        "split": args.split,
        "directions": directions,
        "beam_size": bc.beam_size,
        "gamma": bc.gamma,
        "max_len": bc.max_len,
    }))?;
    manifest.write(&args.out)?;
    Ok(())
}
