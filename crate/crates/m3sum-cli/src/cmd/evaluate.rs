//! `evaluate`: decode and score the overlap grid for selected directions,
//! writing a rendered table and a machine-readable cell-per-line record.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use m3sum::data::{load_corpus, read_vision_file, Vocab};
use m3sum::eval::{eval_grid, render_grid_table, EvalSpec};
use m3sum::train::load_checkpoint;

use crate::args::{ensure_dir, parse_directions, BeamArgs, DataDir};
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Trained checkpoint (model.m3ck or an interval checkpoint).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Data directory holding the corpus, vision features, and vocabulary.
    #[arg(long)]
    data: PathBuf,
    /// Which corpus file to score.
    #[arg(long, default_value = "test")]
    split: String,
    /// Comma-separated src-tgt pairs; defaults to the full grid.
    #[arg(long)]
    directions: Option<String>,
    #[command(flatten)]
    beam: BeamArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
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
    let vision = read_vision_file(&paths.vision)?;
    let samples = load_corpus(corpus_path, &vocab, model.m_max, model.n_max)?;
    let directions = parse_directions(args.directions.as_deref(), &vocab)?;
    let bc = args.beam.to_config(model);

    let spec = EvalSpec {
        model,
        params: &params,
        beam: &bc,
        vocab: &vocab,
        samples: &samples,
        vision: &vision,
    };
    let grid = eval_grid(&spec, &directions)?;
    let table = render_grid_table(&grid);
    print!("{table}");

    ensure_dir(&args.out)?;
    let table_path = args.out.join("grid.txt");
    fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;

    let cells_path = args.out.join("grid.jsonl");
    let mut lines = String::new();
    for cell in &grid.cells {
        lines.push_str(&serde_json::to_string(cell)?);
        lines.push('\n');
    }
    fs::write(&cells_path, lines).with_context(|| format!("writing {}", cells_path.display()))?;

    let mut manifest = Manifest::new("evaluate");
    manifest.input("checkpoint", &args.checkpoint);
    manifest.input("data", &args.data);
    manifest.resolved(serde_json::json!({
        "split": args.split,
        "directions": directions,
        "beam_size": bc.beam_size,
        "gamma": bc.gamma,
        "max_len": bc.max_len,
    }))?;
    manifest.output(&table_path);
    manifest.output(&cells_path);
    manifest.write(&args.out)?;
    Ok(())
}
