//! `build-vocab`: frequency-ranked vocabulary over corpus text, language
//! tags first.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use m3sum::data::{build_vocab, read_corpus_text};

use crate::args::ensure_dir;
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct VocabArgs {
    /// Corpus files (JSON lines); repeatable.
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    /// Total id budget including reserved ids and language tags.
    #[arg(long, default_value_t = 4096)]
    max_size: usize,
    /// Output directory; the vocabulary lands in vocab.txt.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &VocabArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.corpus {
        records.extend(read_corpus_text(path)?);
    }
    // Languages: every sample language plus every alignment key, in
    // lexicographic order (which fixes tag ids).
    let langs: BTreeSet<String> = records
        .iter()
        .flat_map(|r| {
            std::iter::once(r.lang.clone()).chain(r.aligned.keys().cloned())
        })
        .collect();
    let langs: Vec<String> = langs.into_iter().collect();

    let texts = records
        .iter()
        .flat_map(|r| {
            std::iter::once(r.doc.as_str())
                .chain(std::iter::once(r.summary.as_str()))
                .chain(r.aligned.values().map(String::as_str))
        });
    let vocab = build_vocab(texts, &langs, args.max_size)?;

    ensure_dir(&args.out)?;
    let out_path = args.out.join("vocab.txt");
    vocab.write(&out_path)?;
    println!(
        "wrote {} ({} ids: {} reserved + {} language tags + {} tokens)",
        out_path.display(),
        vocab.size(),
        m3sum::data::RESERVED_TOKENS,
        vocab.n_langs(),
        vocab.size() - m3sum::data::RESERVED_TOKENS - vocab.n_langs(),
    );

    let mut manifest = Manifest::new("build-vocab");
    for (i, p) in args.corpus.iter().enumerate() {
        manifest.input(&format!("corpus.{i}"), p);
    }
    manifest.resolved(serde_json::json!({
        "max_size": args.max_size,
        "langs": langs,
        "vocab_size": vocab.size(),
    }))?;
    manifest.output(&out_path);
    manifest.write(&args.out)?;
    Ok(())
}
