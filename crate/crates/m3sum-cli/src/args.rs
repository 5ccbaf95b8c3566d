//! Shared flag handling: seeds, direction lists, beam settings, and the
//! conventional data-directory layout.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use m3sum::data::Vocab;
use m3sum::eval::BeamConfig;
use m3sum::model::ModelConfig;

/// Resolve a seed: explicit flag, else the `M3S_SEED` environment variable,
/// else the default.
pub fn resolve_seed(flag: Option<u64>, default: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("M3S_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map_err(|_| anyhow!("M3S_SEED = {v:?} is not an unsigned integer")),
        Err(_) => Ok(default),
    }
}

/// Parse `en-ru,ru-en`; `all` (or None) expands to the full grid over the
/// vocabulary's languages, monolingual directions included.
pub fn parse_directions(spec: Option<&str>, vocab: &Vocab) -> Result<Vec<(String, String)>> {
    let langs = vocab.langs();
    let spec = spec.unwrap_or("all");
    if spec == "all" {
        return Ok(langs
            .iter()
            .flat_map(|s| langs.iter().map(move |t| (s.clone(), t.clone())))
            .collect());
    }
    let mut out = Vec::new();
    for part in spec.split(',') {
        let (src, tgt) = part
            .split_once('-')
            .ok_or_else(|| anyhow!("direction {part:?} is not of the form src-tgt"))?;
        for lang in [src, tgt] {
            if !langs.iter().any(|l| l == lang) {
                bail!("direction {part:?}: language {lang:?} not in vocabulary ({langs:?})");
            }
        }
        out.push((src.to_string(), tgt.to_string()));
    }
    if out.is_empty() {
        bail!("empty direction list");
    }
    Ok(out)
}

#[derive(Debug, Args)]
pub struct BeamArgs {
    /// Beam size.
    #[arg(long, default_value_t = 4)]
    pub beam: usize,
    /// Length-penalty exponent.
    #[arg(long, default_value_t = 0.6)]
    pub gamma: f64,
    /// Generation length cap; defaults to the model's limit.
    #[arg(long)]
    pub max_len: Option<usize>,
}

impl BeamArgs {
    pub fn to_config(&self, model: &ModelConfig) -> BeamConfig {
        let mut bc = BeamConfig::for_model(model);
        bc.beam_size = self.beam;
        bc.gamma = self.gamma;
        if let Some(m) = self.max_len {
            bc.max_len = m;
        }
        bc
    }
}

/// Fixed file names inside a data directory, as written by `synth-data`
/// and `build-vocab`.
pub struct DataDir {
    pub train: PathBuf,
    pub test: PathBuf,
    pub vision: PathBuf,
    pub vocab: PathBuf,
}

impl DataDir {
    pub fn new(dir: &Path) -> Self {
        DataDir {
            train: dir.join("train.jsonl"),
            test: dir.join("test.jsonl"),
            vision: dir.join("vision.m3sv"),
            vocab: dir.join("vocab.txt"),
        }
    }

    pub fn require(&self, which: &[&str]) -> Result<()> {
        let lookup = [
            ("train", &self.train),
            ("test", &self.test),
            ("vision", &self.vision),
            ("vocab", &self.vocab),
        ];
        for name in which {
            let (_, path) = lookup
                .iter()
                .find(|(n, _)| n == name)
                .expect("known data file name");
            if !path.is_file() {
                bail!("data directory is missing {}", path.display());
            }
        }
        Ok(())
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
