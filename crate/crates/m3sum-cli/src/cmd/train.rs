//! `train`: run the optimization loop over a prepared data directory,
//! writing interval checkpoints, a metrics log, and the final model.
//!
//! Settings resolve in three layers: a resume checkpoint's header (or a
//! JSON config file) supplies the base, then individual flags override.
//! The seed additionally falls back to `M3S_SEED` when neither a flag nor
//! a file pins it.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use m3sum::data::{load_corpus, read_corpus_text, read_vision_file, Vocab};
use m3sum::model::{init_params, ModelConfig};
use m3sum::objectives::KdMode;
use m3sum::train::{
    load_checkpoint, save_checkpoint, train_loop, Adam, Checkpoint, CheckpointHeader,
    TrainConfig, TrainInputs, CHECKPOINT_VERSION,
};

use crate::args::{ensure_dir, resolve_seed, DataDir};
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Data directory holding train.jsonl, vision.m3sv, and vocab.txt.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for model.m3ck, checkpoints/, and metrics.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with optional "model" and "train" sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint; its header replaces --config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Seed override; M3S_SEED applies when neither this nor a file sets one.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Distillation annealing horizon in steps.
    #[arg(long)]
    t1: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Label smoothing rate.
    #[arg(long)]
    smoothing: Option<f64>,
    /// Contrastive term weight; 0 disables the term.
    #[arg(long)]
    beta: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Steps between metric lines and interval checkpoints.
    #[arg(long)]
    eval_interval: Option<usize>,
    /// Distillation distance: cosine or kl.
    #[arg(long)]
    kd_mode: Option<String>,
    /// Pin the distillation weight instead of annealing (ablations).
    #[arg(long)]
    fixed_alpha: Option<f64>,
    /// Global gradient-norm ceiling.
    #[arg(long)]
    max_grad_norm: Option<f64>,
}

/// Optional sections of a config file; missing fields inside a section
/// take the type's defaults.
#[derive(Debug, serde::Deserialize)]
struct ConfigFile {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
}

fn parse_kd_mode(s: &str) -> Result<KdMode> {
    match s {
        "cosine" => Ok(KdMode::Cosine),
        "kl" => Ok(KdMode::Kl),
        other => bail!("--kd-mode {other:?} is neither \"cosine\" nor \"kl\""),
    }
}

/// Read the config file and remember whether it pins the seed explicitly.
fn read_config(path: &Path) -> Result<(ConfigFile, bool)> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {} as JSON", path.display()))?;
    let has_seed = raw.get("train").and_then(|t| t.get("seed")).is_some();
    let file: ConfigFile = serde_json::from_value(raw)
        .with_context(|| format!("interpreting config {}", path.display()))?;
    Ok((file, has_seed))
}

/// Survey the vision file: all records must agree on the grid geometry.
fn vision_geometry(
    vision: &std::collections::BTreeMap<String, m3sum::data::VisionRecord>,
) -> Result<(usize, usize, usize)> {
    let mut it = vision.values();
    let first = it.next().context("vision file holds no records")?;
    let geo = (first.n_images, first.m_regions, first.d_v);
    for rec in it {
        if (rec.n_images, rec.m_regions, rec.d_v) != geo {
            bail!(
                "vision record {} has grid {}x{}x{}, record {} has {}x{}x{}",
                rec.id,
                rec.n_images,
                rec.m_regions,
                rec.d_v,
                first.id,
                geo.0,
                geo.1,
                geo.2
            );
        }
    }
    Ok(geo)
}

/// Smallest model that covers the data: text widths from the corpus,
/// vision grid from the feature file, vocabulary sizes from the vocab.
fn derive_model(
    vocab: &Vocab,
    texts: &[m3sum::data::SampleText],
    geo: (usize, usize, usize),
) -> Result<ModelConfig> {
    let words = |s: &str| s.split_whitespace().count();
    let mut max_doc = 0usize;
    let mut max_sum = 0usize;
    for rec in texts {
        max_doc = max_doc.max(words(&rec.doc));
        for t in rec.aligned.values() {
            max_doc = max_doc.max(words(t));
        }
        max_sum = max_sum.max(words(&rec.summary));
    }
    let (n_images, m_regions, d_v) = geo;
    let heads = [4usize, 2, 1]
        .into_iter()
        .find(|h| d_v % h == 0)
        .expect("1 divides everything");
    let cfg = ModelConfig {
        d: 32,
        d_v,
        d_c: 16,
        ffn: 64,
        n_enc: 2,
        n_dec: 2,
        n_vis: 1,
        heads,
        vocab: vocab.size(),
        // Tag plus tokens plus end marker; the end marker is one token.
        m_max: max_doc + 2,
        n_max: max_sum + 1,
        n_images,
        m_regions,
        k_langs: vocab.n_langs(),
        layer_order: Default::default(),
        activation: Default::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Cross-check a configured model against what the data actually needs.
fn check_model_fits_data(
    cfg: &ModelConfig,
    vocab: &Vocab,
    geo: (usize, usize, usize),
) -> Result<()> {
    if cfg.vocab != vocab.size() {
        bail!(
            "model expects vocab size {}, vocab.txt defines {}",
            cfg.vocab,
            vocab.size()
        );
    }
    if cfg.k_langs != vocab.n_langs() {
        bail!(
            "model expects {} languages, vocab.txt defines {} ({:?})",
            cfg.k_langs,
            vocab.n_langs(),
            vocab.langs()
        );
    }
    let (n_images, m_regions, d_v) = geo;
    if (cfg.n_images, cfg.m_regions, cfg.d_v) != (n_images, m_regions, d_v) {
        bail!(
            "model expects vision grid {}x{}x{} (images x regions x d_v), \
             vision.m3sv holds {}x{}x{}",
            cfg.n_images,
            cfg.m_regions,
            cfg.d_v,
            n_images,
            m_regions,
            d_v
        );
    }
    Ok(())
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let paths = DataDir::new(&args.data);
    paths.require(&["train", "vision", "vocab"])?;
    let vocab = Vocab::read(&paths.vocab)?;
    let vision = read_vision_file(&paths.vision)?;
    let geo = vision_geometry(&vision)?;
    let texts = read_corpus_text(&paths.train)?;

    // Base settings: resume header beats config file beats defaults.
    let resumed = match &args.resume {
        Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    if resumed.is_some() && args.config.is_some() {
        bail!("--resume carries its own configuration; drop --config");
    }
    let file = match &args.config {
        Some(p) => Some(read_config(p)?),
        None => None,
    };

    let (model, mut tc, start_step, seed_pinned) = match &resumed {
        Some(ckpt) => {
            let h = &ckpt.header;
            if h.langs != vocab.langs() {
                bail!(
                    "checkpoint was trained on languages {:?}, vocab.txt defines {:?}",
                    h.langs,
                    vocab.langs()
                );
            }
            (h.model.clone(), h.train.clone(), h.step, true)
        }
        None => {
            let (model, train, has_seed) = match &file {
                Some((cf, has_seed)) => (cf.model.clone(), cf.train.clone(), *has_seed),
                None => (None, None, false),
            };
            let model = match model {
                Some(m) => {
                    m.validate()?;
                    m
                }
                None => derive_model(&vocab, &texts, geo)?,
            };
            (model, train.unwrap_or_default(), 0, has_seed)
        }
    };
    check_model_fits_data(&model, &vocab, geo)?;

    tc.seed = if seed_pinned {
        args.seed.unwrap_or(tc.seed)
    } else {
        resolve_seed(args.seed, tc.seed)?
    };
    macro_rules! override_field {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { tc.$field = v; })*
        };
    }
    override_field!(max_steps, batch_size, lr, t1, warmup, smoothing, beta, tau, eval_interval);
    if let Some(m) = &args.kd_mode {
        tc.kd_mode = parse_kd_mode(m)?;
    }
    if let Some(a) = args.fixed_alpha {
        tc.fixed_alpha = Some(a);
    }
    if let Some(n) = args.max_grad_norm {
        tc.max_grad_norm = Some(n);
    }
    tc.validate()?;
    if start_step > tc.max_steps {
        bail!(
            "checkpoint has completed {start_step} steps, max_steps is {}; \
             raise --max-steps to continue",
            tc.max_steps
        );
    }

    let samples = load_corpus(&paths.train, &vocab, model.m_max, model.n_max)?;
    let langs = vocab.langs();

    let (mut params, mut adam) = match &resumed {
        Some(ckpt) => {
            let params = ckpt.params()?;
            let adam = ckpt
                .adam()?
                .context("checkpoint has no optimizer state; cannot resume training from it")?;
            (params, adam)
        }
        None => {
            let params = init_params(&model, tc.seed)?;
            let adam = Adam::new(&tc, &params);
            (params, adam)
        }
    };

    ensure_dir(&args.out)?;
    let ckpt_dir = args.out.join("checkpoints");
    ensure_dir(&ckpt_dir)?;
    let metrics_path = args.out.join("metrics.jsonl");
    let mut metrics_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .with_context(|| format!("opening {}", metrics_path.display()))?;

    let inputs = TrainInputs {
        model: &model,
        train: &tc,
        vocab: &vocab,
        samples: &samples,
        vision: &vision,
        langs: &langs,
    };
    println!(
        "training {} -> {} steps, {} samples, {} languages, {} parameters",
        start_step,
        tc.max_steps,
        samples.len(),
        langs.len(),
        params.total_elems()
    );

    let mut interval_paths: Vec<PathBuf> = Vec::new();
    {
        let header_for = |step: usize| CheckpointHeader {
            version: CHECKPOINT_VERSION,
            model: model.clone(),
            train: tc.clone(),
            step,
            langs: langs.clone(),
        };
        let run_result = train_loop(&inputs, &mut params, &mut adam, start_step, |m, p, a| {
            let done = m.step + 1;
            if done % tc.eval_interval == 0 || done == tc.max_steps {
                let line = serde_json::to_string(m).map_err(|e| {
                    m3sum::error::Error::format(format!("metrics serialization: {e}"))
                })?;
                writeln!(metrics_file, "{line}").map_err(|e| {
                    m3sum::error::Error::format(format!("writing metrics log: {e}"))
                })?;
                let path = ckpt_dir.join(format!("step-{done:06}.m3ck"));
                let ckpt = Checkpoint::build(header_for(done), p, Some(a))?;
                save_checkpoint(&ckpt, &path)?;
                interval_paths.push(path);
                println!(
                    "step {done}/{}: joint {:.4} ({} -> {}, alpha {:.3}, lr {:.2e})",
                    tc.max_steps, m.loss.joint, m.src_lang, m.tgt_lang, m.alpha, m.lr
                );
            }
            Ok(())
        });
        run_result.context("training aborted")?;
    }

    let final_path = args.out.join("model.m3ck");
    let final_header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
        train: tc.clone(),
        step: tc.max_steps,
        langs: langs.clone(),
    };
    let final_ckpt = Checkpoint::build(final_header, &params, Some(&adam))?;
    save_checkpoint(&final_ckpt, &final_path)?;
    println!("wrote {}", final_path.display());

    let mut manifest = Manifest::new("train");
    manifest.input("data", &args.data);
    if let Some(p) = &args.config {
        manifest.input("config", p);
    }
    if let Some(p) = &args.resume {
        manifest.input("resume", p);
    }
    manifest.resolved(serde_json::json!({
        "model": model,
        "train": tc,
        "langs": langs,
        "start_step": start_step,
    }))?;
    manifest.output(&final_path);
    manifest.output(&metrics_path);
    for p in &interval_paths {
        manifest.output(p);
    }
    manifest.write(&args.out)?;
    Ok(())
}
