//! `inspect-checkpoint`: print a checkpoint's header and tensor table
//! without loading the model. Read-only; writes no manifest.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use m3sum::train::load_checkpoint;

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint file to describe.
    pub checkpoint: PathBuf,
}

pub fn run(args: &InspectArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;

    println!("{}", serde_json::to_string_pretty(&ckpt.header)?);
    println!();

    let mut total = 0usize;
    let mut count = 0usize;
    let name_width = ckpt.tensors().map(|(n, _)| n.len()).max().unwrap_or(4).max(4);
    println!("{:<name_width$}  shape", "name");
    for (name, t) in ckpt.tensors() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        println!("{name:<name_width$}  [{}]", dims.join(", "));
        total += t.numel();
        count += 1;
    }
    println!();
    println!(
        "{count} tensors, {total} elements total, optimizer state: {}",
        if ckpt.has_optimizer_state() { "present" } else { "absent" }
    );
    Ok(())
}
