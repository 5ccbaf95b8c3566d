//! Many-to-many multimodal summarization pipeline: synthesize aligned
//! corpora, build vocabularies, train, decode, and score.
//!
//! Every artifact-producing subcommand writes a `manifest-<command>.json`
//! next to its outputs recording the fully resolved settings. Exit code is
//! 0 only when all requested artifacts were fully written.

mod args;
mod cmd;
mod manifest;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "m3sum", version, about = "Many-to-many multimodal summarization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic aligned multilingual corpus with vision features.
    SynthData(cmd::synth::SynthArgs),
    /// Build a frequency-ranked vocabulary from corpus files.
    BuildVocab(cmd::vocab::VocabArgs),
    /// Train a model over a prepared data directory.
    Train(cmd::train::TrainArgs),
    /// Decode summaries from a checkpoint.
    Generate(cmd::generate::GenerateArgs),
    /// Decode and score the overlap grid.
    Evaluate(cmd::evaluate::EvaluateArgs),
    /// Print a checkpoint's header and tensor table.
    InspectCheckpoint(cmd::inspect::InspectArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SynthData(a) => cmd::synth::run(a),
        Command::BuildVocab(a) => cmd::vocab::run(a),
        Command::Train(a) => cmd::train::run(a),
        Command::Generate(a) => cmd::generate::run(a),
        Command::Evaluate(a) => cmd::evaluate::run(a),
        Command::InspectCheckpoint(a) => cmd::inspect::run(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
