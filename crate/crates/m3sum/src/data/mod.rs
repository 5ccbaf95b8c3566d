//! Corpus schema, toy tokenizer, vision feature packing, batching, and the
//! deterministic synthetic corpus generator.

mod batch;
mod corpus;
mod synth;
mod tokenizer;
mod vision_io;

pub use batch::{make_batch, Batch};
pub use corpus::{load_corpus, read_corpus_text, write_corpus_text, Sample, SampleText};
pub use synth::{synth_corpus, SynthConfig, SynthOutput};
pub use tokenizer::{build_vocab, detokenize, tokenize, Vocab};
pub use vision_io::{read_vision_file, write_vision_file, VisionRecord};

/// Reserved token ids. Language tags follow immediately after these,
/// then regular vocabulary tokens.
pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED_TOKENS: usize = 4;
