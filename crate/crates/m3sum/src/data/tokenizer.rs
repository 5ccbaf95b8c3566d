//! Whitespace tokenizer over a frequency-ranked vocabulary.
//!
//! Id layout: 4 reserved ids (pad, begin, end, unknown), then one tag token
//! per language (rendered `<lang>`), then regular tokens. The vocab file
//! stores one entry per line starting at id 4, so the tag lines come first.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::data::{EOS, RESERVED_TOKENS, UNK};
use crate::error::{Error, Result};

/// Token-string to id mapping, including language tag tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    /// Entries at id `RESERVED_TOKENS + i`. The first `n_langs` are tags.
    items: Vec<String>,
    index: BTreeMap<String, usize>,
    n_langs: usize,
}

fn tag_surface(lang: &str) -> String {
    format!("<{lang}>")
}

impl Vocab {
    /// Build from language names (without brackets) and regular tokens,
    /// already ordered.
    pub fn new(langs: &[String], tokens: Vec<String>) -> Result<Self> {
        if langs.len() < 2 {
            return Err(Error::config("at least 2 languages required"));
        }
        let mut items = Vec::with_capacity(langs.len() + tokens.len());
        for lang in langs {
            if lang.is_empty() || lang.contains(['<', '>']) || lang.contains(char::is_whitespace) {
                return Err(Error::data(format!("invalid language name {lang:?}")));
            }
            items.push(tag_surface(lang));
        }
        items.extend(tokens);
        let mut index = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if index.insert(item.clone(), RESERVED_TOKENS + i).is_some() {
                return Err(Error::data(format!("duplicate vocab entry {item:?}")));
            }
        }
        Ok(Vocab { items, index, n_langs: langs.len() })
    }

    /// Total id space, reserved ids included.
    pub fn size(&self) -> usize {
        RESERVED_TOKENS + self.items.len()
    }

    pub fn n_langs(&self) -> usize {
        self.n_langs
    }

    /// Language names in id order, without brackets.
    pub fn langs(&self) -> Vec<String> {
        self.items[..self.n_langs]
            .iter()
            .map(|t| t[1..t.len() - 1].to_string())
            .collect()
    }

    /// Id for a surface token; unknown tokens map to the unknown id.
    pub fn token_id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Id of a language's tag token.
    pub fn lang_tag_id(&self, lang: &str) -> Result<usize> {
        let tag = tag_surface(lang);
        match self.index.get(&tag) {
            Some(&id) if id < RESERVED_TOKENS + self.n_langs => Ok(id),
            _ => Err(Error::data(format!("language {lang:?} not in vocabulary"))),
        }
    }

    /// Index of a language within the tag block (0-based).
    pub fn lang_index(&self, lang: &str) -> Result<usize> {
        Ok(self.lang_tag_id(lang)? - RESERVED_TOKENS)
    }

    /// Surface form for an id; reserved ids have none.
    pub fn surface(&self, id: usize) -> Option<&str> {
        if id < RESERVED_TOKENS {
            return None;
        }
        self.items.get(id - RESERVED_TOKENS).map(|s| s.as_str())
    }

    /// One entry per line, id = line index + 4.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(item);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Inverse of [`Vocab::write`]; leading `<...>` lines are language tags.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut langs = Vec::new();
        let mut tokens = Vec::new();
        let mut in_tags = true;
        for line in text.lines() {
            if line.is_empty() {
                return Err(Error::format("empty line in vocab file"));
            }
            let is_tag = line.len() > 2 && line.starts_with('<') && line.ends_with('>');
            if in_tags && is_tag {
                langs.push(line[1..line.len() - 1].to_string());
            } else {
                in_tags = false;
                tokens.push(line.to_string());
            }
        }
        Vocab::new(&langs, tokens)
    }
}

/// Lowercase, split on whitespace, map through the vocabulary, append the
/// end token. Empty text yields just the end token.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<usize> {
    let lower = text.to_lowercase();
    let mut ids: Vec<usize> = lower.split_whitespace().map(|t| vocab.token_id(t)).collect();
    ids.push(EOS);
    ids
}

/// Render ids back to text. Stops at the end token; skips padding and the
/// begin token; unknown ids render as `<unk>`.
pub fn detokenize(ids: &[usize], vocab: &Vocab) -> String {
    let mut words = Vec::new();
    for &id in ids {
        match id {
            crate::data::PAD | crate::data::BOS => continue,
            EOS => break,
            UNK => words.push("<unk>"),
            _ => match vocab.surface(id) {
                Some(s) => words.push(s),
                None => words.push("<unk>"),
            },
        }
    }
    words.join(" ")
}

/// Frequency-ranked vocabulary over whitespace-lowercased texts, ties broken
/// lexicographically. `max_size` bounds the total id space; overflow tokens
/// fall back to the unknown id at tokenization time.
pub fn build_vocab<'a>(
    texts: impl Iterator<Item = &'a str>,
    langs: &[String],
    max_size: usize,
) -> Result<Vocab> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut saw_any = false;
    for text in texts {
        saw_any = true;
        for tok in text.to_lowercase().split_whitespace() {
            *counts.entry(tok.to_string()).or_insert(0) += 1;
        }
    }
    if !saw_any {
        return Err(Error::data("cannot build vocabulary from an empty corpus"));
    }
    let reserved = RESERVED_TOKENS + langs.len();
    if max_size <= reserved {
        return Err(Error::config(format!(
            "max_size {max_size} leaves no room after {reserved} reserved ids"
        )));
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    // Descending frequency, ascending token for ties.
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let keep = max_size - reserved;
    let tokens: Vec<String> = ranked.into_iter().take(keep).map(|(t, _)| t).collect();
    Vocab::new(langs, tokens)
}
