//! Corpus records: JSON, one record per line, UTF-8. Articles in different
//! languages are aligned by URL and share one vision record.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{tokenize, Vocab, EOS};
use crate::error::{Error, Result};

/// On-disk record, text form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleText {
    pub id: String,
    pub url: String,
    pub lang: String,
    pub doc: String,
    pub summary: String,
    /// lang -> doc text of the same article in that language.
    pub aligned: BTreeMap<String, String>,
    /// Key into the vision feature file.
    pub vision_ref: String,
}

/// In-memory record, tokenized. `doc` fits `m_max - 1` ids (one slot is
/// reserved for the language tag); `summary` fits `n_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub url: String,
    pub lang: String,
    pub doc: Vec<usize>,
    pub summary: Vec<usize>,
    pub aligned: BTreeMap<String, Vec<usize>>,
    pub vision_ref: String,
}

/// Head-truncate to `limit`, keeping the end token terminal.
fn truncate_ids(mut ids: Vec<usize>, limit: usize) -> Vec<usize> {
    if ids.len() > limit {
        ids.truncate(limit);
        *ids.last_mut().expect("limit >= 1") = EOS;
    }
    ids
}

impl Sample {
    pub fn from_text(rec: &SampleText, vocab: &Vocab, m_max: usize, n_max: usize) -> Result<Self> {
        if m_max < 2 || n_max < 1 {
            return Err(Error::config("m_max must be >= 2 and n_max >= 1"));
        }
        vocab.lang_tag_id(&rec.lang)?;
        let doc_limit = m_max - 1;
        let doc = truncate_ids(tokenize(&rec.doc, vocab), doc_limit);
        let summary = truncate_ids(tokenize(&rec.summary, vocab), n_max);
        let mut aligned = BTreeMap::new();
        for (lang, text) in &rec.aligned {
            vocab.lang_tag_id(lang)?;
            aligned.insert(lang.clone(), truncate_ids(tokenize(text, vocab), doc_limit));
        }
        Ok(Sample {
            id: rec.id.clone(),
            url: rec.url.clone(),
            lang: rec.lang.clone(),
            doc,
            summary,
            aligned,
            vision_ref: rec.vision_ref.clone(),
        })
    }
}

/// Write records one JSON object per line.
pub fn write_corpus_text(records: &[SampleText], path: &Path) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).map_err(|e| Error::format(e.to_string()))?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read text records; malformed lines name their line number.
pub fn read_corpus_text(path: &Path) -> Result<Vec<SampleText>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleText = serde_json::from_str(line)
            .map_err(|e| Error::format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::data(format!("no records in {}", path.display())));
    }
    Ok(records)
}

/// Read and tokenize a corpus in one step.
pub fn load_corpus(path: &Path, vocab: &Vocab, m_max: usize, n_max: usize) -> Result<Vec<Sample>> {
    read_corpus_text(path)?
        .iter()
        .map(|rec| Sample::from_text(rec, vocab, m_max, n_max))
        .collect()
}
