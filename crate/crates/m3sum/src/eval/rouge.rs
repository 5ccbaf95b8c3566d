//! Overlap metrics over token-id sequences: clipped n-gram precision and
//! recall, and longest-common-subsequence variants. No stemming or stopword
//! handling; callers decide what a token is.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision, recall, F1 in [0,1]. `empty_reference` flags an undefined
/// recall (the reference produced no units of the requested order); all
/// values are reported as zero in that case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub empty_reference: bool,
}

impl RougeScore {
    fn from_counts(overlap: usize, n_cand: usize, n_ref: usize) -> RougeScore {
        if n_ref == 0 {
            return RougeScore { p: 0.0, r: 0.0, f1: 0.0, empty_reference: true };
        }
        let p = if n_cand == 0 { 0.0 } else { overlap as f64 / n_cand as f64 };
        let r = overlap as f64 / n_ref as f64;
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        RougeScore { p, r, f1, empty_reference: false }
    }
}

/// All three variants for one candidate/reference pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
}

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap, order 1 or 2.
pub fn rouge_n(cand: &[usize], reference: &[usize], order: usize) -> Result<RougeScore> {
    if !(order == 1 || order == 2) {
        return Err(Error::config(format!("n-gram order {order} unsupported (1 or 2)")));
    }
    let c = ngram_counts(cand, order);
    let r = ngram_counts(reference, order);
    let overlap: usize =
        c.iter().map(|(gram, &cc)| cc.min(r.get(gram).copied().unwrap_or(0))).sum();
    let n_cand = cand.len().saturating_sub(order - 1);
    let n_ref = reference.len().saturating_sub(order - 1);
    Ok(RougeScore::from_counts(overlap, n_cand, n_ref))
}

fn lcs_len(a: &[usize], b: &[usize]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    // One-row DP over b.
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence overlap.
pub fn rouge_l(cand: &[usize], reference: &[usize]) -> RougeScore {
    let l = lcs_len(cand, reference);
    RougeScore::from_counts(l, cand.len(), reference.len())
}

/// R1, R2 and RL for one pair.
pub fn rouge_report(cand: &[usize], reference: &[usize]) -> Result<RougeReport> {
    Ok(RougeReport {
        r1: rouge_n(cand, reference, 1)?,
        r2: rouge_n(cand, reference, 2)?,
        rl: rouge_l(cand, reference),
    })
}
