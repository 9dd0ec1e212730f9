//! Text similarity metrics over content tokens: unigram BLEU, token F1,
//! and chrF. All values lie in [0, 1] and a document scores 1 against
//! itself.

use crate::doc::{Document, Word};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bleu1,
    TokenF1,
    Chrf,
}

impl Metric {
    pub fn compute(self, candidate: &Document, reference: &Document) -> f64 {
        match self {
            Metric::Bleu1 => bleu1(candidate, reference),
            Metric::TokenF1 => token_f1(candidate, reference),
            Metric::Chrf => chrf(candidate, reference),
        }
    }

    pub fn all() -> [Metric; 3] {
        [Metric::Bleu1, Metric::TokenF1, Metric::Chrf]
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu1 => "bleu1",
            Metric::TokenF1 => "token_f1",
            Metric::Chrf => "chrf",
        }
    }
}

fn counts(tokens: &[Word]) -> BTreeMap<&Word, usize> {
    let mut map = BTreeMap::new();
    for t in tokens {
        *map.entry(t).or_insert(0) += 1;
    }
    map
}

fn clipped_overlap(c: &BTreeMap<&Word, usize>, r: &BTreeMap<&Word, usize>) -> usize {
    c.iter().map(|(w, &n)| n.min(r.get(*w).copied().unwrap_or(0))).sum()
}

/// Unigram precision/recall harmonic mean over content-token multisets.
/// Two empty documents count as identical.
pub fn token_f1(candidate: &Document, reference: &Document) -> f64 {
    if candidate.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let c = counts(candidate.tokens());
    let r = counts(reference.tokens());
    let overlap = clipped_overlap(&c, &r) as f64;
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / candidate.content_len() as f64;
    let q = overlap / reference.content_len() as f64;
    2.0 * p * q / (p + q)
}

/// Unigram BLEU: clipped precision with the standard brevity penalty.
pub fn bleu1(candidate: &Document, reference: &Document) -> f64 {
    if candidate.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let c_len = candidate.content_len() as f64;
    let r_len = reference.content_len() as f64;
    let c = counts(candidate.tokens());
    let r = counts(reference.tokens());
    let precision = clipped_overlap(&c, &r) as f64 / c_len;
    let brevity = if c_len >= r_len { 1.0 } else { (1.0 - r_len / c_len).exp() };
    precision * brevity
}

const CHRF_MAX_ORDER: usize = 6;
const CHRF_BETA: f64 = 2.0;

fn char_ngrams(chars: &[char], n: usize) -> BTreeMap<String, usize> {
    let mut map = BTreeMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *map.entry(w.iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    map
}

/// chrF with character n-grams up to order 6 and beta = 2 (recall
/// weighted). Tokens are concatenated without separators, so the metric
/// is insensitive to spacing.
pub fn chrf(candidate: &Document, reference: &Document) -> f64 {
    if candidate.is_empty() && reference.is_empty() {
        return 1.0;
    }
    let c_chars: Vec<char> = candidate.tokens().join("").chars().collect();
    let r_chars: Vec<char> = reference.tokens().join("").chars().collect();
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=CHRF_MAX_ORDER {
        let c = char_ngrams(&c_chars, n);
        let r = char_ngrams(&r_chars, n);
        let c_total: usize = c.values().sum();
        let r_total: usize = r.values().sum();
        if c_total == 0 && r_total == 0 {
            // Neither side has n-grams of this order; skip it rather than
            // punishing short strings.
            continue;
        }
        orders += 1;
        let overlap: usize = c
            .iter()
            .map(|(g, &cnt)| cnt.min(r.get(g).copied().unwrap_or(0)))
            .sum();
        if c_total > 0 {
            p_sum += overlap as f64 / c_total as f64;
        }
        if r_total > 0 {
            r_sum += overlap as f64 / r_total as f64;
        }
    }
    if orders == 0 {
        return 0.0;
    }
    let p = p_sum / orders as f64;
    let r = r_sum / orders as f64;
    if p == 0.0 && r == 0.0 {
        return 0.0;
    }
    let b2 = CHRF_BETA * CHRF_BETA;
    (1.0 + b2) * p * r / (b2 * p + r)
}
