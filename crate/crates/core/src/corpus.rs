//! Corpus ingestion: one sentence per line, tokenized, length filtered,
//! deduplicated, and split train/valid/test by a seeded content hash so
//! the split is stable across runs and machines.

use crate::doc::{Document, Tokenizer, WhitespaceTokenizer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Keep sentences with fewer than this many tokens.
    pub max_tokens: usize,
    pub seed: u64,
    /// Train/valid/test percentages, summing to 100.
    pub proportions: (u8, u8, u8),
}

impl Default for IngestConfig {
    fn default() -> IngestConfig {
        IngestConfig { max_tokens: 64, seed: 0, proportions: (90, 5, 5) }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    FileUnreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no sentences left after filtering")]
    EmptyAfterFilter,
    #[error("split proportions must sum to 100")]
    BadProportions,
}

/// The ingested corpus. Documents carry the configured capacity (equal
/// to `max_tokens`).
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Document>,
    pub valid: Vec<Document>,
    pub test: Vec<Document>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Document> {
        self.train.iter().chain(self.valid.iter()).chain(self.test.iter())
    }

    /// The split manifest: token strings per split, serialized as JSON.
    pub fn manifest(&self) -> Manifest {
        let render = |docs: &[Document]| docs.iter().map(|d| d.to_string()).collect();
        Manifest { train: render(&self.train), valid: render(&self.valid), test: render(&self.test) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

pub fn ingest_corpus(path: &Path, cfg: &IngestConfig) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::FileUnreadable {
        path: path.display().to_string(),
        source,
    })?;
    ingest_text(&text, cfg)
}

pub fn ingest_text(text: &str, cfg: &IngestConfig) -> Result<Corpus, CorpusError> {
    let (p_train, p_valid, p_test) = cfg.proportions;
    if p_train as u32 + p_valid as u32 + p_test as u32 != 100 {
        return Err(CorpusError::BadProportions);
    }
    let tokenizer = WhitespaceTokenizer;
    let mut seen = std::collections::BTreeSet::new();
    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for line in text.lines() {
        let tokens = tokenizer.tokenize(line);
        if tokens.is_empty() || tokens.len() >= cfg.max_tokens {
            continue;
        }
        let key = tokens.join(" ");
        if !seen.insert(key.clone()) {
            continue;
        }
        let doc = Document::from_tokens(tokens, cfg.max_tokens).expect("filtered to capacity");
        match split_bucket(&key, cfg.seed) {
            b if b < p_train as u64 => train.push(doc),
            b if b < (p_train + p_valid) as u64 => valid.push(doc),
            _ => test.push(doc),
        }
    }
    let corpus = Corpus { train, valid, test };
    if corpus.is_empty() {
        return Err(CorpusError::EmptyAfterFilter);
    }
    Ok(corpus)
}

/// Stable bucket in [0, 100) from the sentence content and the seed.
fn split_bucket(key: &str, seed: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes")) % 100
}
