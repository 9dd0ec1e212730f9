//! Shared fixtures and independent oracles for the integration suites.
//!
//! The oracles here re-derive expected values by brute force (path
//! enumeration, permutation sums) and must stay independent of the
//! library's own algorithms.

// Not every suite uses every helper.
#![allow(dead_code)]

use editloop_core::align::{Alignment, SimilarityProvider};
use editloop_core::doc::{Actor, Document, Edit, EditAction, EditOp, Word, DEFAULT_CAPACITY};
use editloop_core::env::PolicyState;
use editloop_core::policy::EditPolicy;
use itertools::Itertools;

pub fn doc(text: &str) -> Document {
    let toks: Vec<&str> = text.split_whitespace().collect();
    Document::from_tokens(toks, DEFAULT_CAPACITY).unwrap()
}

/// The bundled 50-sentence toy corpus, one goal per line.
pub fn toy_corpus() -> Vec<Document> {
    let text = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/toy_corpus.txt"));
    let tokenizer = editloop_core::doc::WhitespaceTokenizer;
    use editloop_core::doc::Tokenizer;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Document::from_tokens(tokenizer.tokenize(l), DEFAULT_CAPACITY).unwrap())
        .collect()
}

/// Word-level FNV-1a, for seedable deterministic pseudo-randomness that
/// does not depend on process-global hasher state.
pub fn fnv1a(parts: &[&str], seed: u64) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x100000001b3);
    for p in parts {
        for b in p.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0x1f;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Enumerable toy edit policy: every valid edit over a small vocabulary
/// gets a deterministic pseudo-random positive score, normalized together
/// with the stop action.
pub struct ToyEditPolicy {
    pub seed: u64,
    pub vocab: Vec<Word>,
}

impl ToyEditPolicy {
    pub fn new(seed: u64, vocab: &[&str]) -> ToyEditPolicy {
        ToyEditPolicy { seed, vocab: vocab.iter().map(|w| w.to_string()).collect() }
    }

    fn action_score(&self, d: &Document, action: &EditAction) -> f64 {
        let key = match action {
            EditAction::Stop => "stop".to_string(),
            EditAction::Edit(e) => format!("{}:{:?}:{}", e.location, e.op, e.word),
        };
        let doc_key = d.tokens().join(" ");
        let h = fnv1a(&[&doc_key, &key], self.seed);
        0.1 + (h % 1000) as f64 / 1000.0
    }

    pub fn valid_edits(&self, d: &Document) -> Vec<Edit> {
        let n = d.content_len();
        let mut out = Vec::new();
        for l in 1..=n + 1 {
            if n < d.capacity() {
                for w in &self.vocab {
                    out.push(Edit::ins(l, w.clone()));
                }
            }
            if l <= n {
                out.push(Edit::del(l));
                for w in &self.vocab {
                    out.push(Edit::sub(l, w.clone()));
                }
            }
        }
        out
    }

    fn partition(&self, d: &Document) -> f64 {
        let mut z = self.action_score(d, &EditAction::Stop);
        for e in self.valid_edits(d) {
            z += self.action_score(d, &EditAction::Edit(e));
        }
        z
    }
}

impl EditPolicy for ToyEditPolicy {
    fn stop_prob(&self, d: &Document, _s: &PolicyState) -> f64 {
        self.action_score(d, &EditAction::Stop) / self.partition(d)
    }

    fn edit_log_prob(&self, d: &Document, _s: &PolicyState, e: &Edit) -> f64 {
        let n = d.content_len();
        let valid = match e.op {
            EditOp::Ins => e.location >= 1 && e.location <= n + 1 && self.vocab.contains(&e.word),
            EditOp::Del => e.location >= 1 && e.location <= n,
            EditOp::Sub => e.location >= 1 && e.location <= n && self.vocab.contains(&e.word),
        };
        if !valid {
            return f64::MIN_POSITIVE.ln();
        }
        (self.action_score(d, &EditAction::Edit(e.clone())) / self.partition(d)).ln()
    }

    fn enumerate_edits(&self, d: &Document, _s: &PolicyState) -> Vec<(Edit, f64)> {
        let z = self.partition(d);
        self.valid_edits(d)
            .into_iter()
            .map(|e| {
                let p = self.action_score(d, &EditAction::Edit(e.clone())) / z;
                (e, p)
            })
            .collect()
    }
}

/// Exhaustive best monotonic alignment score: enumerates every pairing
/// path with an incremental score, no memoization.
pub fn brute_force_alignment_score(x: &Document, y: &Document, sim: &dyn SimilarityProvider) -> f64 {
    fn go(
        xs: &[Word],
        ys: &[Word],
        i: usize,
        j: usize,
        acc: f64,
        best: &mut f64,
        sim: &dyn SimilarityProvider,
        b: f64,
    ) {
        if i == xs.len() && j == ys.len() {
            if acc > *best {
                *best = acc;
            }
            return;
        }
        if i < xs.len() && j < ys.len() {
            let s = sim.score(&xs[i], &ys[j], xs, ys);
            go(xs, ys, i + 1, j + 1, acc + s, best, sim, b);
        }
        if i < xs.len() {
            go(xs, ys, i + 1, j, acc + b, best, sim, b);
        }
        if j < ys.len() {
            go(xs, ys, i, j + 1, acc + b, best, sim, b);
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(x.tokens(), y.tokens(), 0, 0, 0.0, &mut best, sim, sim.gap_baseline());
    best
}

/// Exact log of the restricted likelihood: the stop probability at the
/// goal times the product of edit probabilities, summed over all M!
/// permutation trajectories.
pub fn restricted_log_likelihood(
    policy: &dyn EditPolicy,
    state: &PolicyState,
    u_h: &Document,
    aln: &Alignment,
) -> f64 {
    let m = aln.edit_count();
    let mut total = 0.0f64;
    for sigma in (0..m).permutations(m) {
        let edits = aln.extract_edit_sequence(&sigma).unwrap();
        let mut prob = 1.0f64;
        let mut current = u_h.clone();
        for e in &edits {
            prob *= policy.edit_log_prob(&current, state, e).exp();
            current = current.apply(e, Actor::Agent).unwrap();
        }
        prob *= policy.stop_prob(&current, state);
        total += prob;
    }
    if m == 0 {
        total = policy.stop_prob(u_h, state);
    }
    total.ln()
}

/// Simple damaging agent for ledger tests: substitutes the first token
/// with a junk word each turn.
pub struct VandalAgent;

impl editloop_core::env::Agent for VandalAgent {
    fn name(&self) -> &str {
        "vandal"
    }

    fn act(
        &mut self,
        state: &PolicyState,
    ) -> Result<editloop_core::env::AgentTurn, String> {
        if state.u_cur.is_empty() {
            return Ok(editloop_core::env::AgentTurn::with_edits(state.u_cur.clone(), Vec::new()));
        }
        let edit = Edit::sub(1, "junk");
        let doc = state.u_cur.apply(&edit, Actor::Agent).map_err(|e| e.to_string())?;
        Ok(editloop_core::env::AgentTurn::with_edits(doc, vec![edit]))
    }
}
