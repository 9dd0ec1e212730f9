//! Agent policies: the goal-emitting expert, scripted baselines, and a
//! trainable log-linear edit policy factored into stop, location,
//! operation, and word heads.

use crate::align::{align, TrigramSimilarity};
use crate::doc::{Document, Edit, EditAction, EditOp, Mark, Word};
use crate::env::{Agent, AgentTurn, PolicyState};
use crate::user::IdfTable;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Distribution interface of an edit policy: a stop probability plus a
/// normalized distribution over single-word edits.
///
/// Invariant: stop_prob plus the sum of `enumerate_edits` probabilities
/// equals 1 within 1e-9.
pub trait EditPolicy: Send + Sync {
    fn stop_prob(&self, doc: &Document, state: &PolicyState) -> f64;

    /// Log-probability of one non-stop edit.
    fn edit_log_prob(&self, doc: &Document, state: &PolicyState, edit: &Edit) -> f64;

    /// Every non-stop edit with positive probability, in a deterministic
    /// order.
    fn enumerate_edits(&self, doc: &Document, state: &PolicyState) -> Vec<(Edit, f64)>;

    fn action_log_prob(&self, doc: &Document, state: &PolicyState, action: &EditAction) -> f64 {
        match action {
            EditAction::Stop => self.stop_prob(doc, state).max(f64::MIN_POSITIVE).ln(),
            EditAction::Edit(e) => self.edit_log_prob(doc, state, e),
        }
    }
}

impl<P: EditPolicy + ?Sized> EditPolicy for &P {
    fn stop_prob(&self, doc: &Document, state: &PolicyState) -> f64 {
        (**self).stop_prob(doc, state)
    }

    fn edit_log_prob(&self, doc: &Document, state: &PolicyState, edit: &Edit) -> f64 {
        (**self).edit_log_prob(doc, state, edit)
    }

    fn enumerate_edits(&self, doc: &Document, state: &PolicyState) -> Vec<(Edit, f64)> {
        (**self).enumerate_edits(doc, state)
    }
}

impl<P: EditPolicy + ?Sized> EditPolicy for std::sync::Arc<P> {
    fn stop_prob(&self, doc: &Document, state: &PolicyState) -> f64 {
        (**self).stop_prob(doc, state)
    }

    fn edit_log_prob(&self, doc: &Document, state: &PolicyState, edit: &Edit) -> f64 {
        (**self).edit_log_prob(doc, state, edit)
    }

    fn enumerate_edits(&self, doc: &Document, state: &PolicyState) -> Vec<(Edit, f64)> {
        (**self).enumerate_edits(doc, state)
    }
}

/// Training-time oracle: emits the goal document wholesale.
pub struct ExpertPolicy {
    goal: Document,
}

impl ExpertPolicy {
    pub fn new(goal: Document) -> ExpertPolicy {
        ExpertPolicy { goal }
    }
}

impl Agent for ExpertPolicy {
    fn name(&self) -> &str {
        "expert"
    }

    fn act(&mut self, _state: &PolicyState) -> Result<AgentTurn, String> {
        Ok(AgentTurn::draft_only(self.goal.clone()))
    }
}

/// Returns the incoming draft untouched. Useful as the no-interactivity
/// baseline: only user edits ever accumulate.
pub struct IdentityPolicy;

impl Agent for IdentityPolicy {
    fn name(&self) -> &str {
        "identity"
    }

    fn act(&mut self, state: &PolicyState) -> Result<AgentTurn, String> {
        Ok(AgentTurn::with_edits(state.u_cur.clone(), Vec::new()))
    }
}

/// Scripted near-expert: applies up to `edits_per_turn` goal-directed
/// edits per turn, leftmost first. Knows the goal but is rate limited,
/// so sessions do not saturate instantly.
pub struct ScriptedNearExpert {
    goal: Document,
    edits_per_turn: usize,
    sim: TrigramSimilarity,
}

impl ScriptedNearExpert {
    pub fn new(goal: Document, edits_per_turn: usize) -> ScriptedNearExpert {
        ScriptedNearExpert { goal, edits_per_turn: edits_per_turn.max(1), sim: TrigramSimilarity::new() }
    }
}

impl Agent for ScriptedNearExpert {
    fn name(&self) -> &str {
        "near-expert"
    }

    fn act(&mut self, state: &PolicyState) -> Result<AgentTurn, String> {
        let mut doc = state.u_cur.clone();
        let mut edits = Vec::new();
        for _ in 0..self.edits_per_turn {
            if doc.same_tokens(&self.goal) {
                break;
            }
            let aln = align(&doc, &self.goal, &self.sim);
            let Some(candidate) = aln.first_candidates().into_iter().next() else { break };
            doc = doc
                .apply(&candidate.edit, crate::doc::Actor::Agent)
                .map_err(|e| e.to_string())?;
            edits.push(candidate.edit);
        }
        Ok(AgentTurn::with_edits(doc, edits))
    }
}

/// Corpus statistics consumed by the log-linear feature map: vocabulary,
/// unigram frequency buckets, IDF buckets, and the adjacent-bigram set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    vocab: Vec<Word>,
    unigram: Vec<u64>,
    bigrams: BTreeSet<(u32, u32)>,
    idf: IdfTable,
    idf_edges: Vec<f64>,
    freq_edges: Vec<u64>,
    #[serde(skip, default)]
    idf_bucket_by_id: Vec<u8>,
    #[serde(skip, default)]
    freq_bucket_by_id: Vec<u8>,
    /// Bigram continuations by left id and predecessors by right id.
    #[serde(skip, default)]
    next_of: Vec<Vec<u32>>,
    #[serde(skip, default)]
    prev_of: Vec<Vec<u32>>,
}

impl CorpusStats {
    pub fn from_documents(docs: &[Document]) -> Option<CorpusStats> {
        if docs.is_empty() {
            return None;
        }
        let mut counts: BTreeMap<Word, u64> = BTreeMap::new();
        for d in docs {
            for t in d.tokens() {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let vocab: Vec<Word> = counts.keys().cloned().collect();
        let index: BTreeMap<&Word, u32> =
            vocab.iter().enumerate().map(|(i, w)| (w, i as u32)).collect();
        let unigram: Vec<u64> = vocab.iter().map(|w| counts[w]).collect();
        let mut bigrams = BTreeSet::new();
        for d in docs {
            for pair in d.tokens().windows(2) {
                bigrams.insert((index[&pair[0]], index[&pair[1]]));
            }
        }
        let idf = IdfTable::build(docs.iter()).ok()?;
        // Quantile edges over the vocabulary.
        let mut idfs: Vec<f64> = vocab.iter().map(|w| idf.idf(w)).collect();
        idfs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idf_edges = (1..IDF_BUCKETS)
            .map(|k| idfs[(k * idfs.len() / IDF_BUCKETS).min(idfs.len() - 1)])
            .collect();
        let mut freqs = unigram.clone();
        freqs.sort_unstable();
        let freq_edges = (1..FREQ_BUCKETS)
            .map(|k| freqs[(k * freqs.len() / FREQ_BUCKETS).min(freqs.len() - 1)])
            .collect();
        let mut stats = CorpusStats {
            vocab,
            unigram,
            bigrams,
            idf,
            idf_edges,
            freq_edges,
            idf_bucket_by_id: Vec::new(),
            freq_bucket_by_id: Vec::new(),
            next_of: Vec::new(),
            prev_of: Vec::new(),
        };
        stats.rebuild_bucket_cache();
        Some(stats)
    }

    /// Precomputes per-word bucket indices; lookups in the feature hot
    /// path are then plain array reads. Called after construction and
    /// after deserialization.
    pub fn rebuild_bucket_cache(&mut self) {
        self.idf_bucket_by_id = self
            .vocab
            .iter()
            .map(|w| {
                let v = self.idf.idf(w);
                self.idf_edges.iter().take_while(|e| v > **e).count() as u8
            })
            .collect();
        self.freq_bucket_by_id = (0..self.vocab.len())
            .map(|i| {
                let v = self.unigram[i];
                self.freq_edges.iter().take_while(|e| v > **e).count() as u8
            })
            .collect();
        self.next_of = vec![Vec::new(); self.vocab.len()];
        self.prev_of = vec![Vec::new(); self.vocab.len()];
        for &(a, b) in &self.bigrams {
            self.next_of[a as usize].push(b);
            self.prev_of[b as usize].push(a);
        }
    }

    pub fn vocab(&self) -> &[Word] {
        &self.vocab
    }

    pub fn idf(&self) -> &IdfTable {
        &self.idf
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.vocab.binary_search_by(|w| w.as_str().cmp(word)).ok().map(|i| i as u32)
    }

    fn idf_bucket_of_id(&self, id: u32) -> usize {
        self.idf_bucket_by_id[id as usize] as usize
    }

    fn freq_bucket(&self, id: u32) -> usize {
        self.freq_bucket_by_id[id as usize] as usize
    }

    pub fn has_bigram(&self, left: u32, right: u32) -> bool {
        self.bigrams.contains(&(left, right))
    }

    /// Samples a vocabulary word from the corpus unigram distribution.
    pub fn sample_word<R: rand::Rng>(&self, rng: &mut R) -> &Word {
        let total: u64 = self.unigram.iter().sum();
        let mut pick = rng.gen_range(0..total);
        for (i, &c) in self.unigram.iter().enumerate() {
            if pick < c {
                return &self.vocab[i];
            }
            pick -= c;
        }
        self.vocab.last().expect("nonempty vocabulary")
    }
}

const IDF_BUCKETS: usize = 6;
const FREQ_BUCKETS: usize = 4;

// Feature layout. One flat weight vector with disjoint per-head ranges.
const STOP_BIAS: usize = 0;
const STOP_LEN: usize = 1; // 8 buckets
const STOP_USER_FRAC: usize = 9; // 5 buckets
const STOP_TERMINAL_PUNCT: usize = 14;
const STOP_AGENT_FRAC: usize = 15; // 5 buckets
const STOP_GHOSTS: usize = 20; // 4 buckets
const STOP_BIGRAM_BREAKS: usize = 24; // 3 buckets
const LOC_BASE: usize = 27;
const LOC_RELPOS: usize = LOC_BASE; // 8 buckets
const LOC_AT_START: usize = LOC_BASE + 8;
const LOC_AT_END: usize = LOC_BASE + 9;
const LOC_ADJ_USER: usize = LOC_BASE + 10;
const LOC_TOK_USER: usize = LOC_BASE + 11;
const LOC_ADJ_AGENT: usize = LOC_BASE + 12;
const LOC_TOK_AGENT: usize = LOC_BASE + 13;
/// The adjacent pair around this location is not a corpus bigram.
const LOC_BIGRAM_BREAK: usize = LOC_BASE + 14;
const OP_BASE: usize = LOC_BASE + 15;
const OP_KIND: usize = OP_BASE; // ins, del, sub
const OP_DEL_USER_TOK: usize = OP_BASE + 3;
const OP_SUB_USER_TOK: usize = OP_BASE + 4;
const OP_DEL_AGENT_TOK: usize = OP_BASE + 5;
const OP_INS_ADJ_USER: usize = OP_BASE + 6;
const WORD_BASE: usize = OP_BASE + 7;
const WORD_IDF: usize = WORD_BASE; // 6 buckets
const WORD_FREQ: usize = WORD_BASE + 6; // 4 buckets
const WORD_IN_U_CUR: usize = WORD_BASE + 10;
const WORD_IN_U_PREV: usize = WORD_BASE + 11;
const WORD_IN_A_PREV: usize = WORD_BASE + 12;
const WORD_IS_USER_WORD: usize = WORD_BASE + 13;
const WORD_IS_GHOST: usize = WORD_BASE + 14;
const WORD_BIGRAM_LEFT_CORPUS: usize = WORD_BASE + 15;
const WORD_BIGRAM_RIGHT_CORPUS: usize = WORD_BASE + 16;
const WORD_BIGRAM_LEFT_DRAFTS: usize = WORD_BASE + 17;
const WORD_BIGRAM_RIGHT_DRAFTS: usize = WORD_BASE + 18;
const WORD_EQUALS_CURRENT: usize = WORD_BASE + 19;
/// The word already occurs in the document being edited.
const WORD_IN_DOC: usize = WORD_BASE + 20;
/// Terminal punctuation placed at the appending slot vs. mid-document.
const WORD_PUNCT_AT_END: usize = WORD_BASE + 21;
const WORD_PUNCT_INSIDE: usize = WORD_BASE + 22;

/// Total feature dimension.
pub const FEATURE_DIM: usize = WORD_BASE + 23;

/// Bumped whenever the feature layout changes; checkpoints carry it.
pub const FEATURE_MAP_VERSION: u32 = 1;

/// Probability floor for edits the factored heads cannot produce, e.g.
/// out-of-vocabulary words.
const EPS_PROB: f64 = 1e-12;

fn len_bucket(n: usize) -> usize {
    match n {
        0 => 0,
        1..=2 => 1,
        3..=4 => 2,
        5..=8 => 3,
        9..=12 => 4,
        13..=16 => 5,
        17..=32 => 6,
        _ => 7,
    }
}

fn frac_bucket(num: usize, den: usize) -> usize {
    if den == 0 || num == 0 {
        return 0;
    }
    let f = num as f64 / den as f64;
    if f <= 0.25 {
        1
    } else if f <= 0.5 {
        2
    } else if f <= 0.75 {
        3
    } else {
        4
    }
}

fn ghost_bucket(n: usize) -> usize {
    match n {
        0 => 0,
        1 => 1,
        2..=3 => 2,
        _ => 3,
    }
}

/// Per-(document, state) feature context, computed once per distribution
/// query.
struct Ctx {
    n: usize,
    /// Document at capacity: insertions are invalid.
    full: bool,
    doc_ids: Vec<Option<u32>>,
    in_doc: Vec<bool>,
    /// `bigram_break[i]` is true when the pair (token i+1, token i+2) in
    /// 1-based coordinates is not a corpus bigram.
    bigram_break: Vec<bool>,
    user_marked: Vec<bool>,
    agent_marked: Vec<bool>,
    // Vocabulary-indexed membership bitmaps.
    in_u_cur: Vec<bool>,
    in_u_prev: Vec<bool>,
    in_a_prev: Vec<bool>,
    ghost_ids: Vec<bool>,
    user_word_ids: Vec<bool>,
    draft_bigrams: Vec<(u32, u32)>,
    stop_features: Vec<usize>,
}

impl Ctx {
    fn new(stats: &CorpusStats, doc: &Document, state: &PolicyState) -> Ctx {
        let v = stats.vocab.len();
        let bitmap = |d: &Document| -> Vec<bool> {
            let mut bits = vec![false; v];
            for t in d.tokens() {
                if let Some(id) = stats.id(t) {
                    bits[id as usize] = true;
                }
            }
            bits
        };
        let doc_ids: Vec<Option<u32>> = doc.tokens().iter().map(|t| stats.id(t)).collect();
        let mut in_doc = vec![false; v];
        for id in doc_ids.iter().flatten() {
            in_doc[*id as usize] = true;
        }
        let bigram_break: Vec<bool> = doc_ids
            .windows(2)
            .map(|pair| match (pair[0], pair[1]) {
                (Some(a), Some(b)) => !stats.has_bigram(a, b),
                _ => true,
            })
            .collect();
        let mut draft_bigrams = Vec::new();
        for d in [&state.u_cur, &state.u_prev, &state.a_prev] {
            for pair in d.tokens().windows(2) {
                if let (Some(a), Some(b)) = (stats.id(&pair[0]), stats.id(&pair[1])) {
                    draft_bigrams.push((a, b));
                }
            }
        }
        let user_marked: Vec<bool> = doc.marks().iter().map(|m| *m == Mark::UserInserted).collect();
        let agent_marked: Vec<bool> = doc.marks().iter().map(|m| *m == Mark::AgentInserted).collect();
        let n = doc.content_len();
        let mut stop_features = vec![STOP_BIAS, STOP_LEN + len_bucket(n)];
        let user_count = user_marked.iter().filter(|b| **b).count();
        let agent_count = agent_marked.iter().filter(|b| **b).count();
        stop_features.push(STOP_USER_FRAC + frac_bucket(user_count, n));
        stop_features.push(STOP_AGENT_FRAC + frac_bucket(agent_count, n));
        stop_features.push(STOP_GHOSTS + ghost_bucket(state.ghosts.len()));
        let breaks = bigram_break.iter().filter(|b| **b).count();
        stop_features.push(STOP_BIGRAM_BREAKS + breaks.min(2));
        if doc
            .tokens()
            .last()
            .map(|t| matches!(t.as_str(), "." | "!" | "?"))
            .unwrap_or(false)
        {
            stop_features.push(STOP_TERMINAL_PUNCT);
        }
        let mut ghost_ids = vec![false; v];
        for g in &state.ghosts {
            if let Some(id) = stats.id(&g.word) {
                ghost_ids[id as usize] = true;
            }
        }
        let mut user_word_ids = vec![false; v];
        for w in &state.user_words {
            if let Some(id) = stats.id(w) {
                user_word_ids[id as usize] = true;
            }
        }
        Ctx {
            n,
            full: n >= doc.capacity(),
            doc_ids,
            in_doc,
            bigram_break,
            user_marked,
            agent_marked,
            in_u_cur: bitmap(&state.u_cur),
            in_u_prev: bitmap(&state.u_prev),
            in_a_prev: bitmap(&state.a_prev),
            ghost_ids,
            user_word_ids,
            draft_bigrams,
            stop_features,
        }
    }

    /// Per-(location, op) word-head context: neighbour ids and bigram
    /// bitmaps, so each candidate word costs only array reads.
    fn word_ctx(&self, stats: &CorpusStats, l: usize, op: EditOp) -> WordCtx {
        let v = stats.vocab.len();
        let (left_idx, right_idx) = match op {
            EditOp::Ins => (l as i64 - 1, l as i64),
            _ => (l as i64 - 1, l as i64 + 1),
        };
        let id_at = |idx: i64| -> Option<u32> {
            if idx >= 1 && (idx as usize) <= self.doc_ids.len() {
                self.doc_ids[idx as usize - 1]
            } else {
                None
            }
        };
        let left = id_at(left_idx);
        let right = id_at(right_idx);
        let mut corpus_left = vec![false; v];
        let mut draft_left = vec![false; v];
        if let Some(left) = left {
            for &b in &stats.next_of[left as usize] {
                corpus_left[b as usize] = true;
            }
            for &(a, b) in &self.draft_bigrams {
                if a == left {
                    draft_left[b as usize] = true;
                }
            }
        }
        let mut corpus_right = vec![false; v];
        let mut draft_right = vec![false; v];
        if let Some(right) = right {
            for &a in &stats.prev_of[right as usize] {
                corpus_right[a as usize] = true;
            }
            for &(a, b) in &self.draft_bigrams {
                if b == right {
                    draft_right[a as usize] = true;
                }
            }
        }
        let current = if op == EditOp::Sub { id_at(l as i64) } else { None };
        let at_end = match op {
            EditOp::Ins => l == self.n + 1,
            _ => l == self.n,
        };
        WordCtx { corpus_left, corpus_right, draft_left, draft_right, current, at_end }
    }

    fn loc_features(&self, l: usize) -> Vec<usize> {
        let mut f = Vec::with_capacity(6);
        let rel = (8 * (l - 1)) / (self.n + 1);
        f.push(LOC_RELPOS + rel.min(7));
        if l == 1 {
            f.push(LOC_AT_START);
        }
        if l == self.n + 1 {
            f.push(LOC_AT_END);
        }
        let marked = |v: &Vec<bool>, idx: usize| idx >= 1 && idx <= v.len() && v[idx - 1];
        if marked(&self.user_marked, l - 1) || marked(&self.user_marked, l) {
            f.push(LOC_ADJ_USER);
        }
        if marked(&self.user_marked, l) {
            f.push(LOC_TOK_USER);
        }
        if marked(&self.agent_marked, l - 1) || marked(&self.agent_marked, l) {
            f.push(LOC_ADJ_AGENT);
        }
        if marked(&self.agent_marked, l) {
            f.push(LOC_TOK_AGENT);
        }
        // The seam between tokens l-1 and l; for the appending slot the
        // seam before it.
        if l >= 2 && l <= self.bigram_break.len() + 1 && self.bigram_break[l - 2] {
            f.push(LOC_BIGRAM_BREAK);
        }
        f
    }

    fn op_features(&self, l: usize, op: EditOp) -> Vec<usize> {
        let mut f = Vec::with_capacity(3);
        f.push(OP_KIND
            + match op {
                EditOp::Ins => 0,
                EditOp::Del => 1,
                EditOp::Sub => 2,
            });
        let marked = |v: &Vec<bool>, idx: usize| idx >= 1 && idx <= v.len() && v[idx - 1];
        match op {
            EditOp::Del => {
                if marked(&self.user_marked, l) {
                    f.push(OP_DEL_USER_TOK);
                }
                if marked(&self.agent_marked, l) {
                    f.push(OP_DEL_AGENT_TOK);
                }
            }
            EditOp::Sub => {
                if marked(&self.user_marked, l) {
                    f.push(OP_SUB_USER_TOK);
                }
            }
            EditOp::Ins => {
                if marked(&self.user_marked, l - 1) || marked(&self.user_marked, l) {
                    f.push(OP_INS_ADJ_USER);
                }
            }
        }
        f
    }

    /// Word features for candidate vocab id `w` under a word context.
    fn word_features(&self, stats: &CorpusStats, wctx: &WordCtx, w: u32, out: &mut Vec<usize>) {
        out.clear();
        let wi = w as usize;
        out.push(WORD_IDF + stats.idf_bucket_of_id(w));
        out.push(WORD_FREQ + stats.freq_bucket(w));
        if self.in_u_cur[wi] {
            out.push(WORD_IN_U_CUR);
        }
        if self.in_u_prev[wi] {
            out.push(WORD_IN_U_PREV);
        }
        if self.in_a_prev[wi] {
            out.push(WORD_IN_A_PREV);
        }
        if self.user_word_ids[wi] {
            out.push(WORD_IS_USER_WORD);
        }
        if self.ghost_ids[wi] {
            out.push(WORD_IS_GHOST);
        }
        if wctx.corpus_left[wi] {
            out.push(WORD_BIGRAM_LEFT_CORPUS);
        }
        if wctx.corpus_right[wi] {
            out.push(WORD_BIGRAM_RIGHT_CORPUS);
        }
        if wctx.draft_left[wi] {
            out.push(WORD_BIGRAM_LEFT_DRAFTS);
        }
        if wctx.draft_right[wi] {
            out.push(WORD_BIGRAM_RIGHT_DRAFTS);
        }
        if wctx.current == Some(w) {
            out.push(WORD_EQUALS_CURRENT);
        }
        if self.in_doc[wi] {
            out.push(WORD_IN_DOC);
        }
        if matches!(stats.vocab[wi].as_str(), "." | "!" | "?") {
            out.push(if wctx.at_end { WORD_PUNCT_AT_END } else { WORD_PUNCT_INSIDE });
        }
    }
}

/// Neighbour context for the word head at one (location, op). The
/// neighbours are in apply()-time coordinates: for ins at l the left
/// neighbour is token l-1 and the right the token currently at l; for
/// sub they are tokens l-1 and l+1.
struct WordCtx {
    corpus_left: Vec<bool>,
    corpus_right: Vec<bool>,
    draft_left: Vec<bool>,
    draft_right: Vec<bool>,
    current: Option<u32>,
    /// Writing here puts the word at the end of the document.
    at_end: bool,
}

/// Trainable log-linear edit policy.
///
/// The action distribution factors as stop, location, operation, and
/// word heads; each head is a softmax (the stop head a logistic) over
/// sparse indicator features, so the whole distribution is normalized by
/// construction. Zero weights give the uniform policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogLinearEditPolicy {
    stats: CorpusStats,
    weights: Vec<f64>,
    temperature: f64,
}

impl LogLinearEditPolicy {
    pub fn uniform(stats: CorpusStats) -> LogLinearEditPolicy {
        LogLinearEditPolicy { stats, weights: vec![0.0; FEATURE_DIM], temperature: 1.0 }
    }

    pub fn with_temperature(mut self, temperature: f64) -> LogLinearEditPolicy {
        self.temperature = temperature;
        self
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn dot(&self, features: &[usize]) -> f64 {
        features.iter().map(|&i| self.weights[i]).sum::<f64>() / self.temperature
    }

    fn stop_sigmoid(&self, ctx: &Ctx) -> f64 {
        let z = self.dot(&ctx.stop_features);
        1.0 / (1.0 + (-z).exp())
    }

    /// Highest valid location: `n + 1` (the appending insertion slot)
    /// unless the document is full, in which case insertions are masked
    /// out entirely.
    fn max_loc(ctx: &Ctx) -> usize {
        if ctx.full {
            ctx.n
        } else {
            ctx.n + 1
        }
    }

    /// Location softmax over the valid locations. At `l = n+1` only
    /// insertion is valid; the op head masks accordingly.
    fn loc_distribution(&self, ctx: &Ctx) -> Vec<f64> {
        let scores: Vec<f64> = (1..=Self::max_loc(ctx)).map(|l| self.dot(&ctx.loc_features(l))).collect();
        softmax(&scores)
    }

    fn valid_ops(ctx: &Ctx, l: usize) -> &'static [EditOp] {
        if l == ctx.n + 1 {
            &[EditOp::Ins]
        } else if ctx.full {
            &[EditOp::Del, EditOp::Sub]
        } else {
            &[EditOp::Ins, EditOp::Del, EditOp::Sub]
        }
    }

    fn op_distribution(&self, ctx: &Ctx, l: usize) -> Vec<f64> {
        let ops = Self::valid_ops(ctx, l);
        let scores: Vec<f64> = ops.iter().map(|&o| self.dot(&ctx.op_features(l, o))).collect();
        softmax(&scores)
    }

    fn word_distribution(&self, ctx: &Ctx, l: usize, op: EditOp) -> Vec<f64> {
        let wctx = ctx.word_ctx(&self.stats, l, op);
        let mut buf = Vec::with_capacity(12);
        let scores: Vec<f64> = (0..self.stats.vocab.len() as u32)
            .map(|w| {
                ctx.word_features(&self.stats, &wctx, w, &mut buf);
                self.dot(&buf)
            })
            .collect();
        softmax(&scores)
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl EditPolicy for LogLinearEditPolicy {
    fn stop_prob(&self, doc: &Document, state: &PolicyState) -> f64 {
        let ctx = Ctx::new(&self.stats, doc, state);
        self.stop_sigmoid(&ctx)
    }

    fn edit_log_prob(&self, doc: &Document, state: &PolicyState, edit: &Edit) -> f64 {
        let ctx = Ctx::new(&self.stats, doc, state);
        let n = ctx.n;
        let l = edit.location;
        let in_bounds = match edit.op {
            EditOp::Ins => !ctx.full && l >= 1 && l <= n + 1,
            _ => l >= 1 && l <= n,
        };
        if !in_bounds {
            return EPS_PROB.ln();
        }
        let stop = self.stop_sigmoid(&ctx);
        let mut lp = (1.0 - stop).max(EPS_PROB).ln();
        lp += self.loc_distribution(&ctx)[l - 1].max(EPS_PROB).ln();
        let ops = Self::valid_ops(&ctx, l);
        let op_idx = ops.iter().position(|&o| o == edit.op);
        let Some(op_idx) = op_idx else { return EPS_PROB.ln() };
        lp += self.op_distribution(&ctx, l)[op_idx].max(EPS_PROB).ln();
        if edit.op != EditOp::Del {
            match self.stats.id(&edit.word) {
                Some(w) => {
                    lp += self.word_distribution(&ctx, l, edit.op)[w as usize].max(EPS_PROB).ln()
                }
                None => return EPS_PROB.ln(),
            }
        }
        lp
    }

    fn enumerate_edits(&self, doc: &Document, state: &PolicyState) -> Vec<(Edit, f64)> {
        let ctx = Ctx::new(&self.stats, doc, state);
        let non_stop = 1.0 - self.stop_sigmoid(&ctx);
        let locs = self.loc_distribution(&ctx);
        let mut out = Vec::new();
        for l in 1..=Self::max_loc(&ctx) {
            let p_l = non_stop * locs[l - 1];
            let ops = Self::valid_ops(&ctx, l);
            let op_dist = self.op_distribution(&ctx, l);
            for (oi, &op) in ops.iter().enumerate() {
                let p_lo = p_l * op_dist[oi];
                match op {
                    EditOp::Del => out.push((Edit::del(l), p_lo)),
                    _ => {
                        let words = self.word_distribution(&ctx, l, op);
                        for (w, &pw) in words.iter().enumerate() {
                            let word = self.stats.vocab[w].clone();
                            let edit = match op {
                                EditOp::Ins => Edit::ins(l, word),
                                _ => Edit::sub(l, word),
                            };
                            out.push((edit, p_lo * pw));
                        }
                    }
                }
            }
        }
        out
    }
}

/// A serialized checkpoint: the full policy plus the feature-map version
/// it was trained against.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    feature_map_version: u32,
    policy: LogLinearEditPolicy,
}

impl LogLinearEditPolicy {
    pub fn save_checkpoint<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let ck = Checkpoint { feature_map_version: FEATURE_MAP_VERSION, policy: self.clone() };
        serde_json::to_writer_pretty(out, &ck).map_err(std::io::Error::other)
    }

    pub fn load_checkpoint<R: std::io::Read>(input: R) -> std::io::Result<LogLinearEditPolicy> {
        let mut ck: Checkpoint = serde_json::from_reader(input).map_err(std::io::Error::other)?;
        ck.policy.stats.rebuild_bucket_cache();
        if ck.feature_map_version != FEATURE_MAP_VERSION {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!(
                    "checkpoint feature map v{} does not match build v{FEATURE_MAP_VERSION}",
                    ck.feature_map_version
                ),
            ));
        }
        if ck.policy.weights.len() != FEATURE_DIM {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "weight dimension mismatch"));
        }
        Ok(ck.policy)
    }
}

/// One training sample: the loss is an importance-weighted sum of action
/// log-probabilities at a roll-in point.
#[derive(Debug, Clone)]
pub enum SurrogatePoint {
    /// Prefix point with the distinct next edits toward the goal.
    Edits { doc: Document, next_edits: Vec<Edit>, weight: f64 },
    /// Trajectory end: the stop action at the finished draft.
    Stop { doc: Document, weight: f64 },
}

impl SurrogatePoint {
    /// Loss of this point under any edit policy.
    pub fn loss(&self, policy: &dyn EditPolicy, state: &PolicyState) -> f64 {
        match self {
            SurrogatePoint::Stop { doc, weight } => {
                -weight * policy.action_log_prob(doc, state, &EditAction::Stop)
            }
            SurrogatePoint::Edits { doc, next_edits, weight } => {
                let sum: f64 = next_edits
                    .iter()
                    .map(|e| policy.edit_log_prob(doc, state, e))
                    .sum();
                -weight * sum
            }
        }
    }
}

/// Sparse gradient accumulator.
#[derive(Debug, Clone, Default)]
pub struct SparseGrad {
    values: BTreeMap<usize, f64>,
}

impl SparseGrad {
    pub fn add(&mut self, index: usize, v: f64) {
        *self.values.entry(index).or_insert(0.0) += v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().map(|(&i, &v)| (i, v))
    }

    pub fn norm(&self) -> f64 {
        self.values.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.values.values_mut() {
            *v *= s;
        }
    }
}

impl LogLinearEditPolicy {
    /// Loss and its exact gradient for one surrogate point. The gradient
    /// of each softmax head is `p - indicator`, accumulated over the
    /// point's terms with the point's weight.
    pub fn loss_and_grad(&self, point: &SurrogatePoint, state: &PolicyState) -> (f64, SparseGrad) {
        let mut grad = SparseGrad::default();
        let inv_t = 1.0 / self.temperature;
        let loss = match point {
            SurrogatePoint::Stop { doc, weight } => {
                let ctx = Ctx::new(&self.stats, doc, state);
                let p = self.stop_sigmoid(&ctx);
                // loss = -w * ln(sigmoid(z)); d/dz = -(1 - p).
                for &f in &ctx.stop_features {
                    grad.add(f, -weight * (1.0 - p) * inv_t);
                }
                -weight * p.max(EPS_PROB).ln()
            }
            SurrogatePoint::Edits { doc, next_edits, weight } => {
                let ctx = Ctx::new(&self.stats, doc, state);
                let p_stop = self.stop_sigmoid(&ctx);
                let locs = self.loc_distribution(&ctx);
                let k = next_edits.len() as f64;
                let mut loss = -weight * k * (1.0 - p_stop).max(EPS_PROB).ln();
                // d/dz of -k ln(1 - sigmoid(z)) = k * p_stop.
                for &f in &ctx.stop_features {
                    grad.add(f, weight * k * p_stop * inv_t);
                }
                // Location head: expectation term once per edit.
                for (l0, &p) in locs.iter().enumerate() {
                    for f in ctx.loc_features(l0 + 1) {
                        grad.add(f, weight * k * p * inv_t);
                    }
                }
                let mut word_buf = Vec::with_capacity(12);
                for edit in next_edits {
                    let l = edit.location;
                    loss -= weight * locs[l - 1].max(EPS_PROB).ln();
                    for f in ctx.loc_features(l) {
                        grad.add(f, -weight * inv_t);
                    }
                    let ops = Self::valid_ops(&ctx, l);
                    let op_dist = self.op_distribution(&ctx, l);
                    let oi = ops.iter().position(|&o| o == edit.op).expect("valid op");
                    loss -= weight * op_dist[oi].max(EPS_PROB).ln();
                    for (oj, &o) in ops.iter().enumerate() {
                        for f in ctx.op_features(l, o) {
                            grad.add(f, weight * op_dist[oj] * inv_t);
                        }
                    }
                    for f in ctx.op_features(l, edit.op) {
                        grad.add(f, -weight * inv_t);
                    }
                    if edit.op != EditOp::Del {
                        let w_id = self.stats.id(&edit.word);
                        let Some(w_id) = w_id else {
                            loss -= weight * EPS_PROB.ln();
                            continue;
                        };
                        let wctx = ctx.word_ctx(&self.stats, l, edit.op);
                        let words = self.word_distribution(&ctx, l, edit.op);
                        loss -= weight * words[w_id as usize].max(EPS_PROB).ln();
                        for (w, &pw) in words.iter().enumerate() {
                            ctx.word_features(&self.stats, &wctx, w as u32, &mut word_buf);
                            for &f in &word_buf {
                                grad.add(f, weight * pw * inv_t);
                            }
                        }
                        ctx.word_features(&self.stats, &wctx, w_id, &mut word_buf);
                        for &f in &word_buf {
                            grad.add(f, -weight * inv_t);
                        }
                    }
                }
                loss
            }
        };
        (loss, grad)
    }

    /// One clipped SGD step.
    pub fn sgd_step(&mut self, grad: &mut SparseGrad, lr: f64, clip_norm: f64) {
        let norm = grad.norm();
        if norm > clip_norm {
            grad.scale(clip_norm / norm);
        }
        for (i, g) in grad.iter() {
            self.weights[i] -= lr * g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{Actor, DEFAULT_CAPACITY};
    use crate::env::GhostToken;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn doc(text: &str) -> Document {
        let toks: Vec<&str> = text.split_whitespace().collect();
        Document::from_tokens(toks, DEFAULT_CAPACITY).unwrap()
    }

    fn toy_stats() -> CorpusStats {
        let docs = vec![
            doc("aa bb cc dd ."),
            doc("aa cc ee ."),
            doc("bb dd ff gg ."),
            doc("aa bb ee ff ."),
        ];
        CorpusStats::from_documents(&docs).unwrap()
    }

    fn toy_state() -> PolicyState {
        let mut u_cur = doc("aa bb");
        u_cur = u_cur.apply(&Edit::ins(3, "cc"), Actor::User).unwrap();
        let mut state = PolicyState::initial(u_cur);
        state.ghosts.push(GhostToken { location: 1, word: "ff".into() });
        state
    }

    #[test]
    fn uniform_policy_is_normalized() {
        let policy = LogLinearEditPolicy::uniform(toy_stats());
        let state = toy_state();
        let docs = [Document::blank(DEFAULT_CAPACITY), doc("aa"), state.u_cur.clone()];
        for d in &docs {
            let stop = policy.stop_prob(d, &state);
            let total: f64 = policy.enumerate_edits(d, &state).iter().map(|(_, p)| p).sum();
            assert!((stop + total - 1.0).abs() < 1e-9, "doc={d}");
            assert!((stop - 0.5).abs() < 1e-12, "zero weights halve the stop head");
        }
    }

    #[test]
    fn enumerate_agrees_with_log_prob() {
        let mut policy = LogLinearEditPolicy::uniform(toy_stats());
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for w in policy.weights_mut() {
            *w = rng.gen_range(-0.5..0.5);
        }
        let state = toy_state();
        let d = doc("aa bb");
        let edits = policy.enumerate_edits(&d, &state);
        for (edit, p) in &edits {
            let lp = policy.edit_log_prob(&d, &state, edit);
            assert!((lp - p.ln()).abs() < 1e-9, "{edit}: {lp} vs {}", p.ln());
        }
        let total: f64 = edits.iter().map(|(_, p)| p).sum();
        let stop = policy.stop_prob(&d, &state);
        assert!((stop + total - 1.0).abs() < 1e-9, "normalized under arbitrary weights");
    }

    #[test]
    fn out_of_vocabulary_words_get_floor_probability() {
        let policy = LogLinearEditPolicy::uniform(toy_stats());
        let state = toy_state();
        let lp = policy.edit_log_prob(&doc("aa"), &state, &Edit::ins(1, "zzz"));
        assert!(lp <= (1e-12f64).ln() + 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let stats = toy_stats();
        let state = toy_state();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for case in 0..20 {
            let mut policy = LogLinearEditPolicy::uniform(stats.clone());
            for w in policy.weights_mut() {
                *w = rng.gen_range(-1.0..1.0);
            }
            let point = if case % 3 == 0 {
                SurrogatePoint::Stop { doc: doc("aa bb cc dd ."), weight: 2.5 }
            } else {
                SurrogatePoint::Edits {
                    doc: doc("aa bb"),
                    next_edits: vec![Edit::ins(3, "cc"), Edit::sub(2, "dd"), Edit::del(1)],
                    weight: 1.5,
                }
            };
            let (_, grad) = policy.loss_and_grad(&point, &state);
            let h = 1e-5;
            for (i, g) in grad.iter() {
                let mut plus = policy.clone();
                plus.weights_mut()[i] += h;
                let mut minus = policy.clone();
                minus.weights_mut()[i] -= h;
                let fd = (plus.loss_and_grad(&point, &state).0 - minus.loss_and_grad(&point, &state).0) / (2.0 * h);
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-5, "case {case} coord {i}: analytic {g} vs fd {fd}");
            }
        }
    }

    #[test]
    fn sgd_clips_large_gradients() {
        let mut policy = LogLinearEditPolicy::uniform(toy_stats());
        let mut grad = SparseGrad::default();
        grad.add(0, 300.0);
        grad.add(1, 400.0);
        policy.sgd_step(&mut grad, 0.1, 10.0);
        // Clipped to norm 10: (6, 8) scaled by lr.
        assert!((policy.weights()[0] + 0.6).abs() < 1e-12);
        assert!((policy.weights()[1] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut policy = LogLinearEditPolicy::uniform(toy_stats());
        policy.weights_mut()[3] = 0.25;
        let mut buf = Vec::new();
        policy.save_checkpoint(&mut buf).unwrap();
        let back = LogLinearEditPolicy::load_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.weights(), policy.weights());
        assert_eq!(back.stats().vocab(), policy.stats().vocab());
        // A corrupted version tag is rejected.
        let tampered = String::from_utf8(buf).unwrap().replace(
            &format!("\"feature_map_version\": {FEATURE_MAP_VERSION}"),
            "\"feature_map_version\": 999",
        );
        assert!(LogLinearEditPolicy::load_checkpoint(tampered.as_bytes()).is_err());
    }

    #[test]
    fn expert_emits_goal() {
        let goal = doc("aa bb cc");
        let mut expert = ExpertPolicy::new(goal.clone());
        let state = PolicyState::initial(doc("aa"));
        let turn = expert.act(&state).unwrap();
        assert!(turn.draft.same_tokens(&goal));
        assert!(turn.edits.is_none());
    }

    #[test]
    fn near_expert_applies_limited_edits() {
        let goal = doc("aa bb cc dd ee");
        let mut agent = ScriptedNearExpert::new(goal.clone(), 2);
        let state = PolicyState::initial(doc("aa"));
        let turn = agent.act(&state).unwrap();
        let edits = turn.edits.unwrap();
        assert_eq!(edits.len(), 2);
        assert_eq!(turn.draft.to_string(), "aa bb cc");
    }

    #[test]
    fn corpus_stats_lookups() {
        let stats = toy_stats();
        assert!(stats.id("aa").is_some());
        assert!(stats.id("zz").is_none());
        let aa = stats.id("aa").unwrap();
        let bb = stats.id("bb").unwrap();
        assert!(stats.has_bigram(aa, bb));
        assert!(!stats.has_bigram(bb, aa));
    }
}
