//! Score-maximal monotonic alignments between documents and the edit
//! sequences they induce.
//!
//! An alignment between documents `x` and `y` is represented canonically
//! as a padded pair `(x_bar, y_bar)` in which `x` and `y` appear as the
//! non-blank subsequences. Each position is a match (equal tokens), a
//! substitution (unequal, both non-blank), an insertion (blank on the
//! x side), or a deletion (blank on the y side). Within any maximal run
//! of gap positions, insertions precede deletions, which makes the
//! padded pair unique for a given matching.

use crate::doc::{Document, Edit, EditOp, Word, BLANK};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Scores token pairings for the alignment search. Contexts are the full
/// content token sequences of both documents, so providers may condition
/// on them; the built-in providers do not.
pub trait SimilarityProvider: Send + Sync {
    /// Pairing score in [-1, 1]; identical words must score exactly 1.
    fn score(&self, wx: &str, wy: &str, x_ctx: &[Word], y_ctx: &[Word]) -> f64;

    /// Score of an unpaired (gap) position. A substitution is preferred
    /// over a delete+insert pair exactly when the pairing score exceeds
    /// twice this baseline.
    fn gap_baseline(&self) -> f64 {
        0.25
    }
}

/// Default scorer: exact match scores 1, otherwise the cosine similarity
/// of character-trigram count vectors, floored at 0. Pair scores are
/// memoized; the cache is read-mostly and safe to share across threads.
#[derive(Debug)]
pub struct TrigramSimilarity {
    gap_baseline: f64,
    cache: std::sync::RwLock<std::collections::HashMap<(Word, Word), f64>>,
}

impl Clone for TrigramSimilarity {
    fn clone(&self) -> TrigramSimilarity {
        TrigramSimilarity { gap_baseline: self.gap_baseline, cache: Default::default() }
    }
}

impl Default for TrigramSimilarity {
    fn default() -> Self {
        TrigramSimilarity::new()
    }
}

impl TrigramSimilarity {
    pub fn new() -> TrigramSimilarity {
        TrigramSimilarity { gap_baseline: 0.25, cache: Default::default() }
    }

    pub fn with_gap_baseline(gap_baseline: f64) -> TrigramSimilarity {
        TrigramSimilarity { gap_baseline, cache: Default::default() }
    }

    fn trigrams(word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() < 3 {
            return vec![word.to_string()];
        }
        chars.windows(3).map(|w| w.iter().collect()).collect()
    }

    fn compute(wx: &str, wy: &str) -> f64 {
        let mut a = TrigramSimilarity::trigrams(wx);
        let mut b = TrigramSimilarity::trigrams(wy);
        a.sort_unstable();
        b.sort_unstable();
        let dot = {
            let mut dot = 0usize;
            let (mut i, mut j) = (0usize, 0usize);
            while i < a.len() && j < b.len() {
                match a[i].cmp(&b[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        // Count the run lengths on both sides.
                        let gram = &a[i];
                        let ca = a[i..].iter().take_while(|g| *g == gram).count();
                        let cb = b[j..].iter().take_while(|g| *g == gram).count();
                        dot += ca * cb;
                        i += ca;
                        j += cb;
                    }
                }
            }
            dot
        };
        if dot == 0 {
            return 0.0;
        }
        let norm = |v: &[String]| -> f64 {
            let mut s = 0.0;
            let mut i = 0;
            while i < v.len() {
                let gram = &v[i];
                let c = v[i..].iter().take_while(|g| *g == gram).count();
                s += (c * c) as f64;
                i += c;
            }
            s.sqrt()
        };
        (dot as f64 / (norm(&a) * norm(&b))).max(0.0)
    }
}

impl SimilarityProvider for TrigramSimilarity {
    fn score(&self, wx: &str, wy: &str, _x_ctx: &[Word], _y_ctx: &[Word]) -> f64 {
        if wx == wy {
            return 1.0;
        }
        let key = if wx <= wy {
            (wx.to_string(), wy.to_string())
        } else {
            (wy.to_string(), wx.to_string())
        };
        if let Some(v) = self.cache.read().expect("similarity cache").get(&key) {
            return *v;
        }
        let v = TrigramSimilarity::compute(wx, wy);
        self.cache.write().expect("similarity cache").insert(key, v);
        v
    }

    fn gap_baseline(&self) -> f64 {
        self.gap_baseline
    }
}

/// Scorer backed by a static word-embedding table loaded from a TSV file
/// (`word<TAB>f1<TAB>f2...`). Words missing from the table fall back to
/// exact-match scoring.
#[derive(Debug, Clone)]
pub struct EmbeddingSimilarity {
    table: std::collections::BTreeMap<Word, Vec<f64>>,
    gap_baseline: f64,
}

impl EmbeddingSimilarity {
    pub fn from_tsv(path: &std::path::Path) -> std::io::Result<EmbeddingSimilarity> {
        let text = std::fs::read_to_string(path)?;
        let mut table = std::collections::BTreeMap::new();
        for line in text.lines() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let word = match fields.next() {
                Some(w) if !w.is_empty() => w.to_string(),
                _ => continue,
            };
            let vec: Result<Vec<f64>, _> = fields.map(|f| f.parse::<f64>()).collect();
            match vec {
                Ok(v) if !v.is_empty() => {
                    table.insert(word, v);
                }
                _ => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("bad embedding row: {line:?}"),
                    ))
                }
            }
        }
        Ok(EmbeddingSimilarity { table, gap_baseline: 0.25 })
    }
}

impl SimilarityProvider for EmbeddingSimilarity {
    fn score(&self, wx: &str, wy: &str, _x_ctx: &[Word], _y_ctx: &[Word]) -> f64 {
        if wx == wy {
            return 1.0;
        }
        match (self.table.get(wx), self.table.get(wy)) {
            (Some(a), Some(b)) if a.len() == b.len() => {
                let dot: f64 = a.iter().zip(b).map(|(u, v)| u * v).sum();
                let na: f64 = a.iter().map(|u| u * u).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    (dot / (na * nb)).clamp(-1.0, 1.0)
                }
            }
            _ => 0.0,
        }
    }

    fn gap_baseline(&self) -> f64 {
        self.gap_baseline
    }
}

/// Kind of a non-match alignment position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignKind {
    Ins,
    Del,
    Sub,
}

impl AlignKind {
    pub fn edit_op(self) -> EditOp {
        match self {
            AlignKind::Ins => EditOp::Ins,
            AlignKind::Del => EditOp::Del,
            AlignKind::Sub => EditOp::Sub,
        }
    }
}

/// A canonical monotonic alignment. `x_bar`/`y_bar` hold the active
/// prefix of the padded pair; positions beyond them are double blanks up
/// to capacity `2L` and carry no information.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    x_bar: Vec<Word>,
    y_bar: Vec<Word>,
    /// 1-based positions where the padded pair disagrees, ascending.
    edit_positions: Vec<usize>,
    score: f64,
}

impl Alignment {
    pub fn x_bar(&self) -> &[Word] {
        &self.x_bar
    }

    pub fn y_bar(&self) -> &[Word] {
        &self.y_bar
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    /// Number of edits `M = |A|`.
    pub fn edit_count(&self) -> usize {
        self.edit_positions.len()
    }

    /// The ordered edit index set `A`.
    pub fn edit_positions(&self) -> &[usize] {
        &self.edit_positions
    }

    pub fn kind_at(&self, pos: usize) -> Option<AlignKind> {
        let (xb, yb) = (&self.x_bar[pos - 1], &self.y_bar[pos - 1]);
        match (xb == BLANK, yb == BLANK) {
            (true, false) => Some(AlignKind::Ins),
            (false, true) => Some(AlignKind::Del),
            (false, false) if xb != yb => Some(AlignKind::Sub),
            _ => None,
        }
    }

    fn is_match(&self, pos: usize) -> bool {
        let (xb, yb) = (&self.x_bar[pos - 1], &self.y_bar[pos - 1]);
        xb != BLANK && xb == yb
    }

    /// Blanks in `x_bar` strictly before `pos`.
    fn blanks_before(&self, pos: usize) -> usize {
        self.x_bar[..pos - 1].iter().filter(|t| *t == BLANK).count()
    }

    /// Extracts the edit sequence indexed by a permutation of `[0, M)`.
    ///
    /// The i-th edit acts on the document produced by its predecessors;
    /// its location discounts blanks and earlier deletions before its
    /// padded position and credits earlier insertions.
    pub fn extract_edit_sequence(&self, sigma: &[usize]) -> Result<Vec<Edit>, AlignError> {
        let m = self.edit_count();
        if sigma.len() != m {
            return Err(AlignError::InvalidPermutation);
        }
        let mut seen = vec![false; m];
        for &s in sigma {
            if s >= m || seen[s] {
                return Err(AlignError::InvalidPermutation);
            }
            seen[s] = true;
        }
        let mut edits = Vec::with_capacity(m);
        for (i, &s) in sigma.iter().enumerate() {
            let pos = self.edit_positions[s];
            let mut ins_before = 0usize;
            let mut del_before = 0usize;
            for &t in &sigma[..i] {
                let q = self.edit_positions[t];
                if q < pos {
                    match self.kind_at(q).expect("edit position") {
                        AlignKind::Ins => ins_before += 1,
                        AlignKind::Del => del_before += 1,
                        AlignKind::Sub => {}
                    }
                }
            }
            let location = pos - self.blanks_before(pos) - del_before + ins_before;
            edits.push(self.edit_at(pos, location));
        }
        Ok(edits)
    }

    fn edit_at(&self, pos: usize, location: usize) -> Edit {
        match self.kind_at(pos).expect("edit position") {
            AlignKind::Ins => Edit::ins(location, self.y_bar[pos - 1].clone()),
            AlignKind::Del => Edit::del(location),
            AlignKind::Sub => Edit::sub(location, self.y_bar[pos - 1].clone()),
        }
    }

    /// Candidate first edits: each element of `A` with the location it
    /// would have at the head of an edit sequence. Covers the first
    /// elements of all permutation-indexed sequences without enumerating
    /// permutations.
    pub fn first_candidates(&self) -> Vec<EditCandidate> {
        let mut out = Vec::with_capacity(self.edit_count());
        // y-content index of the last aligned (match/sub) position seen,
        // used to place deletions between their goal-side neighbours.
        let mut y_index_before: i64 = -1;
        let mut y_seen = 0usize;
        for pos in 1..=self.x_bar.len() {
            let y_here = self.y_bar[pos - 1] != BLANK;
            if let Some(kind) = self.kind_at(pos) {
                let location = pos - self.blanks_before(pos);
                let adjacent_to_match = (pos > 1 && self.is_match(pos - 1))
                    || (pos < self.x_bar.len() && self.is_match(pos + 1));
                // Scaled goal coordinate: tokens sit at 2g, the gap after
                // token g at 2g+1. Deletions occupy the gap after the
                // previous goal-side token.
                let goal_coord = match kind {
                    AlignKind::Del => 2 * y_index_before + 1,
                    _ => 2 * (y_seen as i64),
                };
                out.push(EditCandidate {
                    edit: self.edit_at(pos, location),
                    position: pos,
                    kind,
                    adjacent_to_match,
                    goal_coord,
                    x_word: if self.x_bar[pos - 1] == BLANK {
                        None
                    } else {
                        Some(self.x_bar[pos - 1].clone())
                    },
                });
            }
            if y_here {
                y_index_before = y_seen as i64;
                y_seen += 1;
            }
        }
        out
    }

    /// The deduplicated set of first edits.
    pub fn first_edits(&self) -> Vec<Edit> {
        let set: BTreeSet<Edit> = self.first_candidates().into_iter().map(|c| c.edit).collect();
        set.into_iter().collect()
    }
}

/// A candidate first edit, with the alignment metadata the simulated user
/// needs for its heuristics.
#[derive(Debug, Clone)]
pub struct EditCandidate {
    pub edit: Edit,
    /// 1-based position in the padded pair.
    pub position: usize,
    pub kind: AlignKind,
    /// Whether the padded position neighbours a conserved match.
    pub adjacent_to_match: bool,
    /// Scaled goal-side coordinate used by the contiguity heuristic.
    pub goal_coord: i64,
    /// The x-side word at this position (the deleted or replaced token).
    pub x_word: Option<Word>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("sigma is not a permutation of the edit index set")]
    InvalidPermutation,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Move {
    Diag,
    Del,
    Ins,
}

/// Computes the score-maximal monotonic alignment between `x` and `y`.
///
/// Ties are broken deterministically: pairing beats deletion beats
/// insertion, which also prefers consuming earlier x tokens first. The
/// result is in canonical form.
pub fn align(x: &Document, y: &Document, sim: &dyn SimilarityProvider) -> Alignment {
    let xs = x.tokens();
    let ys = y.tokens();
    let (n, m) = (xs.len(), ys.len());
    let b = sim.gap_baseline();

    // score[i][j]: best score aligning x[..i] with y[..j].
    let mut score = vec![vec![0.0f64; m + 1]; n + 1];
    let mut back = vec![vec![Move::Diag; m + 1]; n + 1];
    for i in 1..=n {
        score[i][0] = i as f64 * b;
        back[i][0] = Move::Del;
    }
    for j in 1..=m {
        score[0][j] = j as f64 * b;
        back[0][j] = Move::Ins;
    }
    for i in 1..=n {
        for j in 1..=m {
            let pair = score[i - 1][j - 1] + sim.score(&xs[i - 1], &ys[j - 1], xs, ys);
            let del = score[i - 1][j] + b;
            let ins = score[i][j - 1] + b;
            // Preference on ties: diagonal, then deletion, then insertion.
            let (best, mv) = if pair >= del && pair >= ins {
                (pair, Move::Diag)
            } else if del >= ins {
                (del, Move::Del)
            } else {
                (ins, Move::Ins)
            };
            score[i][j] = best;
            back[i][j] = mv;
        }
    }

    let mut moves = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let mv = back[i][j];
        moves.push(mv);
        match mv {
            Move::Diag => {
                i -= 1;
                j -= 1;
            }
            Move::Del => i -= 1,
            Move::Ins => j -= 1,
        }
    }
    moves.reverse();

    // Build the padded pair, rewriting each maximal gap run so that
    // insertions come before deletions (canonical form).
    let mut x_bar: Vec<Word> = Vec::with_capacity(n + m);
    let mut y_bar: Vec<Word> = Vec::with_capacity(n + m);
    let mut run_ins: Vec<usize> = Vec::new();
    let mut run_del: Vec<usize> = Vec::new();
    let (mut xi, mut yj) = (0usize, 0usize);
    let flush = |x_bar: &mut Vec<Word>, y_bar: &mut Vec<Word>, run_ins: &mut Vec<usize>, run_del: &mut Vec<usize>| {
        for &j in run_ins.iter() {
            x_bar.push(BLANK.to_string());
            y_bar.push(ys[j].clone());
        }
        for &i in run_del.iter() {
            x_bar.push(xs[i].clone());
            y_bar.push(BLANK.to_string());
        }
        run_ins.clear();
        run_del.clear();
    };
    for mv in moves {
        match mv {
            Move::Diag => {
                flush(&mut x_bar, &mut y_bar, &mut run_ins, &mut run_del);
                x_bar.push(xs[xi].clone());
                y_bar.push(ys[yj].clone());
                xi += 1;
                yj += 1;
            }
            Move::Del => {
                run_del.push(xi);
                xi += 1;
            }
            Move::Ins => {
                run_ins.push(yj);
                yj += 1;
            }
        }
    }
    flush(&mut x_bar, &mut y_bar, &mut run_ins, &mut run_del);

    debug_assert!(x_bar.len() <= 2 * x.capacity().max(y.capacity()));
    let edit_positions: Vec<usize> = (1..=x_bar.len())
        .filter(|&p| x_bar[p - 1] != y_bar[p - 1])
        .collect();
    Alignment { x_bar, y_bar, edit_positions, score: score[n][m] }
}

/// Deduplicated set of first edits of all edit sequences from `x` to `y`.
pub fn first_edits(x: &Document, y: &Document, sim: &dyn SimilarityProvider) -> Vec<Edit> {
    align(x, y, sim).first_edits()
}

/// Serializable view of an alignment: the padded pair plus one op record
/// per edit position. For deletions the word is the deleted token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentJson {
    pub x_bar: Vec<Word>,
    pub y_bar: Vec<Word>,
    pub ops: Vec<AlignOpJson>,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignOpJson {
    pub pos: usize,
    pub kind: AlignKind,
    pub word: Word,
}

impl From<&Alignment> for AlignmentJson {
    fn from(a: &Alignment) -> AlignmentJson {
        let ops = a
            .edit_positions()
            .iter()
            .map(|&pos| {
                let kind = a.kind_at(pos).expect("edit position");
                let word = match kind {
                    AlignKind::Del => a.x_bar()[pos - 1].clone(),
                    _ => a.y_bar()[pos - 1].clone(),
                };
                AlignOpJson { pos, kind, word }
            })
            .collect();
        AlignmentJson { x_bar: a.x_bar().to_vec(), y_bar: a.y_bar().to_vec(), ops, score: a.score() }
    }
}
