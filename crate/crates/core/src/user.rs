//! The simulated user: goal-directed single-word edits selected under
//! configurable heuristics.
//!
//! Each turn the user realigns the draft against the goal, filters the
//! candidate first edits through the enabled heuristics, ranks what
//! survives, and applies edits one at a time until the per-turn budget
//! is spent. Selection is sequential, so every returned edit is valid on
//! the document produced by its predecessors.

use crate::align::{align, AlignKind, EditCandidate, SimilarityProvider};
use crate::doc::{Actor, Document, Edit, EditOp, TokenGrouper, Word, WordLevelGrouper};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Inverse document frequency over a corpus, with add-one smoothing so
/// unseen words take the maximal value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    doc_frequency: BTreeMap<Word, u64>,
    corpus_size: u64,
}

impl IdfTable {
    /// Builds the table from a document stream. Each document counts a
    /// word at most once.
    pub fn build<'a, I>(corpus: I) -> Result<IdfTable, UserSimError>
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let mut doc_frequency: BTreeMap<Word, u64> = BTreeMap::new();
        let mut corpus_size = 0u64;
        for doc in corpus {
            corpus_size += 1;
            let seen: BTreeSet<&Word> = doc.tokens().iter().collect();
            for w in seen {
                *doc_frequency.entry(w.clone()).or_insert(0) += 1;
            }
        }
        if corpus_size == 0 {
            return Err(UserSimError::EmptyCorpus);
        }
        Ok(IdfTable { doc_frequency, corpus_size })
    }

    /// Hand-built table for tests and fixtures.
    pub fn from_counts(doc_frequency: BTreeMap<Word, u64>, corpus_size: u64) -> IdfTable {
        IdfTable { doc_frequency, corpus_size }
    }

    pub fn corpus_size(&self) -> u64 {
        self.corpus_size
    }

    /// `ln((N + 1) / (df + 1)) + 1`; unseen words get `ln(N + 1) + 1`.
    pub fn idf(&self, word: &str) -> f64 {
        let df = self.doc_frequency.get(word).copied().unwrap_or(0);
        ((self.corpus_size + 1) as f64 / (df + 1) as f64).ln() + 1.0
    }

    /// Writes a TSV cache: a `#corpus_size` header, then one
    /// `word<TAB>df<TAB>idf` row per word (the idf column is for human
    /// inspection; df reconstructs the table exactly).
    pub fn write_tsv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#corpus_size\t{}", self.corpus_size)?;
        for (w, df) in &self.doc_frequency {
            writeln!(out, "{w}\t{df}\t{:.6}", self.idf(w))?;
        }
        Ok(())
    }

    pub fn read_tsv<R: std::io::BufRead>(input: R) -> std::io::Result<IdfTable> {
        let mut corpus_size = None;
        let mut doc_frequency = BTreeMap::new();
        for line in input.lines() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("#corpus_size\t") {
                corpus_size = rest.trim().parse::<u64>().ok();
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(word), Some(df)) = (fields.next(), fields.next()) else {
                return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "bad idf row"));
            };
            let df: u64 = df
                .parse()
                .map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidData, "bad df"))?;
            doc_frequency.insert(word.to_string(), df);
        }
        let corpus_size = corpus_size
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "missing #corpus_size header"))?;
        Ok(IdfTable { doc_frequency, corpus_size })
    }
}

/// Selection heuristics for user edits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    /// Rank candidates by the IDF of the edited word, most informative
    /// first. Deletions rank by negated IDF: uninformative words go
    /// first.
    RankingIdf,
    /// Only edits adjacent to a conserved match in the alignment. On a
    /// blank draft, location 1 counts as adjacent to the start.
    Adjacent,
    /// Edits of one turn must form a contiguous block on the goal side.
    Contiguous,
    /// Edits must cover whole words when tokens subdivide words.
    CompleteWords,
}

/// Configuration of the simulated user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSimConfig {
    /// Edits per episode, `n`.
    pub edits_per_episode: usize,
    pub heuristics: BTreeSet<Heuristic>,
    pub idf_table: Option<IdfTable>,
    pub rng_seed: u64,
}

impl UserSimConfig {
    pub fn new(edits_per_episode: usize) -> UserSimConfig {
        UserSimConfig {
            edits_per_episode,
            heuristics: BTreeSet::new(),
            idf_table: None,
            rng_seed: 0,
        }
    }

    pub fn with_heuristics<I: IntoIterator<Item = Heuristic>>(mut self, hs: I) -> UserSimConfig {
        self.heuristics = hs.into_iter().collect();
        self
    }

    pub fn with_idf(mut self, table: IdfTable) -> UserSimConfig {
        self.idf_table = Some(table);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> UserSimConfig {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), UserSimError> {
        if self.edits_per_episode == 0 {
            return Err(UserSimError::InvalidConfig("edits_per_episode must be at least 1".into()));
        }
        let ranking = self.heuristics.contains(&Heuristic::RankingIdf);
        if ranking != self.idf_table.is_some() {
            return Err(UserSimError::InvalidConfig(
                "idf_table must be present exactly when ranking_idf is enabled".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UserSimError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("draft already equals the goal")]
    AlreadyAtGoal,
    #[error("invalid user simulator config: {0}")]
    InvalidConfig(String),
}

/// A seeded, stateful user simulator. One instance per session; the RNG
/// advances across turns but never leaks between sessions.
pub struct UserSim<'a> {
    cfg: UserSimConfig,
    grouper: &'a dyn TokenGrouper,
    rng: ChaCha12Rng,
}

const WORD_GROUPER: WordLevelGrouper = WordLevelGrouper;

impl<'a> UserSim<'a> {
    pub fn new(cfg: UserSimConfig) -> Result<UserSim<'a>, UserSimError> {
        cfg.validate()?;
        let rng = ChaCha12Rng::seed_from_u64(cfg.rng_seed);
        Ok(UserSim { cfg, grouper: &WORD_GROUPER, rng })
    }

    pub fn with_grouper(mut self, grouper: &'a dyn TokenGrouper) -> UserSim<'a> {
        self.grouper = grouper;
        self
    }

    pub fn config(&self) -> &UserSimConfig {
        &self.cfg
    }

    /// Selects up to `budget` goal-directed edits (defaults to the
    /// configured per-episode budget). Fewer are returned only when the
    /// draft reaches the goal first; if the heuristics starve the
    /// candidate set, they are relaxed contiguous-first, then adjacent.
    pub fn propose_edits(
        &mut self,
        draft: &Document,
        goal: &Document,
        budget: Option<usize>,
        sim: &dyn SimilarityProvider,
    ) -> Result<Vec<Edit>, UserSimError> {
        if draft.same_tokens(goal) {
            return Err(UserSimError::AlreadyAtGoal);
        }
        let budget = budget.unwrap_or(self.cfg.edits_per_episode);
        let mut current = draft.clone();
        let mut chosen: Vec<Edit> = Vec::new();
        // Goal-side coordinates touched so far, for the contiguity check.
        let mut footprint: Vec<i64> = Vec::new();
        let goal_groups = self.grouper.group_ids(goal.tokens());
        // A multi-token word group opened this turn must be finished
        // before any other edit (complete-words heuristic).
        let mut open_group: Option<usize> = None;

        while chosen.len() < budget && !current.same_tokens(goal) {
            let alignment = align(&current, goal, sim);
            let candidates = alignment.first_candidates();
            if candidates.is_empty() {
                break;
            }
            // The open group stays open only while it still has pending
            // candidates.
            open_group = open_group
                .filter(|g| candidates.iter().any(|c| goal_group_of(c, &goal_groups) == Some(*g)));
            let pick = self.select(SelectArgs {
                candidates: &candidates,
                draft: &current,
                footprint: &footprint,
                remaining: budget - chosen.len(),
                goal_groups: &goal_groups,
                open_group,
            });
            let Some(pick) = pick else { break };
            if self.cfg.heuristics.contains(&Heuristic::CompleteWords) {
                open_group = goal_group_of(&pick, &goal_groups);
            }
            footprint.push(pick.goal_coord);
            current = current
                .apply(&pick.edit, Actor::User)
                .expect("candidate edits are valid on the current draft");
            chosen.push(pick.edit);
        }
        Ok(chosen)
    }

    fn select(&mut self, args: SelectArgs<'_>) -> Option<EditCandidate> {
        let hs = &self.cfg.heuristics;
        let use_adjacent = hs.contains(&Heuristic::Adjacent);
        let use_contiguous = hs.contains(&Heuristic::Contiguous);
        let use_complete = hs.contains(&Heuristic::CompleteWords);

        // Relaxation ladder: full filters, then drop contiguity, then
        // drop adjacency. Complete-words only groups tokens and cannot
        // starve a word-level candidate set, so it is never relaxed.
        let ladder = [
            (use_adjacent, use_contiguous),
            (use_adjacent, false),
            (false, false),
        ];
        for (adjacent_on, contiguous_on) in ladder {
            let surviving: Vec<&EditCandidate> = args
                .candidates
                .iter()
                .filter(|c| {
                    if adjacent_on && !self.is_adjacent(c, args.draft) {
                        return false;
                    }
                    if contiguous_on && !is_contiguous(c, args.footprint) {
                        return false;
                    }
                    if use_complete && !fits_complete_words(c, &args) {
                        return false;
                    }
                    true
                })
                .collect();
            if !surviving.is_empty() {
                return Some(self.rank(surviving));
            }
        }
        None
    }

    fn is_adjacent(&self, c: &EditCandidate, draft: &Document) -> bool {
        if draft.is_empty() {
            // No matches exist yet; treat the head of the document as
            // adjacent so the first episode can make progress.
            return c.edit.location == 1;
        }
        c.adjacent_to_match
    }

    /// Ranking: IDF of the edited word descending (negated for
    /// deletions), insertions before substitutions before deletions on
    /// ties, then a seeded shuffle index for the final tie-break.
    fn rank(&mut self, mut surviving: Vec<&EditCandidate>) -> EditCandidate {
        let ranking = self.cfg.heuristics.contains(&Heuristic::RankingIdf);
        let tie: Vec<u64> = (0..surviving.len()).map(|_| self.rng.gen()).collect();
        let mut order: Vec<usize> = (0..surviving.len()).collect();
        if ranking {
            let idf = self.cfg.idf_table.as_ref().expect("validated config");
            let key = |c: &EditCandidate| -> f64 {
                match c.kind {
                    AlignKind::Del => -idf.idf(c.x_word.as_deref().unwrap_or("")),
                    _ => idf.idf(&c.edit.word),
                }
            };
            order.sort_by(|&a, &b| {
                let (ka, kb) = (key(surviving[a]), key(surviving[b]));
                kb.partial_cmp(&ka)
                    .unwrap()
                    .then_with(|| op_priority(surviving[a].edit.op).cmp(&op_priority(surviving[b].edit.op)))
                    .then_with(|| tie[a].cmp(&tie[b]))
            });
        } else {
            order.sort_by(|&a, &b| tie[a].cmp(&tie[b]));
        }
        let best = order[0];
        
        surviving.swap_remove(best).clone()
    }
}

fn op_priority(op: EditOp) -> u8 {
    match op {
        EditOp::Ins => 0,
        EditOp::Sub => 1,
        EditOp::Del => 2,
    }
}

fn is_contiguous(c: &EditCandidate, footprint: &[i64]) -> bool {
    if footprint.is_empty() {
        return true;
    }
    footprint.iter().any(|&f| (c.goal_coord - f).abs() <= 2)
}

/// Arguments of one selection step.
struct SelectArgs<'a> {
    candidates: &'a [EditCandidate],
    draft: &'a Document,
    footprint: &'a [i64],
    remaining: usize,
    goal_groups: &'a [usize],
    /// A word group opened this turn and not yet finished.
    open_group: Option<usize>,
}

/// Complete-words check: a started multi-token word group must be
/// finished before anything else, and a group may only be opened when it
/// fits in the remaining budget.
fn fits_complete_words(c: &EditCandidate, args: &SelectArgs<'_>) -> bool {
    let group = goal_group_of(c, args.goal_groups);
    if let Some(open) = args.open_group {
        return group == Some(open);
    }
    let Some(group) = group else {
        // Deletions have no goal-side word; they never split one.
        return true;
    };
    let group_size = args
        .candidates
        .iter()
        .filter(|o| goal_group_of(o, args.goal_groups) == Some(group))
        .count();
    group_size <= args.remaining
}

fn goal_group_of(c: &EditCandidate, goal_groups: &[usize]) -> Option<usize> {
    match c.kind {
        AlignKind::Del => None,
        _ => {
            let idx = (c.goal_coord / 2) as usize;
            goal_groups.get(idx).copied()
        }
    }
}

/// One simulated user turn: proposes and applies edits, marking touched
/// tokens as user inserted.
pub fn user_step(
    draft: &Document,
    goal: &Document,
    cfg: &UserSimConfig,
    sim: &dyn SimilarityProvider,
) -> Result<(Document, Vec<Edit>), UserSimError> {
    let mut user = UserSim::new(cfg.clone())?;
    user.step(draft, goal, None, sim)
}

/// One-shot edit proposal with a fresh simulator seeded from the config.
pub fn propose_edits(
    draft: &Document,
    goal: &Document,
    cfg: &UserSimConfig,
    sim: &dyn SimilarityProvider,
) -> Result<Vec<Edit>, UserSimError> {
    let mut user = UserSim::new(cfg.clone())?;
    user.propose_edits(draft, goal, None, sim)
}

impl<'a> UserSim<'a> {
    /// Proposes and applies a turn's edits on `draft`.
    pub fn step(
        &mut self,
        draft: &Document,
        goal: &Document,
        budget: Option<usize>,
        sim: &dyn SimilarityProvider,
    ) -> Result<(Document, Vec<Edit>), UserSimError> {
        let edits = self.propose_edits(draft, goal, budget, sim)?;
        let doc = draft
            .apply_sequence(&edits, Actor::User)
            .expect("proposed edits are sequentially consistent");
        Ok((doc, edits))
    }
}
