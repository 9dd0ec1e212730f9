//! The session loop: user and agent alternate turns editing a draft
//! toward a hidden goal, under a horizon, a satisfaction tolerance, and
//! a strict user-edit budget split evenly across episodes.

use crate::align::{align, AlignKind, SimilarityProvider, TrigramSimilarity};
use crate::doc::{Actor, Document, Edit, EditOp, Mark, Word};
use crate::metrics;
use crate::user::{UserSim, UserSimConfig, UserSimError};

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// The scoring function `s(.; G)` used for stopping checks and the
/// per-turn trace scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFn {
    #[default]
    TokenF1,
    Chrf,
    Exact,
}

impl ScoreFn {
    pub fn score(self, draft: &Document, goal: &Document) -> f64 {
        match self {
            ScoreFn::TokenF1 => metrics::token_f1(draft, goal),
            ScoreFn::Chrf => metrics::chrf(draft, goal),
            ScoreFn::Exact => {
                if draft.same_tokens(goal) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Convenience wrapper matching the trace vocabulary.
pub fn score(draft: &Document, goal: &Document, f: ScoreFn) -> f64 {
    f.score(draft, goal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Document capacity `L`.
    pub capacity: usize,
    /// Maximum number of episodes `H`.
    pub horizon: usize,
    /// Satisfaction tolerance: stop once the score exceeds `1 - tolerance`.
    pub tolerance: f64,
    /// Total user-edit budget `N`.
    pub budget: usize,
    /// Number of episodes `M` the budget is split over; each user turn
    /// makes `N / M` edits. `N` must be divisible by `M`.
    pub episodes: usize,
    pub score_fn: ScoreFn,
    /// Per-episode cost in the recorded reward `s(A_T; G) - c * T`.
    pub step_cost: f64,
    pub seed: u64,
    pub user: UserSimConfig,
}

impl SessionConfig {
    pub fn new(budget: usize, episodes: usize) -> SessionConfig {
        SessionConfig {
            capacity: crate::doc::DEFAULT_CAPACITY,
            horizon: 8,
            tolerance: 0.05,
            budget,
            episodes,
            score_fn: ScoreFn::TokenF1,
            step_cost: 0.0,
            seed: 0,
            user: UserSimConfig::new(1.max(budget / episodes.max(1))),
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.horizon == 0 {
            return Err(SessionError::HorizonZero);
        }
        if self.episodes == 0 || !self.budget.is_multiple_of(self.episodes) {
            return Err(SessionError::IndivisibleBudget { budget: self.budget, episodes: self.episodes });
        }
        Ok(())
    }

    /// Edits per user turn, `N / M`.
    pub fn edits_per_episode(&self) -> usize {
        self.budget / self.episodes
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("budget {budget} is not divisible by {episodes} episodes")]
    IndivisibleBudget { budget: usize, episodes: usize },
    #[error("horizon must be at least 1")]
    HorizonZero,
    #[error("goal content length {len} exceeds capacity {capacity}")]
    GoalTooLong { len: usize, capacity: usize },
    #[error("policy failed: {0}")]
    PolicyFailure(String),
    #[error("user simulator: {0}")]
    User(#[from] UserSimError),
}

/// Session status. Budget exhaustion ends the session after the agent
/// turn of the final funded episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    StoppedSatisfied,
    StoppedHorizon,
    StoppedBudget,
}

/// A token the agent deleted on its last turn, kept for the state diff.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GhostToken {
    /// Location the deletion was applied at (coordinates of the document
    /// it was applied to).
    pub location: usize,
    pub word: Word,
}

/// Per-token diff label over the latest user draft.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffLabel {
    Plain,
    UserInserted,
    AgentInserted,
}

/// The agent-visible state: the last three drafts as a diff. The goal is
/// never part of this view.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    /// `U_{h-1}`: the user draft before the agent's previous turn.
    pub u_prev: Document,
    /// `A_{h-1}`: the agent's previous draft.
    pub a_prev: Document,
    /// `U_h`: the draft the agent must now revise.
    pub u_cur: Document,
    /// One label per `u_cur` token.
    pub labels: Vec<DiffLabel>,
    /// Tokens deleted by the agent on its previous turn.
    pub ghosts: Vec<GhostToken>,
    /// Every word the user ever inserted or substituted in, persisted
    /// across the whole session.
    pub user_words: BTreeSet<Word>,
}

impl PolicyState {
    /// Initial-turn state for a fresh draft.
    pub fn initial(u_cur: Document) -> PolicyState {
        let blank = Document::blank(u_cur.capacity());
        let labels = labels_from_marks(&u_cur);
        let user_words = user_words_of(&u_cur);
        PolicyState { u_prev: blank.clone(), a_prev: blank, u_cur, labels, ghosts: Vec::new(), user_words }
    }
}

fn labels_from_marks(doc: &Document) -> Vec<DiffLabel> {
    doc.marks()
        .iter()
        .map(|m| match m {
            Mark::None => DiffLabel::Plain,
            Mark::UserInserted => DiffLabel::UserInserted,
            Mark::AgentInserted => DiffLabel::AgentInserted,
        })
        .collect()
}

fn user_words_of(doc: &Document) -> BTreeSet<Word> {
    doc.tokens()
        .iter()
        .zip(doc.marks())
        .filter(|(_, m)| **m == Mark::UserInserted)
        .map(|(t, _)| t.clone())
        .collect()
}

/// What an agent returns for its turn. Edit-based agents report the edit
/// sequence they applied so deletions and provenance flow exactly;
/// draft-rewriting agents return only the document and the environment
/// recovers the diff by alignment.
#[derive(Debug, Clone)]
pub struct AgentTurn {
    pub draft: Document,
    pub edits: Option<Vec<Edit>>,
}

impl AgentTurn {
    pub fn draft_only(draft: Document) -> AgentTurn {
        AgentTurn { draft, edits: None }
    }

    pub fn with_edits(draft: Document, edits: Vec<Edit>) -> AgentTurn {
        AgentTurn { draft, edits: Some(edits) }
    }
}

/// An agent policy driving one side of the session. Implementations are
/// re-seeded per session so traces reproduce bit for bit.
pub trait Agent {
    fn name(&self) -> &str;
    fn reset(&mut self, _seed: u64) {}
    fn act(&mut self, state: &PolicyState) -> Result<AgentTurn, String>;
}

/// One trace record per turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub h: usize,
    pub actor: Actor,
    pub draft: Document,
    pub edits: Vec<Edit>,
    pub score: Option<f64>,
    pub budget_left: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub goal: Option<Document>,
    pub policy: String,
    pub config: SessionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Number of completed episodes `T`.
    pub t: usize,
    pub status: Status,
    pub final_score: Option<f64>,
    /// `s(A_T; G) - step_cost * T`. Recorded only; never trained on.
    pub reward: Option<f64>,
}

/// A full session trace: header, one record per turn, summary. Persists
/// as JSON Lines with one tagged record per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub header: TraceHeader,
    pub turns: Vec<TurnRecord>,
    pub summary: TraceSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Turn(TurnRecord),
    Summary(TraceSummary),
}

impl SessionTrace {
    /// Total user edits recorded; the budget ledger.
    pub fn user_edit_total(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| t.actor == Actor::User)
            .map(|t| t.edits.len())
            .sum()
    }

    pub fn final_draft(&self) -> Option<&Document> {
        self.turns.iter().rev().find(|t| t.actor == Actor::Agent).map(|t| &t.draft)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: TraceLine| {
            out.push_str(&serde_json::to_string(&line).expect("trace serializes"));
            out.push('\n');
        };
        push(TraceLine::Header(self.header.clone()));
        for t in &self.turns {
            push(TraceLine::Turn(t.clone()));
        }
        push(TraceLine::Summary(self.summary.clone()));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<SessionTrace, serde_json::Error> {
        let mut header = None;
        let mut turns = Vec::new();
        let mut summary = None;
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<TraceLine>(line)? {
                TraceLine::Header(head) => header = Some(head),
                TraceLine::Turn(t) => turns.push(t),
                TraceLine::Summary(s) => summary = Some(s),
            }
        }
        let header = header.ok_or_else(|| serde::de::Error::custom("missing header record"))?;
        let summary = summary.ok_or_else(|| serde::de::Error::custom("missing summary record"))?;
        Ok(SessionTrace { header, turns, summary })
    }

    /// Re-applies every recorded edit sequence and checks each recorded
    /// draft, returning the final draft. Draft-only turns are taken as
    /// recorded.
    pub fn replay_edits(&self) -> Result<Document, String> {
        let capacity = self.header.config.capacity;
        let mut current = Document::blank(capacity);
        for turn in &self.turns {
            if turn.edits.is_empty() && !turn.draft.same_tokens(&current) {
                current = turn.draft.clone();
                continue;
            }
            let next = current
                .apply_sequence(&turn.edits, turn.actor)
                .map_err(|e| format!("turn h={} {:?}: {e}", turn.h, turn.actor))?;
            if !next.same_tokens(&turn.draft) {
                return Err(format!(
                    "turn h={} {:?}: replay produced {next}, trace has {}",
                    turn.h, turn.actor, turn.draft
                ));
            }
            current = next;
        }
        Ok(current)
    }
}

/// A running session. `run_session` drives it to completion against the
/// simulated user; the REPL drives it turn by turn with manual edits.
pub struct Session<'a> {
    cfg: SessionConfig,
    goal: Option<Document>,
    sim: &'a dyn SimilarityProvider,
    user: Option<UserSim<'a>>,
    status: Status,
    episode: usize,
    budget_left: usize,
    /// `U_{h-1}`: the user draft of the previous episode.
    prev_user_draft: Document,
    /// `A_{h-1}`: the agent draft of the previous episode.
    prev_agent_draft: Document,
    /// The live draft: `U_h` between the user and agent turns of an
    /// episode, `A_h` after the agent turn.
    current: Document,
    /// Ghosts from the agent's most recent turn.
    last_agent_deletions: Vec<GhostToken>,
    user_words: BTreeSet<Word>,
    turns: Vec<TurnRecord>,
    policy_name: String,
}

impl<'a> Session<'a> {
    pub fn new(
        goal: Option<Document>,
        cfg: SessionConfig,
        sim: &'a dyn SimilarityProvider,
    ) -> Result<Session<'a>, SessionError> {
        cfg.validate()?;
        if let Some(g) = &goal {
            if g.content_len() > cfg.capacity {
                return Err(SessionError::GoalTooLong { len: g.content_len(), capacity: cfg.capacity });
            }
        }
        let mut user_cfg = cfg.user.clone();
        user_cfg.edits_per_episode = cfg.edits_per_episode().max(1);
        // Derive the per-session user seed from the session seed so
        // distinct sessions with one config stay decorrelated.
        user_cfg.rng_seed = cfg.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(user_cfg.rng_seed);
        let user = if goal.is_some() { Some(UserSim::new(user_cfg)?) } else { None };
        let blank = Document::blank(cfg.capacity);
        Ok(Session {
            cfg,
            goal,
            sim,
            user,
            status: Status::Running,
            episode: 0,
            budget_left: 0,
            prev_user_draft: blank.clone(),
            prev_agent_draft: blank.clone(),
            current: blank,
            last_agent_deletions: Vec::new(),
            user_words: BTreeSet::new(),
            turns: Vec::new(),
            policy_name: String::new(),
        })
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn budget_left(&self) -> usize {
        self.budget_left
    }

    pub fn current_draft(&self) -> &Document {
        &self.current
    }

    pub fn goal(&self) -> Option<&Document> {
        self.goal.as_ref()
    }

    fn score_of(&self, draft: &Document) -> Option<f64> {
        self.goal.as_ref().map(|g| self.cfg.score_fn.score(draft, g))
    }

    /// The satisfaction/budget check at a user-turn boundary. Returns
    /// false when the session has ended.
    pub fn check_boundary(&mut self) -> bool {
        if self.status != Status::Running {
            return false;
        }
        if let Some(s) = self.score_of(&self.current) {
            if s > 1.0 - self.cfg.tolerance {
                self.status = Status::StoppedSatisfied;
                return false;
            }
        }
        if self.episode >= self.cfg.horizon {
            self.status = Status::StoppedHorizon;
            return false;
        }
        if self.episode > 0 && self.budget_left == 0 {
            self.status = Status::StoppedBudget;
            return false;
        }
        true
    }

    fn begin_episode(&mut self) {
        if self.episode == 0 {
            self.budget_left = self.cfg.budget;
        }
        self.episode += 1;
        self.prev_agent_draft = self.current.clone();
    }

    /// Simulated user turn. Consumes up to `N / M` edits of the budget.
    pub fn user_turn_sim(&mut self) -> Result<Document, SessionError> {
        self.begin_episode();
        let goal = self.goal.clone().expect("simulated user requires a goal");
        let n = self.cfg.edits_per_episode().min(self.budget_left);
        let (draft, edits) = if n == 0 || self.current.same_tokens(&goal) {
            (self.current.clone(), Vec::new())
        } else {
            let user = self.user.as_mut().expect("user simulator present");
            user.step(&self.current, &goal, Some(n), self.sim)?
        };
        self.budget_left -= edits.len();
        self.finish_user_turn(draft, edits)
    }

    /// Manual user turn (REPL): the caller supplies the edits, applied in
    /// sequence to the current draft.
    pub fn user_turn_manual(&mut self, edits: Vec<Edit>) -> Result<Document, SessionError> {
        self.begin_episode();
        let draft = self
            .current
            .apply_sequence(&edits, Actor::User)
            .map_err(|e| SessionError::PolicyFailure(format!("manual user edits: {e}")))?;
        self.budget_left = self.budget_left.saturating_sub(edits.len());
        self.finish_user_turn(draft, edits)
    }

    fn finish_user_turn(&mut self, draft: Document, edits: Vec<Edit>) -> Result<Document, SessionError> {
        for w in draft
            .tokens()
            .iter()
            .zip(draft.marks())
            .filter(|(_, m)| **m == Mark::UserInserted)
            .map(|(t, _)| t)
        {
            self.user_words.insert(w.clone());
        }
        self.turns.push(TurnRecord {
            h: self.episode,
            actor: Actor::User,
            draft: draft.clone(),
            edits,
            score: self.score_of(&draft),
            budget_left: self.budget_left,
        });
        self.current = draft.clone();
        Ok(draft)
    }

    /// Encodes the agent-visible state for the pending agent turn:
    /// `(U_{h-1}, A_{h-1}, U_h)` plus the diff labels.
    pub fn encode_state(&self) -> PolicyState {
        let u_cur = self.current.clone();
        let labels = labels_from_marks(&u_cur);
        PolicyState {
            u_prev: self.prev_user_draft.clone(),
            a_prev: self.prev_agent_draft.clone(),
            u_cur,
            labels,
            ghosts: self.last_agent_deletions.clone(),
            user_words: self.user_words.clone(),
        }
    }

    /// Agent turn: asks the policy for a draft, reconciles provenance,
    /// and records the turn.
    pub fn agent_turn(&mut self, agent: &mut dyn Agent) -> Result<Document, SessionError> {
        let state = self.encode_state();
        let turn = agent.act(&state).map_err(SessionError::PolicyFailure)?;
        let (draft, edits, ghosts) = reconcile_agent_turn(&state.u_cur, turn, self.sim);
        self.last_agent_deletions = ghosts;
        self.turns.push(TurnRecord {
            h: self.episode,
            actor: Actor::Agent,
            draft: draft.clone(),
            edits: edits.unwrap_or_default(),
            score: self.score_of(&draft),
            budget_left: self.budget_left,
        });
        self.prev_user_draft = std::mem::replace(&mut self.current, draft.clone());
        Ok(draft)
    }

    /// Finishes the session and emits the trace.
    pub fn into_trace(mut self, policy_name: &str) -> SessionTrace {
        self.policy_name = policy_name.to_string();
        let t = self.episode;
        let final_score = self.score_of(&self.current);
        let reward = final_score.map(|s| s - self.cfg.step_cost * t as f64);
        SessionTrace {
            header: TraceHeader {
                goal: self.goal.clone(),
                policy: self.policy_name.clone(),
                config: self.cfg.clone(),
            },
            turns: self.turns,
            summary: TraceSummary { t, status: self.status, final_score, reward },
        }
    }
}

/// Reconciles an agent turn: preserves user marks, recovers edits and
/// deletions by alignment when the agent rewrote the draft wholesale.
fn reconcile_agent_turn(
    u_cur: &Document,
    turn: AgentTurn,
    sim: &dyn SimilarityProvider,
) -> (Document, Option<Vec<Edit>>, Vec<GhostToken>) {
    match turn.edits {
        Some(edits) => {
            // Trust the edit trail: replay it to capture deleted words.
            let mut ghosts = Vec::new();
            let mut doc = u_cur.clone();
            for e in &edits {
                if e.op == EditOp::Del {
                    if let Some(w) = doc.token_at(e.location) {
                        ghosts.push(GhostToken { location: e.location, word: w.clone() });
                    }
                }
                doc = doc.apply(e, Actor::Agent).expect("agent edit trail replays");
            }
            debug_assert!(doc.same_tokens(&turn.draft));
            (doc, Some(edits), ghosts)
        }
        None => {
            // Draft rewrite: recover the diff from the alignment between
            // the input and the returned draft. Matched tokens keep their
            // marks; new tokens are agent insertions.
            let aln = align(u_cur, &turn.draft, sim);
            let mut tokens = Vec::new();
            let mut marks = Vec::new();
            let mut ghosts = Vec::new();
            let mut xi = 0usize;
            for pos in 1..=aln.x_bar().len() {
                match aln.kind_at(pos) {
                    None => {
                        if aln.x_bar()[pos - 1] != crate::doc::BLANK {
                            // Conserved token.
                            tokens.push(u_cur.tokens()[xi].clone());
                            marks.push(u_cur.marks()[xi]);
                            xi += 1;
                        }
                    }
                    Some(AlignKind::Ins) => {
                        tokens.push(aln.y_bar()[pos - 1].clone());
                        marks.push(Mark::AgentInserted);
                    }
                    Some(AlignKind::Sub) => {
                        tokens.push(aln.y_bar()[pos - 1].clone());
                        marks.push(Mark::AgentInserted);
                        xi += 1;
                    }
                    Some(AlignKind::Del) => {
                        ghosts.push(GhostToken {
                            location: pos - aln.x_bar()[..pos - 1].iter().filter(|t| *t == crate::doc::BLANK).count(),
                            word: u_cur.tokens()[xi].clone(),
                        });
                        xi += 1;
                    }
                }
            }
            let doc = Document::from_parts(tokens, marks, u_cur.capacity())
                .expect("recovered draft fits capacity");
            debug_assert!(doc.same_tokens(&turn.draft));
            (doc, None, ghosts)
        }
    }
}

/// Runs a full session of the configured protocol: at each episode the
/// user checks satisfaction, edits, and the agent responds.
pub fn run_session(
    goal: &Document,
    agent: &mut dyn Agent,
    cfg: &SessionConfig,
) -> Result<SessionTrace, SessionError> {
    let sim = TrigramSimilarity::new();
    run_session_with(goal, agent, cfg, &sim)
}

pub fn run_session_with(
    goal: &Document,
    agent: &mut dyn Agent,
    cfg: &SessionConfig,
    sim: &dyn SimilarityProvider,
) -> Result<SessionTrace, SessionError> {
    let mut session = Session::new(Some(goal.clone()), cfg.clone(), sim)?;
    agent.reset(cfg.seed);
    while session.check_boundary() {
        session.user_turn_sim()?;
        session.agent_turn(agent)?;
    }
    let name = agent.name().to_string();
    Ok(session.into_trace(&name))
}
