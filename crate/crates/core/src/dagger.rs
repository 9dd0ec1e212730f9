//! Imitation training for edit policies: expert-mixture roll-ins with an
//! annealed mixing coefficient, aggregation of visited states, and a
//! sampled surrogate objective over alignment edit trajectories, with
//! optional denoising roll-ins that intersperse random edits.

use crate::align::{align, Alignment, SimilarityProvider, TrigramSimilarity};
use crate::decode::{DecodeConfig, DecodingAgent};
use crate::doc::{Actor, Document, Edit, EditOp, Word};
use crate::env::{run_session_with, Agent, AgentTurn, PolicyState, SessionConfig};
use crate::policy::{CorpusStats, EditPolicy, ExpertPolicy, LogLinearEditPolicy, SurrogatePoint};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaggerConfig {
    pub iterations: usize,
    /// Iterations before annealing starts; the mixing coefficient stays
    /// at 1 throughout.
    pub warmup: usize,
    /// Annealing rate: the mixing coefficient after warmup is
    /// `anneal_rate^(t - warmup)`.
    pub anneal_rate: f64,
    /// States collected per iteration.
    pub batch: usize,
    /// Probability of replacing a goal-directed edit with a random one
    /// when sampling training roll-ins.
    pub noise: f64,
    /// SGD draws from the aggregated dataset per iteration.
    pub sgd_steps: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Probe goals evaluated per iteration for the learning curve.
    pub eval_goals: usize,
    pub seed: u64,
    pub session: SessionConfig,
    pub decode: DecodeConfig,
}

impl DaggerConfig {
    pub fn new(session: SessionConfig) -> DaggerConfig {
        DaggerConfig {
            iterations: 600,
            warmup: 300,
            anneal_rate: 0.9,
            batch: 10_000,
            noise: 0.3,
            sgd_steps: 200,
            learning_rate: 0.1,
            clip_norm: 10.0,
            eval_goals: 4,
            seed: 0,
            session,
            decode: DecodeConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.anneal_rate > 0.0 && self.anneal_rate <= 1.0) {
            return Err(TrainError::InvalidConfig("anneal_rate must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(TrainError::InvalidConfig("noise must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Mixing coefficient at 0-based iteration `t`: 1 through warmup,
    /// then decaying geometrically.
    pub fn beta(&self, t: usize) -> f64 {
        self.anneal_rate.powi(t.saturating_sub(self.warmup) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("goal sampler is empty")]
    EmptyGoalSampler,
    #[error("loss diverged (non-finite) at iteration {0}")]
    DivergedLoss(usize),
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
}

/// Builds the surrogate point for a sampled permutation prefix: the
/// prefix edits are applied to `u_h`, and each not-yet-applied element of
/// the alignment contributes its edit as computed at the head of the
/// remaining sequence.
///
/// `sigma` is a permutation of the alignment's edit elements and
/// `k in 1..=M+1` the sampled prefix length plus one; `k = M+1` yields
/// the stop term at the finished draft. Weights are `(M+1)/(M-k+1)` and
/// `M+1` respectively.
pub fn surrogate_point(
    goal: &Document,
    u_h: &Document,
    aln: &Alignment,
    sigma: &[usize],
    k: usize,
) -> SurrogatePoint {
    let m = aln.edit_count();
    assert_eq!(sigma.len(), m, "sigma must permute the edit set");
    assert!((1..=m + 1).contains(&k), "k out of range");
    if k == m + 1 {
        let full = aln.extract_edit_sequence(sigma).expect("valid permutation");
        let doc = u_h.apply_sequence(&full, Actor::Agent).expect("alignment edits apply");
        debug_assert!(doc.same_tokens(goal));
        return SurrogatePoint::Stop { doc, weight: (m + 1) as f64 };
    }
    // Location bookkeeping: an element's edit depends only on which
    // elements precede it, so the k-th edit of any completion of the
    // prefix is the element placed at index k-1 of a reordered sigma.
    let prefix = &sigma[..k - 1];
    let full = aln.extract_edit_sequence(sigma).expect("valid permutation");
    let doc = u_h.apply_sequence(&full[..k - 1], Actor::Agent).expect("prefix applies");
    let mut next_edits = Vec::with_capacity(m - (k - 1));
    for &element in &sigma[k - 1..] {
        let mut reordered = Vec::with_capacity(k);
        reordered.extend_from_slice(prefix);
        reordered.push(element);
        for &other in sigma.iter().filter(|e| **e != element && !prefix.contains(e)) {
            reordered.push(other);
        }
        let edits = aln.extract_edit_sequence(&reordered).expect("valid permutation");
        next_edits.push(edits[k - 1].clone());
    }
    let weight = (m + 1) as f64 / (m - k + 1) as f64;
    SurrogatePoint::Edits { doc, next_edits, weight }
}

/// The sampled training objective for one `(goal, u_h)` pair: a uniform
/// permutation and prefix length are drawn and the corresponding point's
/// loss returned.
pub fn sample_objective<R: Rng>(
    goal: &Document,
    u_h: &Document,
    state: &PolicyState,
    policy: &dyn EditPolicy,
    sim: &dyn SimilarityProvider,
    rng: &mut R,
) -> f64 {
    let point = sample_surrogate_point(goal, u_h, sim, rng);
    point.loss(policy, state)
}

pub fn sample_surrogate_point<R: Rng>(
    goal: &Document,
    u_h: &Document,
    sim: &dyn SimilarityProvider,
    rng: &mut R,
) -> SurrogatePoint {
    let aln = align(u_h, goal, sim);
    let m = aln.edit_count();
    let mut sigma: Vec<usize> = (0..m).collect();
    sigma.shuffle(rng);
    let k = rng.gen_range(1..=m + 1);
    surrogate_point(goal, u_h, &aln, &sigma, k)
}

/// A sampled edit trajectory from `u_h` to `goal` with interspersed
/// random edits.
#[derive(Debug, Clone)]
pub struct NoisyTrajectory {
    pub edits: Vec<Edit>,
    /// True where the edit came from the noise branch.
    pub noise_flags: Vec<bool>,
    /// `docs[i]` is the document after `i` edits; `docs[0] = u_h`.
    pub docs: Vec<Document>,
}

impl NoisyTrajectory {
    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }
}

/// Samples a noisy edit trajectory: at each step a goal-directed first
/// edit is drawn from the realigned candidate set, but with probability
/// `noise` a random edit is applied instead. Termination is guaranteed:
/// past `4 * capacity` edits the noise branch is disabled and the
/// remaining goal-directed steps strictly shrink the distance.
pub fn sample_noisy_trajectory<R: Rng>(
    goal: &Document,
    u_h: &Document,
    noise: f64,
    stats: &CorpusStats,
    sim: &dyn SimilarityProvider,
    rng: &mut R,
) -> NoisyTrajectory {
    assert!((0.0..1.0).contains(&noise), "noise must be in [0, 1)");
    let cap = 4 * u_h.capacity();
    let mut docs = vec![u_h.clone()];
    let mut edits = Vec::new();
    let mut noise_flags = Vec::new();
    while !docs.last().expect("nonempty").same_tokens(goal) {
        let current = docs.last().expect("nonempty");
        let candidates = align(current, goal, sim).first_edits();
        let goal_edit = candidates
            .choose(rng)
            .expect("unequal documents always have at least one edit")
            .clone();
        let take_noise = noise > 0.0 && edits.len() < cap && rng.gen_bool(noise);
        let edit = if take_noise {
            random_edit(current, stats, rng)
        } else {
            goal_edit
        };
        let next = current.apply(&edit, Actor::Agent).expect("sampled edit is valid");
        docs.push(next);
        noise_flags.push(take_noise);
        edits.push(edit);
    }
    NoisyTrajectory { edits, noise_flags, docs }
}

/// Uniform operation and location, word drawn from the corpus unigram
/// distribution.
fn random_edit<R: Rng>(doc: &Document, stats: &CorpusStats, rng: &mut R) -> Edit {
    let n = doc.content_len();
    let ops: &[EditOp] = if n == 0 {
        &[EditOp::Ins]
    } else if n >= doc.capacity() {
        &[EditOp::Del, EditOp::Sub]
    } else {
        &[EditOp::Ins, EditOp::Del, EditOp::Sub]
    };
    let op = *ops.choose(rng).expect("nonempty op set");
    match op {
        EditOp::Ins => Edit::ins(rng.gen_range(1..=n + 1), stats.sample_word(rng).clone()),
        EditOp::Del => Edit::del(rng.gen_range(1..=n)),
        EditOp::Sub => Edit::sub(rng.gen_range(1..=n), stats.sample_word(rng).clone()),
    }
}

/// Denoised surrogate point: a uniform prefix of a noisy trajectory, with
/// the next-edit set recomputed by realignment and the weight using the
/// deduplicated candidate count.
pub fn noisy_surrogate_point<R: Rng>(
    goal: &Document,
    u_h: &Document,
    noise: f64,
    stats: &CorpusStats,
    sim: &dyn SimilarityProvider,
    rng: &mut R,
) -> SurrogatePoint {
    let traj = sample_noisy_trajectory(goal, u_h, noise, stats, sim, rng);
    let m = traj.len();
    let k = rng.gen_range(1..=m + 1);
    if k == m + 1 {
        return SurrogatePoint::Stop { doc: traj.docs[m].clone(), weight: (m + 1) as f64 };
    }
    let doc = traj.docs[k - 1].clone();
    let next_edits = align(&doc, goal, sim).first_edits();
    let weight = (m + 1) as f64 / next_edits.len() as f64;
    SurrogatePoint::Edits { doc, next_edits, weight }
}

/// Exact negative log-likelihood of a draft policy that factors over
/// goal tokens left to right.
pub trait DraftDistribution {
    fn token_log_prob(&self, prefix: &[Word], word: &Word, state: &PolicyState) -> f64;
}

pub fn nll_draft_policy(goal: &Document, state: &PolicyState, policy: &dyn DraftDistribution) -> f64 {
    let tokens = goal.tokens();
    let mut nll = 0.0;
    for i in 0..tokens.len() {
        nll -= policy.token_log_prob(&tokens[..i], &tokens[i], state);
    }
    nll
}

/// One dataset entry: a visited state and the goal of its session.
#[derive(Debug, Clone)]
pub struct DatasetSample {
    pub state: PolicyState,
    pub goal: Document,
}

/// Per-iteration learning-curve record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub beta: f64,
    pub mean_loss: f64,
    pub mean_score: f64,
}

pub fn write_curve_csv<W: std::io::Write>(curve: &[CurvePoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iteration,beta,loss,mean_session_score")?;
    for p in curve {
        writeln!(out, "{},{},{},{}", p.iteration, p.beta, p.mean_loss, p.mean_score)?;
    }
    Ok(())
}

/// Roll-in agent: each turn flips a Bernoulli with the current mixing
/// coefficient to choose the expert (which emits the goal) or the
/// learner (which decodes), and records every state it was shown.
struct MixtureRollin<'a> {
    expert: ExpertPolicy,
    learner: DecodingAgent<&'a LogLinearEditPolicy>,
    beta: f64,
    rng: ChaCha12Rng,
    visited: Vec<PolicyState>,
    expert_turns: usize,
    learner_turns: usize,
}

impl<'a> Agent for MixtureRollin<'a> {
    fn name(&self) -> &str {
        "dagger-rollin"
    }

    fn reset(&mut self, seed: u64) {
        self.learner.reset(seed);
    }

    fn act(&mut self, state: &PolicyState) -> Result<AgentTurn, String> {
        self.visited.push(state.clone());
        if self.rng.gen_bool(self.beta) {
            self.expert_turns += 1;
            self.expert.act(state)
        } else {
            self.learner_turns += 1;
            self.learner.act(state)
        }
    }
}

/// Result of a training run: the final policy and its learning curve.
pub struct TrainOutcome {
    pub policy: LogLinearEditPolicy,
    pub curve: Vec<CurvePoint>,
    pub dataset_size: usize,
}

/// DAgger: roll in with the annealed expert/learner mixture, aggregate
/// visited states, and fit the policy on the growing dataset with the
/// sampled surrogate objective.
pub fn dagger_train(
    mut policy: LogLinearEditPolicy,
    goals: &[Document],
    cfg: &DaggerConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if goals.is_empty() {
        return Err(TrainError::EmptyGoalSampler);
    }
    let sim = TrigramSimilarity::new();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut dataset: Vec<DatasetSample> = Vec::new();
    let mut curve = Vec::with_capacity(cfg.iterations);
    let probe: Vec<&Document> = goals.iter().take(cfg.eval_goals.max(1)).collect();
    let mut session_counter = 0u64;

    for t in 0..cfg.iterations {
        let beta = cfg.beta(t);

        // Roll-in: run mixture sessions until this iteration's batch of
        // states is collected.
        let mut collected = 0usize;
        while collected < cfg.batch {
            let goal = goals[rng.gen_range(0..goals.len())].clone();
            let mut rollin = MixtureRollin {
                expert: ExpertPolicy::new(goal.clone()),
                learner: DecodingAgent::new(&policy, cfg.decode.clone()),
                beta,
                rng: ChaCha12Rng::seed_from_u64(rng.gen()),
                visited: Vec::new(),
                expert_turns: 0,
                learner_turns: 0,
            };
            let mut session_cfg = cfg.session.clone();
            session_counter += 1;
            session_cfg.seed = cfg.seed ^ session_counter.wrapping_mul(0x9e3779b97f4a7c15);
            run_session_with(&goal, &mut rollin, &session_cfg, &sim)
                .map_err(|e| TrainError::InvalidConfig(format!("rollout session: {e}")))?;
            collected += rollin.visited.len();
            dataset.extend(
                rollin
                    .visited
                    .into_iter()
                    .map(|state| DatasetSample { state, goal: goal.clone() }),
            );
        }

        // Fit: SGD draws over the aggregated dataset.
        let mut loss_sum = 0.0;
        let steps = cfg.sgd_steps.max(1);
        for _ in 0..steps {
            let sample = &dataset[rng.gen_range(0..dataset.len())];
            let u_h = sample.state.u_cur.clone();
            let point = if cfg.noise > 0.0 {
                noisy_surrogate_point(&sample.goal, &u_h, cfg.noise, policy.stats(), &sim, &mut rng)
            } else {
                sample_surrogate_point(&sample.goal, &u_h, &sim, &mut rng)
            };
            let (loss, mut grad) = policy.loss_and_grad(&point, &sample.state);
            if !loss.is_finite() {
                return Err(TrainError::DivergedLoss(t));
            }
            policy.sgd_step(&mut grad, cfg.learning_rate, cfg.clip_norm);
            loss_sum += loss;
        }

        // Probe evaluation for the curve.
        let mut score_sum = 0.0;
        for (gi, goal) in probe.iter().enumerate() {
            let mut agent = DecodingAgent::new(&policy, cfg.decode.clone());
            let mut session_cfg = cfg.session.clone();
            session_cfg.seed = cfg.seed ^ 0xE7A1_0000 ^ ((gi as u64) << 32) ^ t as u64;
            let trace = run_session_with(goal, &mut agent, &session_cfg, &sim)
                .map_err(|e| TrainError::InvalidConfig(format!("probe session: {e}")))?;
            score_sum += trace.summary.final_score.unwrap_or(0.0);
        }
        curve.push(CurvePoint {
            iteration: t,
            beta,
            mean_loss: loss_sum / steps as f64,
            mean_score: score_sum / probe.len() as f64,
        });
    }

    Ok(TrainOutcome { policy, curve, dataset_size: dataset.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::DEFAULT_CAPACITY;
    use crate::user::UserSimConfig;
    use itertools::Itertools;

    fn doc(text: &str) -> Document {
        let toks: Vec<&str> = text.split_whitespace().collect();
        Document::from_tokens(toks, DEFAULT_CAPACITY).unwrap()
    }

    fn toy_goals() -> Vec<Document> {
        vec![
            doc("aa bb cc dd ."),
            doc("aa cc ee ff ."),
            doc("bb dd ff gg ."),
            doc("aa bb ee gg ."),
        ]
    }

    fn toy_cfg() -> DaggerConfig {
        let mut session = SessionConfig::new(4, 2);
        session.horizon = 4;
        session.user = UserSimConfig::new(2);
        let mut cfg = DaggerConfig::new(session);
        cfg.iterations = 3;
        cfg.warmup = 1;
        cfg.batch = 4;
        cfg.sgd_steps = 8;
        cfg.eval_goals = 2;
        cfg.decode.max_edits = 8;
        cfg
    }

    #[test]
    fn beta_schedule_matches_formula() {
        let mut cfg = toy_cfg();
        cfg.warmup = 2;
        cfg.anneal_rate = 0.5;
        let betas: Vec<f64> = (0..5).map(|t| cfg.beta(t)).collect();
        assert_eq!(betas, vec![1.0, 1.0, 1.0, 0.5, 0.25]);
    }

    #[test]
    fn beta_non_increasing_and_one_through_warmup() {
        let mut cfg = toy_cfg();
        cfg.warmup = 10;
        cfg.anneal_rate = 0.9;
        let mut last = 1.0;
        for t in 0..40 {
            let b = cfg.beta(t);
            if t <= 10 {
                assert_eq!(b, 1.0);
            }
            assert!(b <= last + 1e-15);
            last = b;
        }
    }

    #[test]
    fn surrogate_weights_follow_remaining_count() {
        // For M = 3 the per-k weights are (M+1)/n_k with n_k = 3, 2, 1, 1.
        let sim = TrigramSimilarity::new();
        let u = doc("aa");
        let goal = doc("aa bb cc dd");
        let aln = align(&u, &goal, &sim);
        assert_eq!(aln.edit_count(), 3);
        let sigma = [0usize, 1, 2];
        let expect_nk = [3usize, 2, 1, 1];
        for k in 1..=4 {
            let point = surrogate_point(&goal, &u, &aln, &sigma, k);
            match point {
                SurrogatePoint::Edits { next_edits, weight, .. } => {
                    assert_eq!(next_edits.len(), expect_nk[k - 1]);
                    assert!((weight - 4.0 / expect_nk[k - 1] as f64).abs() < 1e-12);
                }
                SurrogatePoint::Stop { weight, .. } => {
                    assert_eq!(k, 4);
                    assert!((weight - 4.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn surrogate_stop_term_for_matching_documents() {
        let sim = TrigramSimilarity::new();
        let g = doc("aa bb");
        let aln = align(&g, &g, &sim);
        assert_eq!(aln.edit_count(), 0);
        let point = surrogate_point(&g, &g, &aln, &[], 1);
        match point {
            SurrogatePoint::Stop { doc, weight } => {
                assert!(doc.same_tokens(&g));
                assert_eq!(weight, 1.0);
            }
            _ => panic!("expected stop point"),
        }
    }

    #[test]
    fn noiseless_trajectories_are_alignment_trajectories() {
        let sim = TrigramSimilarity::new();
        let stats = CorpusStats::from_documents(&toy_goals()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let u = doc("aa zz cc");
            let goal = doc("aa bb cc dd");
            let aln = align(&u, &goal, &sim);
            let m = aln.edit_count();
            let traj = sample_noisy_trajectory(&goal, &u, 0.0, &stats, &sim, &mut rng);
            assert_eq!(traj.len(), m, "noise-free length equals the alignment edit count");
            assert!(traj.noise_flags.iter().all(|f| !f));
            assert!(traj.docs.last().unwrap().same_tokens(&goal));
            // The trajectory must be one of the permutation-indexed
            // sequences of the alignment.
            let found = (0..m)
                .permutations(m)
                .any(|sigma| aln.extract_edit_sequence(&sigma).unwrap() == traj.edits);
            assert!(found, "trajectory {:?} not generated by any permutation", traj.edits);
        }
    }

    #[test]
    fn noise_fraction_tracks_the_configured_level() {
        let sim = TrigramSimilarity::new();
        let goals = toy_goals();
        let stats = CorpusStats::from_documents(&goals).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut noise_steps = 0usize;
        let mut total_steps = 0usize;
        while total_steps < 20_000 {
            let goal = &goals[rng.gen_range(0..goals.len())];
            let u = doc("aa zz");
            let traj = sample_noisy_trajectory(goal, &u, 0.3, &stats, &sim, &mut rng);
            noise_steps += traj.noise_flags.iter().filter(|f| **f).count();
            total_steps += traj.len();
        }
        let frac = noise_steps as f64 / total_steps as f64;
        assert!((frac - 0.3).abs() < 0.02, "noise fraction {frac}");
    }

    struct UniformUnigram {
        vocab_size: usize,
    }

    impl DraftDistribution for UniformUnigram {
        fn token_log_prob(&self, _prefix: &[Word], _word: &Word, _state: &PolicyState) -> f64 {
            -(self.vocab_size as f64).ln()
        }
    }

    struct ExpertDraft {
        goal: Document,
    }

    impl DraftDistribution for ExpertDraft {
        fn token_log_prob(&self, prefix: &[Word], word: &Word, _state: &PolicyState) -> f64 {
            match self.goal.tokens().get(prefix.len()) {
                Some(w) if w == word => 0.0,
                _ => f64::NEG_INFINITY,
            }
        }
    }

    #[test]
    fn draft_policy_nll() {
        let goal = doc("aa bb cc dd ee");
        let state = PolicyState::initial(Document::blank(DEFAULT_CAPACITY));
        let uniform = UniformUnigram { vocab_size: 50 };
        let nll = nll_draft_policy(&goal, &state, &uniform);
        assert!((nll - 5.0 * 50.0f64.ln()).abs() < 1e-12);
        let expert = ExpertDraft { goal: goal.clone() };
        assert_eq!(nll_draft_policy(&goal, &state, &expert), 0.0);
        // Cross-check against a direct product.
        let direct: f64 = (0..goal.content_len())
            .map(|i| uniform.token_log_prob(&goal.tokens()[..i], &goal.tokens()[i], &state))
            .sum();
        assert!((nll_draft_policy(&goal, &state, &uniform) + direct).abs() < 1e-12);
    }

    #[test]
    fn pure_expert_rollin_when_anneal_rate_is_one() {
        let goals = toy_goals();
        let stats = CorpusStats::from_documents(&goals).unwrap();
        let policy = LogLinearEditPolicy::uniform(stats);
        let sim = TrigramSimilarity::new();
        let mut rollin = MixtureRollin {
            expert: ExpertPolicy::new(goals[0].clone()),
            learner: DecodingAgent::new(&policy, DecodeConfig::default()),
            beta: 1.0,
            rng: ChaCha12Rng::seed_from_u64(1),
            visited: Vec::new(),
            expert_turns: 0,
            learner_turns: 0,
        };
        let mut cfg = SessionConfig::new(2, 2);
        cfg.user = UserSimConfig::new(1);
        run_session_with(&goals[0], &mut rollin, &cfg, &sim).unwrap();
        assert!(rollin.expert_turns > 0);
        assert_eq!(rollin.learner_turns, 0, "beta = 1 never samples the learner");
    }

    #[test]
    fn dagger_smoke_run_aggregates_and_learns_finite_losses() {
        let goals = toy_goals();
        let stats = CorpusStats::from_documents(&goals).unwrap();
        let policy = LogLinearEditPolicy::uniform(stats);
        let out = dagger_train(policy, &goals, &toy_cfg()).unwrap();
        assert_eq!(out.curve.len(), 3);
        assert!(out.dataset_size >= 3 * 4, "aggregation keeps all iterations' states");
        assert!(out.curve.iter().all(|p| p.mean_loss.is_finite()));
        assert!(out.policy.weights().iter().any(|w| *w != 0.0));
    }

    #[test]
    fn dagger_rejects_empty_goal_set() {
        let stats = CorpusStats::from_documents(&toy_goals()).unwrap();
        let policy = LogLinearEditPolicy::uniform(stats);
        assert_eq!(
            dagger_train(policy, &[], &toy_cfg()).err(),
            Some(TrainError::EmptyGoalSampler)
        );
    }

    #[test]
    fn curve_csv_format() {
        let curve = vec![CurvePoint { iteration: 0, beta: 1.0, mean_loss: 2.5, mean_score: 0.1 }];
        let mut buf = Vec::new();
        write_curve_csv(&curve, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,beta,loss,mean_session_score\n"));
        assert!(text.contains("0,1,2.5,0.1"));
    }
}
