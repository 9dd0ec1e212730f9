//! Experiment harness: interactivity sweeps (one edit budget, varying
//! episode splits) and ablation grids, with per-cell metric reports,
//! seed confidence intervals, and long-format CSV output.

use crate::corpus::{ingest_corpus, Corpus, CorpusError, IngestConfig};
use crate::dagger::{dagger_train, DaggerConfig, TrainError};
use crate::decode::{DecodeConfig, DecodingAgent};
use crate::doc::Document;
use crate::env::{run_session_with, Agent, ScoreFn, SessionConfig, SessionError, Status};
use crate::metrics::Metric;
use crate::policy::{CorpusStats, ExpertPolicy, IdentityPolicy, LogLinearEditPolicy, ScriptedNearExpert};
use crate::user::{Heuristic, IdfTable, UserSimConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

/// Named user-simulator variants, the informativeness ranking always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserVariant {
    Unrestricted,
    Adjacent,
    Contiguous,
    AdjContig,
}

impl UserVariant {
    pub fn heuristics(self) -> BTreeSet<Heuristic> {
        let mut set: BTreeSet<Heuristic> = [Heuristic::RankingIdf].into_iter().collect();
        match self {
            UserVariant::Unrestricted => {}
            UserVariant::Adjacent => {
                set.insert(Heuristic::Adjacent);
            }
            UserVariant::Contiguous => {
                set.insert(Heuristic::Contiguous);
            }
            UserVariant::AdjContig => {
                set.insert(Heuristic::Adjacent);
                set.insert(Heuristic::Contiguous);
            }
        }
        set
    }

    pub fn name(self) -> &'static str {
        match self {
            UserVariant::Unrestricted => "unrestricted",
            UserVariant::Adjacent => "adjacent",
            UserVariant::Contiguous => "contiguous",
            UserVariant::AdjContig => "adj_contig",
        }
    }
}

/// Which agent drives the sessions of an experiment.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    Expert,
    Identity,
    NearExpert { edits_per_turn: usize },
    Trained(Arc<LogLinearEditPolicy>),
}

impl PolicySpec {
    /// Parses `expert`, `identity`, `near-expert:K`, or
    /// `checkpoint:PATH`.
    pub fn parse(spec: &str) -> Result<PolicySpec, ExpError> {
        if spec == "expert" {
            return Ok(PolicySpec::Expert);
        }
        if spec == "identity" {
            return Ok(PolicySpec::Identity);
        }
        if let Some(k) = spec.strip_prefix("near-expert:") {
            let k: usize = k
                .parse()
                .map_err(|_| ExpError::BadPolicySpec(spec.to_string()))?;
            return Ok(PolicySpec::NearExpert { edits_per_turn: k });
        }
        if spec == "near-expert" {
            return Ok(PolicySpec::NearExpert { edits_per_turn: 2 });
        }
        if let Some(path) = spec.strip_prefix("checkpoint:") {
            let file = std::fs::File::open(path).map_err(|e| {
                ExpError::BadPolicySpec(format!("{spec}: {e}"))
            })?;
            let policy = LogLinearEditPolicy::load_checkpoint(std::io::BufReader::new(file))
                .map_err(|e| ExpError::BadPolicySpec(format!("{spec}: {e}")))?;
            return Ok(PolicySpec::Trained(Arc::new(policy)));
        }
        Err(ExpError::BadPolicySpec(spec.to_string()))
    }

    pub fn name(&self) -> String {
        match self {
            PolicySpec::Expert => "expert".to_string(),
            PolicySpec::Identity => "identity".to_string(),
            PolicySpec::NearExpert { edits_per_turn } => format!("near-expert:{edits_per_turn}"),
            PolicySpec::Trained(_) => "trained".to_string(),
        }
    }

    pub fn instantiate(&self, goal: &Document, decode: &DecodeConfig) -> Box<dyn Agent> {
        match self {
            PolicySpec::Expert => Box::new(ExpertPolicy::new(goal.clone())),
            PolicySpec::Identity => Box::new(IdentityPolicy),
            PolicySpec::NearExpert { edits_per_turn } => {
                Box::new(ScriptedNearExpert::new(goal.clone(), *edits_per_turn))
            }
            PolicySpec::Trained(policy) => {
                Box::new(DecodingAgent::new(Arc::clone(policy), decode.clone()).with_name("trained"))
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("corpus: {0}")]
    Corpus(#[from] CorpusError),
    #[error("session: {0}")]
    Session(#[from] SessionError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("unknown policy spec {0:?}")]
    BadPolicySpec(String),
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
    #[error("budget ledger violated: session consumed {got} of {budget} edits without stopping satisfied")]
    LedgerViolation { got: usize, budget: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Experiment configuration, read from a TOML file by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    /// Total user-edit budget per session.
    pub budget: usize,
    /// Episode splits to sweep; each must divide the budget.
    pub splits: Vec<usize>,
    pub seeds: Vec<u64>,
    pub metrics: Vec<Metric>,
    pub policy: String,
    pub output_dir: PathBuf,
    /// Cap on test goals per cell (desk-scale experiments).
    pub max_goals: usize,
    pub horizon: usize,
    pub tolerance: f64,
    pub score_fn: ScoreFn,
    pub max_tokens: usize,
    pub test_user: UserVariant,
    pub train_user: UserVariant,
    pub train: TrainSection,
    pub ablation: AblationSection,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            corpus: PathBuf::from("corpus.txt"),
            budget: 6,
            splits: vec![1, 2, 3, 6],
            seeds: vec![1, 2, 3],
            metrics: Metric::all().to_vec(),
            policy: "near-expert:2".to_string(),
            output_dir: PathBuf::from("out"),
            max_goals: 20,
            horizon: 8,
            tolerance: 0.05,
            score_fn: ScoreFn::TokenF1,
            max_tokens: 64,
            test_user: UserVariant::Unrestricted,
            train_user: UserVariant::Unrestricted,
            train: TrainSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub iterations: usize,
    pub warmup: usize,
    pub anneal_rate: f64,
    pub batch: usize,
    pub noise: f64,
    pub sgd_steps: usize,
    pub learning_rate: f64,
    pub eval_goals: usize,
    /// Shape of the training sessions.
    pub budget: usize,
    pub episodes: usize,
    pub max_decode_edits: usize,
    pub max_train_goals: usize,
}

impl Default for TrainSection {
    fn default() -> TrainSection {
        TrainSection {
            iterations: 600,
            warmup: 300,
            anneal_rate: 0.9,
            batch: 10_000,
            noise: 0.3,
            sgd_steps: 200,
            learning_rate: 0.1,
            eval_goals: 4,
            budget: 6,
            episodes: 3,
            max_decode_edits: 64,
            max_train_goals: usize::MAX,
        }
    }
}

/// Ablation axes. The protocol is fixed at `episodes * edits_per_episode`
/// user edits per session.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSection {
    pub noise: Vec<f64>,
    pub anneal: Vec<f64>,
    pub train_users: Vec<UserVariant>,
    pub test_users: Vec<UserVariant>,
    pub episodes: usize,
    pub edits_per_episode: usize,
}

impl Default for AblationSection {
    fn default() -> AblationSection {
        AblationSection {
            noise: vec![0.0, 0.1, 0.2, 0.3],
            anneal: vec![0.8, 0.85, 0.9],
            train_users: vec![UserVariant::Unrestricted],
            test_users: vec![
                UserVariant::AdjContig,
                UserVariant::Contiguous,
                UserVariant::Adjacent,
                UserVariant::Unrestricted,
            ],
            episodes: 4,
            edits_per_episode: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExpError> {
        if self.seeds.is_empty() {
            return Err(ExpError::BadConfig("seeds must be nonempty".into()));
        }
        for &m in &self.splits {
            if m == 0 || !self.budget.is_multiple_of(m) {
                return Err(ExpError::BadConfig(format!(
                    "split {m} does not divide budget {}",
                    self.budget
                )));
            }
        }
        Ok(())
    }

    pub fn session_config(&self, episodes: usize, user: UserVariant, idf: &IdfTable, seed: u64) -> SessionConfig {
        let mut cfg = SessionConfig::new(self.budget, episodes);
        cfg.capacity = self.max_tokens;
        cfg.horizon = self.horizon.max(episodes);
        cfg.tolerance = self.tolerance;
        cfg.score_fn = self.score_fn;
        cfg.seed = seed;
        cfg.user = UserSimConfig::new(self.budget / episodes)
            .with_heuristics(user.heuristics())
            .with_idf(idf.clone());
        cfg
    }
}

/// Per-cell metric report. Metric values are means over goals of the
/// final-draft metric; the confidence interval is a normal 95% interval
/// over per-seed means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_goal: Vec<GoalOutcome>,
    pub aggregate: Vec<(Metric, f64)>,
    pub ci: Vec<(Metric, (f64, f64))>,
    pub mean_t: f64,
    pub mean_final_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalOutcome {
    pub goal: String,
    pub seed: u64,
    pub values: Vec<(Metric, f64)>,
    pub t: usize,
    pub final_score: f64,
    pub status: Status,
}

fn normal_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, mean);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * (var / n).sqrt();
    (mean - half, mean + half)
}

fn build_report(outcomes: Vec<GoalOutcome>, metrics: &[Metric], seeds: &[u64]) -> MetricReport {
    let mut aggregate = Vec::new();
    let mut ci = Vec::new();
    for &metric in metrics {
        let all: Vec<f64> = outcomes
            .iter()
            .map(|o| o.values.iter().find(|(m, _)| *m == metric).map(|(_, v)| *v).unwrap_or(0.0))
            .collect();
        let mean = all.iter().sum::<f64>() / all.len().max(1) as f64;
        aggregate.push((metric, mean));
        let per_seed: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                let vals: Vec<f64> = outcomes
                    .iter()
                    .filter(|o| o.seed == s)
                    .map(|o| o.values.iter().find(|(m, _)| *m == metric).map(|(_, v)| *v).unwrap_or(0.0))
                    .collect();
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            })
            .collect();
        ci.push((metric, normal_ci(&per_seed)));
    }
    let mean_t = outcomes.iter().map(|o| o.t as f64).sum::<f64>() / outcomes.len().max(1) as f64;
    let mean_final_score =
        outcomes.iter().map(|o| o.final_score).sum::<f64>() / outcomes.len().max(1) as f64;
    MetricReport { per_goal: outcomes, aggregate, ci, mean_t, mean_final_score }
}

/// Runs one cell: every (seed, goal) session with the given episode
/// split and user variant, asserting the budget ledger on each session.
fn run_cell(
    cfg: &ExperimentConfig,
    policy: &PolicySpec,
    goals: &[Document],
    episodes: usize,
    user: UserVariant,
    idf: &IdfTable,
    decode: &DecodeConfig,
) -> Result<MetricReport, ExpError> {
    let sim = crate::align::TrigramSimilarity::new();
    let mut outcomes = Vec::with_capacity(cfg.seeds.len() * goals.len());
    for &seed in &cfg.seeds {
        for (gi, goal) in goals.iter().enumerate() {
            // The session seed ignores the episode split so cells of a
            // sweep are paired: the same (goal, seed) draws the same
            // user tie-breaking whatever the split.
            let session_seed = seed ^ ((gi as u64) << 20);
            let session_cfg = cfg.session_config(episodes, user, idf, session_seed);
            let mut agent = policy.instantiate(goal, decode);
            let trace = run_session_with(goal, agent.as_mut(), &session_cfg, &sim)?;
            let used = trace.user_edit_total();
            if used != cfg.budget && trace.summary.status != Status::StoppedSatisfied {
                return Err(ExpError::LedgerViolation { got: used, budget: cfg.budget });
            }
            let blank = Document::blank(session_cfg.capacity);
            let final_draft = trace.final_draft().unwrap_or(&blank);
            let values: Vec<(Metric, f64)> =
                cfg.metrics.iter().map(|&m| (m, m.compute(final_draft, goal))).collect();
            outcomes.push(GoalOutcome {
                goal: goal.to_string(),
                seed,
                values,
                t: trace.summary.t,
                final_score: trace.summary.final_score.unwrap_or(0.0),
                status: trace.summary.status,
            });
        }
    }
    Ok(build_report(outcomes, &cfg.metrics, &cfg.seeds))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub episodes: usize,
    pub report: MetricReport,
}

/// The interactivity sweep: one fixed budget, spread over each episode
/// split in turn. Cells run in parallel; results come back in split
/// order.
pub fn run_interactivity_sweep(
    cfg: &ExperimentConfig,
    policy: &PolicySpec,
    goals: &[Document],
    idf: &IdfTable,
) -> Result<Vec<SweepRow>, ExpError> {
    cfg.validate()?;
    let decode = DecodeConfig::default();
    cfg.splits
        .par_iter()
        .map(|&episodes| {
            let report = run_cell(cfg, policy, goals, episodes, cfg.test_user, idf, &decode)?;
            Ok(SweepRow { episodes, report })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub noise: f64,
    pub anneal_rate: f64,
    pub train_user: UserVariant,
    pub test_user: UserVariant,
    pub report: MetricReport,
}

/// The ablation grid. With a trainable policy spec each distinct
/// (noise, anneal, train-user) combination is trained once and evaluated
/// under every test-time user; scripted policies skip training and the
/// training axes become bookkeeping columns.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    policy: &PolicySpec,
    train_goals: &[Document],
    test_goals: &[Document],
    idf: &IdfTable,
) -> Result<Vec<AblationRow>, ExpError> {
    if cfg.seeds.is_empty() {
        return Err(ExpError::BadConfig("seeds must be nonempty".into()));
    }
    let ab = &cfg.ablation;
    let episodes = ab.episodes;
    let budget = ab.episodes * ab.edits_per_episode;
    let mut eval_cfg = cfg.clone();
    eval_cfg.budget = budget;
    eval_cfg.splits = vec![episodes];
    let decode = DecodeConfig::default();

    let mut rows = Vec::new();
    for &noise in &ab.noise {
        for &anneal in &ab.anneal {
            for &train_user in &ab.train_users {
                let cell_policy = if matches!(policy, PolicySpec::Trained(_)) {
                    // Retrain per training-axis cell.
                    let trained = train_policy_for_cell(cfg, train_goals, idf, noise, anneal, train_user)?;
                    PolicySpec::Trained(Arc::new(trained))
                } else {
                    policy.clone()
                };
                let cells: Vec<AblationRow> = ab
                    .test_users
                    .par_iter()
                    .map(|&test_user| {
                        let mut cell_cfg = eval_cfg.clone();
                        cell_cfg.test_user = test_user;
                        let report =
                            run_cell(&cell_cfg, &cell_policy, test_goals, episodes, test_user, idf, &decode)?;
                        Ok(AblationRow { noise, anneal_rate: anneal, train_user, test_user, report })
                    })
                    .collect::<Result<Vec<_>, ExpError>>()?;
                rows.extend(cells);
            }
        }
    }
    Ok(rows)
}

/// Trains the log-linear policy with the experiment's training section,
/// overriding the ablation axes. Returns the trained policy together
/// with its learning curve.
pub fn train_for_cell(
    cfg: &ExperimentConfig,
    train_goals: &[Document],
    idf: &IdfTable,
    noise: f64,
    anneal_rate: f64,
    train_user: UserVariant,
) -> Result<crate::dagger::TrainOutcome, ExpError> {
    let goals: Vec<Document> =
        train_goals.iter().take(cfg.train.max_train_goals).cloned().collect();
    let stats = CorpusStats::from_documents(&goals)
        .ok_or_else(|| ExpError::BadConfig("empty training corpus".into()))?;
    let train = &cfg.train;
    if train.episodes == 0 || !train.budget.is_multiple_of(train.episodes) {
        return Err(ExpError::BadConfig(format!(
            "training budget {} not divisible by {} episodes",
            train.budget, train.episodes
        )));
    }
    // Training sessions use the training-time user and the experiment's
    // shared shape parameters.
    let mut session = SessionConfig::new(train.budget, train.episodes);
    session.capacity = cfg.max_tokens;
    session.horizon = cfg.horizon.max(train.episodes);
    session.tolerance = cfg.tolerance;
    session.score_fn = cfg.score_fn;
    session.user = UserSimConfig::new(train.budget / train.episodes)
        .with_heuristics(train_user.heuristics())
        .with_idf(idf.clone());
    let mut dagger = DaggerConfig::new(session);
    dagger.iterations = cfg.train.iterations;
    dagger.warmup = cfg.train.warmup;
    dagger.anneal_rate = anneal_rate;
    dagger.batch = cfg.train.batch;
    dagger.noise = noise;
    dagger.sgd_steps = cfg.train.sgd_steps;
    dagger.learning_rate = cfg.train.learning_rate;
    dagger.eval_goals = cfg.train.eval_goals;
    dagger.seed = cfg.seeds[0];
    dagger.decode.max_edits = cfg.train.max_decode_edits;
    Ok(dagger_train(LogLinearEditPolicy::uniform(stats), &goals, &dagger)?)
}

/// Convenience wrapper returning only the trained policy.
pub fn train_policy_for_cell(
    cfg: &ExperimentConfig,
    train_goals: &[Document],
    idf: &IdfTable,
    noise: f64,
    anneal_rate: f64,
    train_user: UserVariant,
) -> Result<LogLinearEditPolicy, ExpError> {
    Ok(train_for_cell(cfg, train_goals, idf, noise, anneal_rate, train_user)?.policy)
}

/// Long-format CSV: one row per (cell, seed, goal, metric).
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "episodes,seed,goal,metric,value,t,final_score")?;
    for row in rows {
        for o in &row.report.per_goal {
            for (m, v) in &o.values {
                writeln!(
                    out,
                    "{},{},{:?},{},{},{},{}",
                    row.episodes,
                    o.seed,
                    o.goal,
                    m.name(),
                    v,
                    o.t,
                    o.final_score
                )?;
            }
        }
    }
    Ok(())
}

/// Aggregate CSV: one row per (cell, metric) with the seed CI.
pub fn write_sweep_report_csv<W: std::io::Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "episodes,metric,mean,ci_lo,ci_hi,mean_t,mean_final_score")?;
    for row in rows {
        for (m, v) in &row.report.aggregate {
            let (lo, hi) = row
                .report
                .ci
                .iter()
                .find(|(cm, _)| cm == m)
                .map(|(_, c)| *c)
                .unwrap_or((*v, *v));
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.episodes,
                m.name(),
                v,
                lo,
                hi,
                row.report.mean_t,
                row.report.mean_final_score
            )?;
        }
    }
    Ok(())
}

pub fn write_ablation_csv<W: std::io::Write>(rows: &[AblationRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "noise,anneal_rate,train_user,test_user,metric,mean,mean_t,mean_final_score")?;
    for row in rows {
        for (m, v) in &row.report.aggregate {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                row.noise,
                row.anneal_rate,
                row.train_user.name(),
                row.test_user.name(),
                m.name(),
                v,
                row.report.mean_t,
                row.report.mean_final_score
            )?;
        }
    }
    Ok(())
}

/// Loads the corpus named by the experiment config.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus, ExpError> {
    let ingest = IngestConfig {
        max_tokens: cfg.max_tokens,
        seed: cfg.seeds.first().copied().unwrap_or(0),
        proportions: (90, 5, 5),
    };
    Ok(ingest_corpus(&cfg.corpus, &ingest)?)
}
