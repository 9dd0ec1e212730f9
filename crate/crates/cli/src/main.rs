//! `editloop`: corpus ingestion, imitation training, interactivity
//! sweeps and ablations, and an interactive editing REPL.

mod plot;
mod repl;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use editloop_core::corpus::{ingest_corpus, IngestConfig};
use editloop_core::dagger::write_curve_csv;
use editloop_core::decode::DecodeConfig;
use editloop_core::doc::{Tokenizer, WhitespaceTokenizer};
use editloop_core::env::{Agent, SessionConfig, SessionTrace};
use editloop_core::exp::{
    run_ablation, run_interactivity_sweep, train_policy_for_cell, write_ablation_csv,
    write_sweep_csv, write_sweep_report_csv, ExperimentConfig, PolicySpec,
};
use editloop_core::user::{IdfTable, UserSimConfig};
use editloop_core::Document;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "editloop", about = "Interactive text editing sessions at desk scale", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize, filter, deduplicate, and split a sentence corpus.
    Ingest {
        /// One sentence per line, UTF-8.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Keep sentences with fewer than this many tokens.
        #[arg(long, default_value_t = 64)]
        max_tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the log-linear edit policy with the imitation loop.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the interactivity sweep: one budget, several episode splits.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the ablation grid (noise, annealing, user variants).
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Interactive session: you play the user.
    Repl(ReplArgs),
    /// Verify a saved trace, optionally re-running the agent.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Re-run agent turns with this policy and compare drafts.
        #[arg(long)]
        policy: Option<String>,
    },
}

#[derive(Args)]
struct ReplArgs {
    /// Agent policy: expert, identity, near-expert:K, checkpoint:PATH.
    #[arg(long, default_value = "identity")]
    policy: String,
    /// Goal text (required by expert and near-expert; optional otherwise).
    #[arg(long)]
    goal: Option<String>,
    /// Where to write the session trace (JSON Lines).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 24)]
    budget: usize,
    #[arg(long, default_value_t = 8)]
    episodes: usize,
    #[arg(long, default_value_t = 8)]
    horizon: usize,
    #[arg(long, default_value_t = 0.05)]
    tolerance: f64,
    /// Document capacity in tokens.
    #[arg(long, default_value_t = 64)]
    capacity: usize,
    /// Scoring function: token_f1 | chrf | exact.
    #[arg(long, default_value = "token_f1")]
    score_fn: String,
    /// Decoding stop-probability threshold.
    #[arg(long, default_value_t = 0.95)]
    stop_threshold: f64,
    /// Maximum edits per decoded draft.
    #[arg(long, default_value_t = 64)]
    max_edits: usize,
    /// Sample from the top-k edits.
    #[arg(long, default_value_t = 10)]
    top_k: usize,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Ingest { input, out_dir, max_tokens, seed } => cmd_ingest(&input, &out_dir, max_tokens, seed),
        Command::Train { config } => cmd_train(&config),
        Command::Sweep { config } => cmd_sweep(&config),
        Command::Ablate { config } => cmd_ablate(&config),
        Command::Repl(args) => cmd_repl(args),
        Command::Replay { trace, policy } => cmd_replay(&trace, policy.as_deref()),
    }
}

/// Loads the experiment config, honoring the ITG_SEED override.
fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: ExperimentConfig = toml::from_str(&text).context("parsing experiment config")?;
    if let Ok(seed) = std::env::var("ITG_SEED") {
        let seed: u64 = seed.parse().context("ITG_SEED must be an integer")?;
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_ingest(input: &Path, out_dir: &Path, max_tokens: usize, seed: u64) -> Result<()> {
    let ingest = IngestConfig { max_tokens, seed, ..Default::default() };
    let corpus = ingest_corpus(input, &ingest)?;
    fs::create_dir_all(out_dir)?;
    let manifest_path = out_dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&corpus.manifest())?)?;
    let idf = IdfTable::build(corpus.train.iter())?;
    let idf_path = out_dir.join("idf.tsv");
    idf.write_tsv(fs::File::create(&idf_path)?)?;
    println!(
        "ingested {} sentences: {} train / {} valid / {} test",
        corpus.len(),
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len()
    );
    println!("wrote {} and {}", manifest_path.display(), idf_path.display());
    Ok(())
}

fn cmd_train(config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let corpus = editloop_core::exp::load_corpus(&cfg)?;
    let idf = IdfTable::build(corpus.train.iter())?;
    fs::create_dir_all(&cfg.output_dir)?;
    println!(
        "training on {} goals ({} iterations, noise {}, anneal {})",
        corpus.train.len().min(cfg.train.max_train_goals),
        cfg.train.iterations,
        cfg.train.noise,
        cfg.train.anneal_rate
    );
    let outcome = editloop_core::exp::train_for_cell(
        &cfg,
        &corpus.train,
        &idf,
        cfg.train.noise,
        cfg.train.anneal_rate,
        cfg.train_user,
    )?;
    let ck_path = cfg.output_dir.join("checkpoint.json");
    outcome.policy.save_checkpoint(fs::File::create(&ck_path)?)?;
    let curve_path = cfg.output_dir.join("curve.csv");
    write_curve_csv(&outcome.curve, fs::File::create(&curve_path)?)?;
    println!(
        "checkpoint written to {} (dataset {} states); curve in {}",
        ck_path.display(),
        outcome.dataset_size,
        curve_path.display()
    );
    Ok(())
}

fn cmd_sweep(config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let corpus = editloop_core::exp::load_corpus(&cfg)?;
    let idf = IdfTable::build(corpus.train.iter())?;
    let goals: Vec<Document> = corpus.test.iter().take(cfg.max_goals).cloned().collect();
    if goals.is_empty() {
        bail!("no test goals after the split; corpus too small");
    }
    let policy = resolve_policy(&cfg, &corpus.train, &idf)?;
    let rows = run_interactivity_sweep(&cfg, &policy, &goals, &idf)?;
    fs::create_dir_all(&cfg.output_dir)?;
    write_sweep_csv(&rows, fs::File::create(cfg.output_dir.join("sweep_long.csv"))?)?;
    write_sweep_report_csv(&rows, fs::File::create(cfg.output_dir.join("sweep_report.csv"))?)?;
    let svg = plot::sweep_svg(&rows, &cfg.metrics, &format!("score vs episodes ({})", policy.name()));
    fs::write(cfg.output_dir.join("sweep.svg"), svg)?;
    println!("episodes  mean_t  final_score  {}", cfg.metrics.iter().map(|m| m.name()).collect::<Vec<_>>().join("  "));
    for row in &rows {
        let metrics: Vec<String> = row.report.aggregate.iter().map(|(_, v)| format!("{v:.4}")).collect();
        println!(
            "{:>8}  {:>6.2}  {:>11.4}  {}",
            row.episodes,
            row.report.mean_t,
            row.report.mean_final_score,
            metrics.join("  ")
        );
    }
    println!("wrote sweep_long.csv, sweep_report.csv, sweep.svg under {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_ablate(config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let corpus = editloop_core::exp::load_corpus(&cfg)?;
    let idf = IdfTable::build(corpus.train.iter())?;
    let goals: Vec<Document> = corpus.test.iter().take(cfg.max_goals).cloned().collect();
    if goals.is_empty() {
        bail!("no test goals after the split; corpus too small");
    }
    let policy = resolve_policy(&cfg, &corpus.train, &idf)?;
    let rows = run_ablation(&cfg, &policy, &corpus.train, &goals, &idf)?;
    fs::create_dir_all(&cfg.output_dir)?;
    write_ablation_csv(&rows, fs::File::create(cfg.output_dir.join("ablation.csv"))?)?;
    println!("noise  anneal  train_user    test_user     final_score");
    for row in &rows {
        println!(
            "{:>5}  {:>6}  {:<12}  {:<12}  {:.4}",
            row.noise,
            row.anneal_rate,
            row.train_user.name(),
            row.test_user.name(),
            row.report.mean_final_score
        );
    }
    println!("wrote ablation.csv under {}", cfg.output_dir.display());
    Ok(())
}

/// Builds the experiment's policy spec; `"train"` trains one fresh
/// policy with the config's training section.
fn resolve_policy(
    cfg: &ExperimentConfig,
    train_goals: &[Document],
    idf: &IdfTable,
) -> Result<PolicySpec> {
    if cfg.policy == "train" {
        let policy = train_policy_for_cell(
            cfg,
            train_goals,
            idf,
            cfg.train.noise,
            cfg.train.anneal_rate,
            cfg.train_user,
        )?;
        return Ok(PolicySpec::Trained(std::sync::Arc::new(policy)));
    }
    Ok(PolicySpec::parse(&cfg.policy)?)
}

fn cmd_repl(args: ReplArgs) -> Result<()> {
    let tokenizer = WhitespaceTokenizer;
    let goal = args
        .goal
        .as_deref()
        .map(|text| {
            Document::from_tokens(tokenizer.tokenize(text), args.capacity)
                .context("goal exceeds the document capacity")
        })
        .transpose()?;
    let decode = DecodeConfig {
        stop_threshold: args.stop_threshold,
        max_edits: args.max_edits,
        top_k: args.top_k,
        rng_seed: args.seed,
    };
    let mut agent = build_agent(&args.policy, goal.as_ref(), &decode)?;
    let mut cfg = SessionConfig::new(args.budget, args.episodes);
    cfg.horizon = args.horizon.max(args.episodes);
    cfg.tolerance = args.tolerance;
    cfg.capacity = args.capacity;
    cfg.score_fn = match args.score_fn.as_str() {
        "token_f1" => editloop_core::env::ScoreFn::TokenF1,
        "chrf" => editloop_core::env::ScoreFn::Chrf,
        "exact" => editloop_core::env::ScoreFn::Exact,
        other => bail!("unknown score function {other:?}"),
    };
    cfg.seed = args.seed;
    cfg.user = UserSimConfig::new((args.budget / args.episodes).max(1));
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    let outcome = repl::run_repl(goal, agent.as_mut(), &cfg, stdin.lock(), &mut stdout)?;
    if let Some(path) = args.trace {
        fs::write(&path, outcome.trace.to_jsonl())?;
        println!("trace written to {}", path.display());
    }
    Ok(())
}

/// Builds a session agent from a policy spec string, checking goal
/// requirements.
fn build_agent(
    spec: &str,
    goal: Option<&Document>,
    decode: &DecodeConfig,
) -> Result<Box<dyn Agent>> {
    let parsed = PolicySpec::parse(spec)?;
    if let (PolicySpec::Expert | PolicySpec::NearExpert { .. }, None) = (&parsed, goal) {
        bail!("policy {spec:?} needs --goal")
    }
    let goal = goal.cloned().unwrap_or_else(|| Document::blank(editloop_core::DEFAULT_CAPACITY));
    Ok(parsed.instantiate(&goal, decode))
}

fn cmd_replay(trace_path: &Path, policy: Option<&str>) -> Result<()> {
    let text = fs::read_to_string(trace_path)?;
    let trace = SessionTrace::from_jsonl(&text)?;
    let decode = DecodeConfig { rng_seed: trace.header.config.seed, ..DecodeConfig::default() };
    let mut agent: Option<Box<dyn Agent>> = match policy {
        Some(spec) => Some(build_agent(spec, trace.header.goal.as_ref(), &decode)?),
        None => None,
    };
    let agent_ref: Option<&mut dyn Agent> = agent.as_mut().map(|b| b.as_mut() as &mut dyn Agent);
    let mut stdout = std::io::stdout();
    let ok = repl::replay_trace(&trace, agent_ref, &mut stdout)?;
    if !ok {
        bail!("replay diverged from the recorded trace");
    }
    println!(
        "trace ok: {} turns, status {:?}, final score {:?}",
        trace.turns.len(),
        trace.summary.status,
        trace.summary.final_score
    );
    Ok(())
}
