//! End-to-end tests of the REPL loop, trace replay, config parsing, and
//! the binary's file outputs.

use editloop_core::doc::{Tokenizer, WhitespaceTokenizer};
use editloop_core::env::{SessionConfig, SessionTrace};
use editloop_core::exp::{ExperimentConfig, PolicySpec, UserVariant};
use editloop_core::Document;
use std::io::Write;
use std::process::Command;

fn doc(text: &str) -> Document {
    let tok = WhitespaceTokenizer;
    Document::from_tokens(tok.tokenize(text), editloop_core::DEFAULT_CAPACITY).unwrap()
}

fn repl_config(budget: usize, episodes: usize, seed: u64) -> SessionConfig {
    let mut cfg = SessionConfig::new(budget, episodes);
    cfg.seed = seed;
    cfg
}

#[path = "../src/repl.rs"]
mod repl;
#[path = "../src/plot.rs"]
mod plot;

#[test]
fn scripted_repl_session_records_a_valid_trace() {
    let goal = doc("NASA launches a spacecraft .");
    let mut agent = editloop_core::policy::ScriptedNearExpert::new(goal.clone(), 2);
    let script = "ins 1 NASA\nshow\ndone\nquit\n";
    let mut out = Vec::new();
    let outcome = repl::run_repl(
        Some(goal.clone()),
        &mut agent,
        &repl_config(8, 4, 3),
        script.as_bytes(),
        &mut out,
    )
    .unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("draft: NASA"), "insertion echoed:\n{text}");
    assert!(text.contains("NASA[u]"), "show displays provenance marks:\n{text}");
    assert!(text.contains("agent:"), "agent responded");
    // The trace round-trips as JSONL and replays cleanly.
    let jsonl = outcome.trace.to_jsonl();
    let back = SessionTrace::from_jsonl(&jsonl).unwrap();
    assert_eq!(back, outcome.trace);
    back.replay_edits().unwrap();
    assert_eq!(back.turns[0].edits.len(), 1);
}

#[test]
fn malformed_commands_reprompt_without_breaking_the_session() {
    let goal = doc("aa bb");
    let mut agent = editloop_core::policy::IdentityPolicy;
    let script = "ins x yy\nfrobnicate\nins 9 aa\nins 1 aa\ndone\nquit\n";
    let mut out = Vec::new();
    let outcome = repl::run_repl(
        Some(goal),
        &mut agent,
        &repl_config(4, 2, 0),
        script.as_bytes(),
        &mut out,
    )
    .unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("bad command"));
    assert!(text.contains("unknown command"));
    assert!(text.contains("edit rejected"));
    // The one valid edit still landed.
    assert_eq!(outcome.trace.turns[0].edits.len(), 1);
}

#[test]
fn replay_reproduces_agent_responses_under_the_same_seed() {
    let goal = doc("the crew repairs the station .");
    let mut agent = editloop_core::policy::ScriptedNearExpert::new(goal.clone(), 1);
    let script = "ins 1 the\nins 2 crew\ndone\nins 3 repairs\ndone\nquit\n";
    let mut out = Vec::new();
    let outcome = repl::run_repl(
        Some(goal.clone()),
        &mut agent,
        &repl_config(12, 6, 9),
        script.as_bytes(),
        &mut out,
    )
    .unwrap();
    // Replay with a fresh agent of the same spec and seed.
    let mut fresh = editloop_core::policy::ScriptedNearExpert::new(goal, 1);
    let mut log = Vec::new();
    let ok = repl::replay_trace(&outcome.trace, Some(&mut fresh), &mut log).unwrap();
    assert!(ok, "{}", String::from_utf8_lossy(&log));
}

#[test]
fn replay_detects_divergence() {
    let goal = doc("aa bb cc");
    let mut agent = editloop_core::policy::ScriptedNearExpert::new(goal.clone(), 1);
    let script = "ins 1 aa\ndone\nquit\n";
    let mut out = Vec::new();
    let outcome = repl::run_repl(
        Some(goal.clone()),
        &mut agent,
        &repl_config(4, 2, 1),
        script.as_bytes(),
        &mut out,
    )
    .unwrap();
    // A different policy will not reproduce the recorded drafts.
    let mut other = editloop_core::policy::IdentityPolicy;
    let mut log = Vec::new();
    let ok = repl::replay_trace(&outcome.trace, Some(&mut other), &mut log).unwrap();
    assert!(!ok);
    assert!(String::from_utf8_lossy(&log).contains("divergence"));
}

#[test]
fn experiment_config_parses_from_toml() {
    let text = r#"
corpus = "data/toy_corpus.txt"
budget = 6
splits = [1, 2, 3]
seeds = [1, 2]
policy = "near-expert:2"
output_dir = "out"
max_goals = 10
test_user = "adj_contig"

[train]
iterations = 50
noise = 0.2

[ablation]
noise = [0.0, 0.3]
episodes = 4
edits_per_episode = 3
"#;
    let cfg: ExperimentConfig = toml::from_str(text).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.budget, 6);
    assert_eq!(cfg.splits, vec![1, 2, 3]);
    assert_eq!(cfg.test_user, UserVariant::AdjContig);
    assert_eq!(cfg.train.iterations, 50);
    assert_eq!(cfg.train.noise, 0.2);
    assert_eq!(cfg.ablation.noise, vec![0.0, 0.3]);
    // Defaults fill the rest.
    assert_eq!(cfg.horizon, 8);
    assert_eq!(cfg.train.anneal_rate, 0.9);
    assert!(matches!(PolicySpec::parse(&cfg.policy).unwrap(), PolicySpec::NearExpert { edits_per_turn: 2 }));
}

#[test]
fn sweep_svg_is_well_formed() {
    use editloop_core::metrics::Metric;
    use editloop_core::user::IdfTable;
    let goals = vec![doc("aa bb cc dd ee ff gg hh"), doc("aa cc ee gg ii kk mm oo")];
    let idf = IdfTable::build(goals.iter()).unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.budget = 6;
    cfg.splits = vec![1, 2, 3];
    cfg.seeds = vec![1];
    let rows =
        editloop_core::exp::run_interactivity_sweep(&cfg, &PolicySpec::Identity, &goals, &idf)
            .unwrap();
    let svg = plot::sweep_svg(&rows, &[Metric::Bleu1, Metric::TokenF1, Metric::Chrf], "test");
    assert!(svg.starts_with("<svg"));
    assert!(svg.ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 3, "one line per metric");
    assert!(svg.contains("token_f1"));
}

/// Drives the compiled binary end to end: ingest, sweep, and replay.
#[test]
fn binary_subcommands_produce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = dir.path().join("corpus.txt");
    let mut lines = String::new();
    for i in 0..40 {
        lines.push_str(&format!(
            "the team number {} reports new results on topic {} this week .\n",
            i,
            i % 5
        ));
    }
    std::fs::write(&corpus_path, lines).unwrap();

    let bin = env!("CARGO_BIN_EXE_editloop");
    let out = Command::new(bin)
        .args(["ingest", "--input"])
        .arg(&corpus_path)
        .args(["--out-dir"])
        .arg(dir.path().join("ingested"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("ingested/manifest.json").exists());
    assert!(dir.path().join("ingested/idf.tsv").exists());

    // Sweep with a scripted policy over the tiny corpus.
    let config_path = dir.path().join("exp.toml");
    let out_dir = dir.path().join("out");
    let mut cfg_file = std::fs::File::create(&config_path).unwrap();
    writeln!(
        cfg_file,
        "corpus = {corpus:?}\nbudget = 4\nsplits = [1, 2]\nseeds = [1]\npolicy = \"near-expert:2\"\noutput_dir = {out:?}\nmax_goals = 3\n",
        corpus = corpus_path.to_str().unwrap(),
        out = out_dir.to_str().unwrap(),
    )
    .unwrap();
    let out = Command::new(bin)
        .args(["sweep", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("sweep_long.csv").exists());
    assert!(out_dir.join("sweep_report.csv").exists());
    assert!(out_dir.join("sweep.svg").exists());

    // ITG_SEED overrides the config seeds: both runs must agree with
    // themselves and differ in the seed column.
    let with_env = Command::new(bin)
        .args(["sweep", "--config"])
        .arg(&config_path)
        .env("ITG_SEED", "42")
        .output()
        .unwrap();
    assert!(with_env.status.success());
    let long = std::fs::read_to_string(out_dir.join("sweep_long.csv")).unwrap();
    assert!(long.contains("\n1,42,") || long.contains(",42,"), "seed column reflects ITG_SEED:\n{long}");
}
