//! Interactive editing loop: a human plays the user, the agent responds
//! through its policy. Reads commands from any `BufRead` and writes to
//! any `Write`, so sessions are scriptable and testable.

use anyhow::{bail, Context, Result};
use editloop_core::align::TrigramSimilarity;
use editloop_core::doc::{Edit, Mark, Tokenizer, WhitespaceTokenizer};
use editloop_core::env::{Agent, Session, SessionConfig, SessionTrace};
use editloop_core::Document;
use std::io::{BufRead, Write};

const HELP: &str = "commands:
  ins <loc> <word>   queue a word insertion at 1-based <loc>
  del <loc>          queue a deletion
  sub <loc> <word>   queue a substitution
  done               end your turn; the agent responds
  show               print the draft with provenance marks
  help               this text
  quit               finish the session and write the trace";

pub struct ReplOutcome {
    pub trace: SessionTrace,
}

/// Runs the interactive loop until `quit`, end-of-input, or a session
/// stop. Queued edits are validated against the live draft as they are
/// entered; a malformed command reprompts without losing the queue.
pub fn run_repl<R: BufRead, W: Write>(
    goal: Option<Document>,
    agent: &mut dyn Agent,
    cfg: &SessionConfig,
    input: R,
    out: &mut W,
) -> Result<ReplOutcome> {
    let sim = TrigramSimilarity::new();
    let mut session = Session::new(goal, cfg.clone(), &sim)?;
    agent.reset(cfg.seed);
    let tokenizer = WhitespaceTokenizer;
    let policy_name = agent.name().to_string();

    writeln!(out, "interactive session: budget {} edits over up to {} episodes", cfg.budget, cfg.horizon)?;
    writeln!(out, "{HELP}")?;
    let mut queued: Vec<Edit> = Vec::new();
    let mut preview = session.current_draft().clone();
    write_draft(out, &preview)?;

    for line in input.lines() {
        let line = line.context("reading command")?;
        let mut parts = line.split_whitespace();
        let Some(command) = parts.next() else {
            continue;
        };
        match command {
            "quit" => break,
            "help" => writeln!(out, "{HELP}")?,
            "show" => write_marked_draft(out, &preview)?,
            "ins" | "del" | "sub" => {
                match parse_edit(command, &mut parts, &tokenizer) {
                    Ok(edit) => match preview.apply(&edit, editloop_core::Actor::User) {
                        Ok(next) => {
                            preview = next;
                            queued.push(edit);
                            write_draft(out, &preview)?;
                        }
                        Err(e) => writeln!(out, "edit rejected: {e}")?,
                    },
                    Err(e) => writeln!(out, "bad command: {e} (try `help`)")?,
                }
            }
            "done" => {
                if !session.check_boundary() {
                    writeln!(out, "session already over: {:?}", session.status())?;
                    break;
                }
                session.user_turn_manual(std::mem::take(&mut queued))?;
                let draft = session.agent_turn(agent)?;
                preview = draft.clone();
                writeln!(out, "agent:")?;
                write_draft(out, &preview)?;
                if let Some(goal) = session.goal() {
                    let score = cfg.score_fn.score(&preview, goal);
                    writeln!(out, "score vs goal: {score:.4}")?;
                }
                if !session.check_boundary() {
                    writeln!(out, "session finished: {:?}", session.status())?;
                    break;
                }
            }
            other => writeln!(out, "unknown command {other:?} (try `help`)")?,
        }
    }
    let trace = session.into_trace(&policy_name);
    Ok(ReplOutcome { trace })
}

fn parse_edit<'a, I: Iterator<Item = &'a str>>(
    command: &str,
    parts: &mut I,
    tokenizer: &WhitespaceTokenizer,
) -> Result<Edit> {
    let loc: usize = parts
        .next()
        .context("missing location")?
        .parse()
        .context("location must be a number")?;
    match command {
        "del" => Ok(Edit::del(loc)),
        _ => {
            let raw = parts.next().context("missing word")?;
            let mut tokens = tokenizer.tokenize(raw);
            if tokens.len() != 1 {
                bail!("one word per edit, got {raw:?}");
            }
            let word = tokens.remove(0);
            if command == "ins" {
                Ok(Edit::ins(loc, word))
            } else {
                Ok(Edit::sub(loc, word))
            }
        }
    }
}

fn write_draft<W: Write>(out: &mut W, doc: &Document) -> Result<()> {
    if doc.is_empty() {
        writeln!(out, "draft: (blank)")?;
    } else {
        writeln!(out, "draft: {doc}")?;
    }
    Ok(())
}

fn write_marked_draft<W: Write>(out: &mut W, doc: &Document) -> Result<()> {
    let rendered: Vec<String> = doc
        .tokens()
        .iter()
        .zip(doc.marks())
        .map(|(t, m)| match m {
            Mark::None => t.clone(),
            Mark::UserInserted => format!("{t}[u]"),
            Mark::AgentInserted => format!("{t}[a]"),
        })
        .collect();
    writeln!(out, "draft: {}", rendered.join(" "))?;
    Ok(())
}

/// Replays a saved trace: recorded edits are re-applied for consistency,
/// and when an agent is supplied its turns are re-run under the header
/// seed and compared to the recorded drafts.
pub fn replay_trace(
    trace: &SessionTrace,
    agent: Option<&mut dyn Agent>,
    out: &mut impl Write,
) -> Result<bool> {
    let final_draft = trace
        .replay_edits()
        .map_err(|e| anyhow::anyhow!("edit replay failed: {e}"))?;
    let recorded = trace
        .final_draft()
        .map(|d| d.to_string())
        .unwrap_or_default();
    writeln!(out, "edit replay ok; final draft: {final_draft}")?;
    if final_draft.to_string() != recorded && !recorded.is_empty() {
        writeln!(out, "MISMATCH: trace records {recorded}")?;
        return Ok(false);
    }
    let Some(agent) = agent else {
        return Ok(true);
    };

    let sim = TrigramSimilarity::new();
    let cfg = trace.header.config.clone();
    let mut session = Session::new(trace.header.goal.clone(), cfg.clone(), &sim)?;
    agent.reset(cfg.seed);
    let mut ok = true;
    let mut turns = trace.turns.iter();
    while let Some(user_turn) = turns.next() {
        if user_turn.actor != editloop_core::Actor::User {
            bail!("trace does not alternate turns");
        }
        if !session.check_boundary() {
            break;
        }
        session.user_turn_manual(user_turn.edits.clone())?;
        let Some(agent_turn) = turns.next() else { break };
        let draft = session.agent_turn(agent)?;
        if !draft.same_tokens(&agent_turn.draft) {
            writeln!(
                out,
                "agent divergence at h={}: replay {draft}, trace {}",
                agent_turn.h, agent_turn.draft
            )?;
            ok = false;
        }
    }
    if ok {
        writeln!(out, "agent replay ok: all recorded agent drafts reproduced")?;
    }
    Ok(ok)
}
