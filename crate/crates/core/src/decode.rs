//! Inference-time draft generation from an edit policy: sample non-stop
//! edits from the renormalized top-k until the stop probability clears a
//! threshold or the edit budget runs out, then return the visited draft
//! with the highest stop probability.
//!
//! The stop action itself is never sampled; halting is purely threshold
//! or budget driven, and an early spurious stop signal cannot truncate
//! the draft because the best-stop draft is what gets returned.

use crate::doc::{Actor, Document, Edit};
use crate::env::{Agent, AgentTurn, PolicyState};
use crate::policy::EditPolicy;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Halt once the stop probability exceeds this threshold.
    pub stop_threshold: f64,
    /// Maximum number of edits sampled.
    pub max_edits: usize,
    /// Sample from the renormalized top-k non-stop edits.
    pub top_k: usize,
    pub rng_seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> DecodeConfig {
        DecodeConfig { stop_threshold: 0.95, max_edits: 64, top_k: 10, rng_seed: 0 }
    }
}

/// One visited draft during decoding, with the stop probability the
/// policy assigned to it.
#[derive(Debug, Clone)]
pub struct DecodeStep {
    pub draft: Document,
    pub stop_prob: f64,
    /// The edit sampled to leave this draft, if any.
    pub edit: Option<Edit>,
}

#[derive(Debug, Clone)]
pub struct DecodeTrace {
    pub steps: Vec<DecodeStep>,
    /// Index of the returned draft: argmax of stop probability, earliest
    /// on ties.
    pub chosen: usize,
}

impl DecodeTrace {
    pub fn final_draft(&self) -> &Document {
        &self.steps[self.chosen].draft
    }

    /// The edits that produce the returned draft from the input.
    pub fn chosen_edits(&self) -> Vec<Edit> {
        self.steps[..self.chosen]
            .iter()
            .map(|s| s.edit.clone().expect("all steps before the chosen draft carry an edit"))
            .collect()
    }
}

/// Decodes a draft, keeping the full instrumented trace.
pub fn decode_traced(
    policy: &dyn EditPolicy,
    input: &Document,
    state: &PolicyState,
    cfg: &DecodeConfig,
) -> DecodeTrace {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.rng_seed);
    let mut steps: Vec<DecodeStep> = Vec::new();
    let mut current = input.clone();
    loop {
        let stop_prob = policy.stop_prob(&current, state);
        steps.push(DecodeStep { draft: current.clone(), stop_prob, edit: None });
        if stop_prob > cfg.stop_threshold || steps.len() > cfg.max_edits {
            break;
        }
        let mut actions = policy.enumerate_edits(&current, state);
        let mass: f64 = actions.iter().map(|(_, p)| p).sum();
        if actions.is_empty() || mass <= 0.0 {
            log::warn!("no valid edits at stop probability {stop_prob:.4}; returning best draft");
            break;
        }
        // Top-k by probability; ties resolved by the edit ordering so the
        // kept set is deterministic.
        actions.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        actions.truncate(cfg.top_k.max(1));
        let kept: f64 = actions.iter().map(|(_, p)| p).sum();
        let mut pick = rng.gen_range(0.0..kept);
        let mut chosen = actions.len() - 1;
        for (i, (_, p)) in actions.iter().enumerate() {
            if pick < *p {
                chosen = i;
                break;
            }
            pick -= p;
        }
        let edit = actions.swap_remove(chosen).0;
        let next = current
            .apply(&edit, Actor::Agent)
            .expect("enumerated edits are valid on the current draft");
        steps.last_mut().expect("just pushed").edit = Some(edit);
        current = next;
    }
    let chosen = steps
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.stop_prob
                .partial_cmp(&b.stop_prob)
                .unwrap()
                .then_with(|| ib.cmp(ia)) // earliest wins ties
        })
        .map(|(i, _)| i)
        .expect("at least the input draft was visited");
    DecodeTrace { steps, chosen }
}

/// Decodes a draft from an edit policy.
pub fn decode(
    policy: &dyn EditPolicy,
    input: &Document,
    state: &PolicyState,
    cfg: &DecodeConfig,
) -> Document {
    decode_traced(policy, input, state, cfg).final_draft().clone()
}

/// Adapts an edit policy into a session agent via decoding. Each session
/// reseeds the decoder from the session seed; each turn advances the
/// per-turn seed so turns stay decorrelated but reproducible.
pub struct DecodingAgent<P> {
    policy: P,
    cfg: DecodeConfig,
    name: String,
    turn: u64,
}

impl<P: EditPolicy> DecodingAgent<P> {
    pub fn new(policy: P, cfg: DecodeConfig) -> DecodingAgent<P> {
        DecodingAgent { policy, cfg, name: "edit-policy".to_string(), turn: 0 }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> DecodingAgent<P> {
        self.name = name.into();
        self
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }
}

impl<P: EditPolicy> Agent for DecodingAgent<P> {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self, seed: u64) {
        self.cfg.rng_seed = seed;
        self.turn = 0;
    }

    fn act(&mut self, state: &PolicyState) -> Result<AgentTurn, String> {
        let mut cfg = self.cfg.clone();
        cfg.rng_seed = cfg.rng_seed.wrapping_add(self.turn.wrapping_mul(0x9e3779b9));
        self.turn += 1;
        let trace = decode_traced(&self.policy, &state.u_cur, state, &cfg);
        Ok(AgentTurn::with_edits(trace.final_draft().clone(), trace.chosen_edits()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{EditOp, DEFAULT_CAPACITY};

    fn doc(text: &str) -> Document {
        let toks: Vec<&str> = text.split_whitespace().collect();
        Document::from_tokens(toks, DEFAULT_CAPACITY).unwrap()
    }

    /// Deterministic hand-built policy for the motivating case: it wants
    /// "and" inserted into "the man the dog" and only then signals stop.
    struct InsertAnd;

    impl EditPolicy for InsertAnd {
        fn stop_prob(&self, d: &Document, _s: &PolicyState) -> f64 {
            if d.to_string() == "the man and the dog" {
                0.99
            } else {
                0.3
            }
        }

        fn edit_log_prob(&self, d: &Document, s: &PolicyState, e: &Edit) -> f64 {
            let all = self.enumerate_edits(d, s);
            all.iter()
                .find(|(a, _)| a == e)
                .map(|(_, p)| p.ln())
                .unwrap_or(f64::MIN_POSITIVE.ln())
        }

        fn enumerate_edits(&self, d: &Document, _s: &PolicyState) -> Vec<(Edit, f64)> {
            let stop = if d.to_string() == "the man and the dog" { 0.99 } else { 0.3 };
            vec![(Edit::ins(3, "and"), 1.0 - stop)]
        }
    }

    #[test]
    fn returns_best_stop_draft_not_an_intermediate() {
        let input = doc("the man the dog");
        let state = PolicyState::initial(input.clone());
        let out = decode(&InsertAnd, &input, &state, &DecodeConfig::default());
        assert_eq!(out.to_string(), "the man and the dog");
    }

    /// All mass on stop: decoding returns the input untouched.
    struct AlwaysStop;

    impl EditPolicy for AlwaysStop {
        fn stop_prob(&self, _d: &Document, _s: &PolicyState) -> f64 {
            1.0
        }

        fn edit_log_prob(&self, _d: &Document, _s: &PolicyState, _e: &Edit) -> f64 {
            f64::MIN_POSITIVE.ln()
        }

        fn enumerate_edits(&self, _d: &Document, _s: &PolicyState) -> Vec<(Edit, f64)> {
            Vec::new()
        }
    }

    #[test]
    fn certain_stop_returns_input_after_zero_edits() {
        let input = doc("aa bb");
        let state = PolicyState::initial(input.clone());
        let trace = decode_traced(&AlwaysStop, &input, &state, &DecodeConfig::default());
        assert_eq!(trace.steps.len(), 1);
        assert!(trace.final_draft().same_tokens(&input));
        assert!(trace.chosen_edits().is_empty());
    }

    /// Degenerate: mass entirely on stop but below the threshold.
    struct Degenerate;

    impl EditPolicy for Degenerate {
        fn stop_prob(&self, _d: &Document, _s: &PolicyState) -> f64 {
            0.6
        }

        fn edit_log_prob(&self, _d: &Document, _s: &PolicyState, _e: &Edit) -> f64 {
            f64::MIN_POSITIVE.ln()
        }

        fn enumerate_edits(&self, _d: &Document, _s: &PolicyState) -> Vec<(Edit, f64)> {
            Vec::new()
        }
    }

    #[test]
    fn degenerate_policy_returns_current_draft() {
        let input = doc("aa");
        let state = PolicyState::initial(input.clone());
        let trace = decode_traced(&Degenerate, &input, &state, &DecodeConfig::default());
        assert!(trace.final_draft().same_tokens(&input));
    }

    /// Flat policy over a handful of insertions, for budget and top-k
    /// behaviour.
    struct FlatInserter {
        stop: f64,
    }

    impl EditPolicy for FlatInserter {
        fn stop_prob(&self, _d: &Document, _s: &PolicyState) -> f64 {
            self.stop
        }

        fn edit_log_prob(&self, d: &Document, s: &PolicyState, e: &Edit) -> f64 {
            let all = self.enumerate_edits(d, s);
            all.iter()
                .find(|(a, _)| a == e)
                .map(|(_, p)| p.ln())
                .unwrap_or(f64::MIN_POSITIVE.ln())
        }

        fn enumerate_edits(&self, d: &Document, _s: &PolicyState) -> Vec<(Edit, f64)> {
            let words = ["aa", "bb", "cc", "dd", "ee"];
            let n = d.content_len();
            let each = (1.0 - self.stop) / words.len() as f64;
            words.iter().map(|w| (Edit::ins(n + 1, *w), each)).collect()
        }
    }

    #[test]
    fn budget_caps_edit_count() {
        let input = doc("");
        let state = PolicyState::initial(input.clone());
        let cfg = DecodeConfig { stop_threshold: 0.99, max_edits: 5, top_k: 10, rng_seed: 7 };
        let trace = decode_traced(&FlatInserter { stop: 0.1 }, &input, &state, &cfg);
        // Visits the input plus exactly max_edits drafts.
        assert_eq!(trace.steps.len(), 6);
        let edits: usize = trace.steps.iter().filter(|s| s.edit.is_some()).count();
        assert_eq!(edits, 5);
    }

    #[test]
    fn returned_draft_maximizes_stop_probability() {
        let input = doc("");
        let state = PolicyState::initial(input.clone());
        for seed in 0..50 {
            let cfg = DecodeConfig { stop_threshold: 0.99, max_edits: 6, top_k: 3, rng_seed: seed };
            let trace = decode_traced(&FlatInserter { stop: 0.2 }, &input, &state, &cfg);
            let max = trace.steps.iter().map(|s| s.stop_prob).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(trace.steps[trace.chosen].stop_prob, max);
            // Stop was never sampled: every non-final visited step left
            // via an edit.
            for s in &trace.steps[..trace.steps.len() - 1] {
                assert!(s.edit.is_some());
            }
        }
    }

    #[test]
    fn top_k_renormalization_preserves_ratios() {
        // Unequal masses: with top_k = 2 only the two heaviest survive
        // and their ratio must be unchanged.
        struct Skewed;
        impl EditPolicy for Skewed {
            fn stop_prob(&self, _d: &Document, _s: &PolicyState) -> f64 {
                0.1
            }
            fn edit_log_prob(&self, _d: &Document, _s: &PolicyState, _e: &Edit) -> f64 {
                unimplemented!()
            }
            fn enumerate_edits(&self, d: &Document, _s: &PolicyState) -> Vec<(Edit, f64)> {
                let n = d.content_len();
                vec![
                    (Edit::ins(n + 1, "heavy"), 0.5),
                    (Edit::ins(n + 1, "medium"), 0.25),
                    (Edit::ins(n + 1, "light"), 0.15),
                ]
            }
        }
        let input = doc("");
        let state = PolicyState::initial(input.clone());
        let cfg = DecodeConfig { stop_threshold: 0.99, max_edits: 1, top_k: 2, rng_seed: 0 };
        let mut counts = std::collections::BTreeMap::new();
        for seed in 0..6000u64 {
            let trace = decode_traced(&Skewed, &input, &state, &DecodeConfig { rng_seed: seed, ..cfg.clone() });
            if let Some(e) = &trace.steps[0].edit {
                *counts.entry(e.word.clone()).or_insert(0usize) += 1;
            }
        }
        assert_eq!(counts.get("light"), None, "outside top-k");
        let heavy = counts["heavy"] as f64;
        let medium = counts["medium"] as f64;
        let ratio = heavy / medium;
        assert!((ratio - 2.0).abs() < 0.2, "kept ratio should stay near 2, got {ratio}");
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let input = doc("");
        let state = PolicyState::initial(input.clone());
        let cfg = DecodeConfig { stop_threshold: 0.9, max_edits: 8, top_k: 3, rng_seed: 11 };
        let a = decode(&FlatInserter { stop: 0.3 }, &input, &state, &cfg);
        let b = decode(&FlatInserter { stop: 0.3 }, &input, &state, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn defaults_match_contract() {
        let cfg = DecodeConfig::default();
        assert_eq!(cfg.stop_threshold, 0.95);
        assert_eq!(cfg.max_edits, 64);
        assert_eq!(cfg.top_k, 10);
    }

    #[test]
    fn op_ordering_is_stable_for_ties() {
        // Equal-probability edits: the kept top-k set must not depend on
        // enumeration order quirks.
        let input = doc("");
        let state = PolicyState::initial(input.clone());
        let cfg = DecodeConfig { stop_threshold: 0.99, max_edits: 1, top_k: 2, rng_seed: 3 };
        let t1 = decode_traced(&FlatInserter { stop: 0.5 }, &input, &state, &cfg);
        let t2 = decode_traced(&FlatInserter { stop: 0.5 }, &input, &state, &cfg);
        assert_eq!(t1.steps[0].edit, t2.steps[0].edit);
        assert_eq!(t1.steps[0].edit.as_ref().map(|e| e.op), Some(EditOp::Ins));
    }
}
