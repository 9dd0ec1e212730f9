//! Collaborative text-editing sessions at desk scale.
//!
//! A goal-keeping simulated user and a pluggable agent policy take turns
//! editing a bounded document. The crate provides the single-word edit
//! calculus, score-maximal monotonic alignments, the simulated user and
//! its heuristics, the session loop with strict edit-budget accounting,
//! imitation-learning for a log-linear edit policy, threshold-based
//! decoding, and the experiment harness (interactivity sweeps and
//! ablations) built on top.

pub mod align;
pub mod corpus;
pub mod dagger;
pub mod decode;
pub mod doc;
pub mod env;
pub mod exp;
pub mod metrics;
pub mod policy;
pub mod user;

pub use align::{align, first_edits, Alignment, SimilarityProvider, TrigramSimilarity};
pub use doc::{Actor, Document, Edit, EditAction, EditOp, Mark, Word, BLANK, DEFAULT_CAPACITY};
