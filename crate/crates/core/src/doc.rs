//! Documents as bounded token sequences and the single-word edits acting on them.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// The distinguished padding token. Internal only; it never appears in
/// document content and is never rendered into user-visible text.
pub const BLANK: &str = "\u{2423}BLANK\u{2423}";

/// Default document capacity in tokens.
pub const DEFAULT_CAPACITY: usize = 64;

pub type Word = String;

/// Who performed an edit. Drives the provenance mark written on the
/// touched token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    User,
    Agent,
}

/// Per-token provenance label. Used only when encoding policy-visible
/// state; the calculus itself ignores marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    #[default]
    None,
    UserInserted,
    AgentInserted,
}

impl Mark {
    pub fn for_actor(actor: Actor) -> Mark {
        match actor {
            Actor::User => Mark::UserInserted,
            Actor::Agent => Mark::AgentInserted,
        }
    }
}

/// A token sequence of bounded capacity.
///
/// Conceptually a document is a fixed-length string over the vocabulary
/// plus the blank token, where all blanks form a suffix. Only the content
/// prefix is stored; the blank suffix is implicit, which makes the
/// suffix invariant true by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    tokens: Vec<Word>,
    marks: Vec<Mark>,
    #[serde(default = "default_capacity")]
    capacity: usize,
}

fn default_capacity() -> usize {
    DEFAULT_CAPACITY
}

impl Document {
    /// The empty (all-blank) document.
    pub fn blank(capacity: usize) -> Document {
        Document { tokens: Vec::new(), marks: Vec::new(), capacity }
    }

    /// Builds a document from content tokens, all unmarked.
    ///
    /// Returns `None` if there are more tokens than `capacity` or a token
    /// equals the blank.
    pub fn from_tokens<I, S>(tokens: I, capacity: usize) -> Option<Document>
    where
        I: IntoIterator<Item = S>,
        S: Into<Word>,
    {
        let tokens: Vec<Word> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() > capacity || tokens.iter().any(|t| t == BLANK) {
            return None;
        }
        let marks = vec![Mark::None; tokens.len()];
        Some(Document { tokens, marks, capacity })
    }

    /// Rebuilds a document with explicit marks (trace deserialization).
    pub fn from_parts(tokens: Vec<Word>, marks: Vec<Mark>, capacity: usize) -> Option<Document> {
        if tokens.len() != marks.len() || tokens.len() > capacity {
            return None;
        }
        if tokens.iter().any(|t| t == BLANK) {
            return None;
        }
        Some(Document { tokens, marks, capacity })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of non-blank tokens.
    pub fn content_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Word] {
        &self.tokens
    }

    pub fn marks(&self) -> &[Mark] {
        &self.marks
    }

    /// Token at 1-based location `l`.
    pub fn token_at(&self, l: usize) -> Option<&Word> {
        if l == 0 {
            return None;
        }
        self.tokens.get(l - 1)
    }

    /// Content equality, ignoring marks and capacity. This is the notion
    /// of equality used by stopping checks and goal comparisons.
    pub fn same_tokens(&self, other: &Document) -> bool {
        self.tokens == other.tokens
    }

    /// The fixed-length padded view: content followed by blanks, exactly
    /// `capacity` entries.
    pub fn padded(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.tokens.iter().map(|t| t.as_str()).collect();
        out.resize(self.capacity, BLANK);
        out
    }

    /// Applies a single-word edit, returning a new document.
    ///
    /// Insertion shifts the suffix right, deletion shifts it left and
    /// restores a trailing blank, substitution replaces in place. The
    /// touched token is marked for `actor`.
    pub fn apply(&self, edit: &Edit, actor: Actor) -> Result<Document, EditError> {
        let n = self.content_len();
        let l = edit.location;
        match edit.op {
            EditOp::Ins => {
                if l < 1 || l > n + 1 {
                    return Err(EditError::LocationOutOfBounds { location: l, op: EditOp::Ins, content_len: n });
                }
                if n >= self.capacity {
                    return Err(EditError::CapacityExceeded { capacity: self.capacity });
                }
                let mut doc = self.clone();
                doc.tokens.insert(l - 1, edit.word.clone());
                doc.marks.insert(l - 1, Mark::for_actor(actor));
                Ok(doc)
            }
            EditOp::Del => {
                if l < 1 || l > n {
                    return Err(EditError::LocationOutOfBounds { location: l, op: EditOp::Del, content_len: n });
                }
                let mut doc = self.clone();
                doc.tokens.remove(l - 1);
                doc.marks.remove(l - 1);
                Ok(doc)
            }
            EditOp::Sub => {
                if l < 1 || l > n {
                    return Err(EditError::LocationOutOfBounds { location: l, op: EditOp::Sub, content_len: n });
                }
                let mut doc = self.clone();
                doc.tokens[l - 1] = edit.word.clone();
                doc.marks[l - 1] = Mark::for_actor(actor);
                Ok(doc)
            }
        }
    }

    /// Applies edits left to right. Fails with the index of the first
    /// edit that does not fit the intermediate document.
    pub fn apply_sequence(&self, edits: &[Edit], actor: Actor) -> Result<Document, SequenceError> {
        let mut doc = self.clone();
        for (index, edit) in edits.iter().enumerate() {
            doc = doc.apply(edit, actor).map_err(|error| SequenceError { index, error })?;
        }
        Ok(doc)
    }
}

impl fmt::Display for Document {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for t in &self.tokens {
            if !first {
                f.write_str(" ")?;
            }
            f.write_str(t)?;
            first = false;
        }
        Ok(())
    }
}

/// Edit operation kind. The declaration order fixes the `Ord` used for
/// deterministic edit-set iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Ins,
    Del,
    Sub,
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditOp::Ins => f.write_str("ins"),
            EditOp::Del => f.write_str("del"),
            EditOp::Sub => f.write_str("sub"),
        }
    }
}

/// A single-word edit: 1-based location, operation, and word. Deletions
/// carry the blank token as their word.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edit {
    pub location: usize,
    pub op: EditOp,
    pub word: Word,
}

impl Edit {
    pub fn ins(location: usize, word: impl Into<Word>) -> Edit {
        Edit { location, op: EditOp::Ins, word: word.into() }
    }

    pub fn del(location: usize) -> Edit {
        Edit { location, op: EditOp::Del, word: BLANK.to_string() }
    }

    pub fn sub(location: usize, word: impl Into<Word>) -> Edit {
        Edit { location, op: EditOp::Sub, word: word.into() }
    }
}

impl fmt::Display for Edit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            EditOp::Del => write!(f, "({}, del)", self.location),
            op => write!(f, "({}, {}, {})", self.location, op, self.word),
        }
    }
}

/// An edit-policy action: either stop, or a single edit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditAction {
    Stop,
    Edit(Edit),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("location {location} out of bounds for {op} on content of length {content_len}")]
    LocationOutOfBounds { location: usize, op: EditOp, content_len: usize },
    #[error("cannot insert into a full document (capacity {capacity})")]
    CapacityExceeded { capacity: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("edit {index} failed: {error}")]
pub struct SequenceError {
    pub index: usize,
    pub error: EditError,
}

/// Splits raw text into document tokens.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<Word>;
}

/// Default tokenizer: whitespace split, with trailing punctuation peeled
/// off into separate single-character tokens.
#[derive(Debug, Clone, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<Word> {
        let mut out = Vec::new();
        for piece in text.split_whitespace() {
            let mut tail = Vec::new();
            let mut body = piece;
            while let Some(c) = body.chars().last() {
                if matches!(c, '.' | ',' | '!' | '?' | ';' | ':') && body.chars().count() > 1 {
                    let cut = body.len() - c.len_utf8();
                    tail.push(c.to_string());
                    body = &body[..cut];
                } else {
                    break;
                }
            }
            if !body.is_empty() {
                out.push(body.to_string());
            }
            out.extend(tail.into_iter().rev());
        }
        out
    }
}

/// Maps tokens to word-group ids, for tokenizers whose tokens split words.
/// Groups are only consumed by the simulated user's complete-word
/// heuristic; the calculus never merges tokens.
pub trait TokenGrouper: Send + Sync {
    /// One group id per token; tokens sharing an id form one word.
    fn group_ids(&self, tokens: &[Word]) -> Vec<usize>;
}

/// Word-level grouping: every token is its own group.
#[derive(Debug, Clone, Default)]
pub struct WordLevelGrouper;

impl TokenGrouper for WordLevelGrouper {
    fn group_ids(&self, tokens: &[Word]) -> Vec<usize> {
        (0..tokens.len()).collect()
    }
}
