//! Commonsense-inference backends.
//!
//! A backend answers two kinds of query about an event sentence: the top
//! continuation along one inference dimension, and the probability that a
//! dimension's continuation starts with a given word. The engine only sees
//! the [`CommonsenseBackend`] trait; [`FixtureBackend`], [`SyntheticOracle`]
//! and [`RemoteBackend`] implement it, and [`CachedBackend`] adds a
//! persistent cache in front of any of them.
//!
//! Whole-word probabilities are the backend's concern: a sub-word model
//! multiplies the conditionals of the word's pieces along the greedy prefix
//! before answering, so tokenization never crosses this interface.

mod cache;
mod fixture;
mod remote;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::RecordError;
use crate::rolelab::Role;

pub use cache::{CacheKey, CachedBackend, InferenceCache};
pub use fixture::{FixtureBackend, RecordingBackend};
pub use remote::{RemoteBackend, RemoteConfig};
pub use synthetic::{SyntheticEvent, SyntheticOracle, ORACLE_ABSENT_PROB, ORACLE_PRESENT_MASS};

/// Tolerance on the total probability of a queried word set.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// One ATOMIC relation type. Only intent, reaction and effect are queried
/// by the engine; the rest are accepted on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    #[serde(rename = "xIntent")]
    XIntent,
    #[serde(rename = "xNeed")]
    XNeed,
    #[serde(rename = "xAttr")]
    XAttr,
    #[serde(rename = "xReact")]
    XReact,
    #[serde(rename = "xWant")]
    XWant,
    #[serde(rename = "xEffect")]
    XEffect,
    #[serde(rename = "oReact")]
    OReact,
    #[serde(rename = "oWant")]
    OWant,
    #[serde(rename = "oEffect")]
    OEffect,
}

impl Dimension {
    pub const ALL: [Dimension; 9] = [
        Dimension::XIntent,
        Dimension::XNeed,
        Dimension::XAttr,
        Dimension::XReact,
        Dimension::XWant,
        Dimension::XEffect,
        Dimension::OReact,
        Dimension::OWant,
        Dimension::OEffect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::XIntent => "xIntent",
            Dimension::XNeed => "xNeed",
            Dimension::XAttr => "xAttr",
            Dimension::XReact => "xReact",
            Dimension::XWant => "xWant",
            Dimension::XEffect => "xEffect",
            Dimension::OReact => "oReact",
            Dimension::OWant => "oWant",
            Dimension::OEffect => "oEffect",
        }
    }

    /// Dimensions about the event's actor carry the `x` prefix.
    pub fn is_actor_side(self) -> bool {
        self.name().starts_with('x')
    }

    pub fn side(self) -> Role {
        if self.is_actor_side() {
            Role::Actor
        } else {
            Role::Object
        }
    }

    /// Whether the engine ever queries this dimension.
    pub fn is_consumed(self) -> bool {
        matches!(
            self,
            Dimension::XIntent | Dimension::XReact | Dimension::XEffect | Dimension::OReact | Dimension::OEffect
        )
    }

    pub fn react(role: Role) -> Dimension {
        match role {
            Role::Actor => Dimension::XReact,
            Role::Object => Dimension::OReact,
        }
    }

    pub fn effect(role: Role) -> Dimension {
        match role {
            Role::Actor => Dimension::XEffect,
            Role::Object => Dimension::OEffect,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown dimension `{s}`"))
    }
}

/// What was asked of the backend about an (event, dimension) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "op", content = "word", rename_all = "snake_case")]
pub enum Query {
    Generate,
    WordProb(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    GeneratedText(String),
    Prob(f64),
}

/// Backend answers for one (event, dimension) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub event: String,
    pub dimension: Dimension,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_text: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub word_probs: BTreeMap<String, f64>,
}

impl InferenceRecord {
    pub fn new(event: impl Into<String>, dimension: Dimension) -> Self {
        InferenceRecord {
            event: event.into(),
            dimension,
            generated_text: None,
            word_probs: BTreeMap::new(),
        }
    }

    /// Probabilities in [0, 1], summing to at most 1 + tolerance, and a
    /// non-empty generation when one is present.
    pub fn check(&self) -> Result<(), String> {
        if let Some((w, p)) = self.word_probs.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(format!("probability {p} for `{w}` is outside [0, 1]"));
        }
        let total: f64 = self.word_probs.values().sum();
        if total > 1.0 + PROB_SUM_TOLERANCE {
            return Err(format!("word probabilities sum to {total}"));
        }
        if self.generated_text.as_deref().is_some_and(|t| t.trim().is_empty()) {
            return Err("empty generated text".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no stored answer for {query:?} on ({event:?}, {dimension})")]
    Miss {
        event: String,
        dimension: Dimension,
        query: Query,
    },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend error `{code}`: {detail}")]
    Remote { code: String, detail: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("cache integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Record(#[from] RecordError),
}

impl BackendError {
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// A commonsense model behind a uniform query interface.
///
/// Implementations must be deterministic per (event, dimension, query) and
/// safe to call from many threads at once.
pub trait CommonsenseBackend: Send + Sync {
    /// Model name and version; part of every cache key.
    fn identity(&self) -> String;

    /// Top continuation of `event` along `dimension`.
    fn generate(&self, event: &str, dimension: Dimension) -> Result<String, BackendError>;

    /// Probability that the continuation's first word is `word`.
    fn word_prob(&self, event: &str, dimension: Dimension, word: &str) -> Result<f64, BackendError>;

    /// `word_prob` on the reaction dimension matching `role`.
    fn react_word_prob(&self, event: &str, role: Role, word: &str) -> Result<f64, BackendError> {
        self.word_prob(event, Dimension::react(role), word)
    }

    fn answer(&self, event: &str, dimension: Dimension, query: &Query) -> Result<Answer, BackendError> {
        match query {
            Query::Generate => self.generate(event, dimension).map(Answer::GeneratedText),
            Query::WordProb(w) => self.word_prob(event, dimension, w).map(Answer::Prob),
        }
    }
}

fn check_event(event: &str) -> Result<(), BackendError> {
    if event.trim().is_empty() {
        Err(BackendError::InvalidQuery("empty event".into()))
    } else {
        Ok(())
    }
}

fn check_prob(event: &str, word: &str, p: f64) -> Result<f64, BackendError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(BackendError::Protocol(format!(
            "probability {p} for `{word}` on {event:?} is outside [0, 1]"
        )))
    }
}

impl<T: CommonsenseBackend + ?Sized> CommonsenseBackend for &T {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn generate(&self, event: &str, dimension: Dimension) -> Result<String, BackendError> {
        (**self).generate(event, dimension)
    }
    fn word_prob(&self, event: &str, dimension: Dimension, word: &str) -> Result<f64, BackendError> {
        (**self).word_prob(event, dimension, word)
    }
}

impl<T: CommonsenseBackend + ?Sized> CommonsenseBackend for Arc<T> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn generate(&self, event: &str, dimension: Dimension) -> Result<String, BackendError> {
        (**self).generate(event, dimension)
    }
    fn word_prob(&self, event: &str, dimension: Dimension, word: &str) -> Result<f64, BackendError> {
        (**self).word_prob(event, dimension, word)
    }
}

impl<T: CommonsenseBackend + ?Sized> CommonsenseBackend for Box<T> {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn generate(&self, event: &str, dimension: Dimension) -> Result<String, BackendError> {
        (**self).generate(event, dimension)
    }
    fn word_prob(&self, event: &str, dimension: Dimension, word: &str) -> Result<f64, BackendError> {
        (**self).word_prob(event, dimension, word)
    }
}

/// Counts the queries that reach the wrapped backend.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: CommonsenseBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: CommonsenseBackend> CommonsenseBackend for CountingBackend<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }
    fn generate(&self, event: &str, dimension: Dimension) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(event, dimension)
    }
    fn word_prob(&self, event: &str, dimension: Dimension, word: &str) -> Result<f64, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.word_prob(event, dimension, word)
    }
}
