//! Inference sets and geometric-mean emotion scores.

use serde::{Deserialize, Serialize};

use super::{EmotionDictionary, EngineError};
use crate::backend::{BackendError, CommonsenseBackend, Dimension};
use crate::corpus::{PairKey, Story};
use crate::emotion::{Emotion, EMOTION_COUNT};
use crate::rolelab::Role;

/// Where an element of an inference set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "raw_event")]
    RawEvent,
    #[serde(rename = "xIntent")]
    XIntent,
    #[serde(rename = "xReact_text")]
    XReactText,
    #[serde(rename = "oReact_text")]
    OReactText,
    #[serde(rename = "prev_xEffect")]
    PrevXEffect,
    #[serde(rename = "prev_oEffect")]
    PrevOEffect,
    #[serde(rename = "cur_xEffect")]
    CurXEffect,
    #[serde(rename = "cur_oEffect")]
    CurOEffect,
}

impl Provenance {
    pub fn is_effect(self) -> bool {
        matches!(
            self,
            Provenance::PrevXEffect | Provenance::PrevOEffect | Provenance::CurXEffect | Provenance::CurOEffect
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceElement {
    pub text: String,
    pub provenance: Provenance,
}

/// The events used as evidence for one (line, character) pair.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InferenceSet {
    pub elements: Vec<InferenceElement>,
}

impl InferenceSet {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.elements.iter().map(|e| e.text.as_str())
    }

    pub fn provenances(&self) -> Vec<Provenance> {
        self.elements.iter().map(|e| e.provenance).collect()
    }

    fn push(&mut self, text: String, provenance: Provenance) {
        self.elements.push(InferenceElement { text, provenance });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringOptions {
    /// Also append the current line's effect inference.
    pub include_current_effect: bool,
    /// Lower bound applied to each probability before averaging; `None`
    /// keeps zeros, which force a zero score.
    pub probability_floor: Option<f64>,
}

/// Builds the inference set for `character` in line `t`.
///
/// `prev_role` is the character's role in line `t - 1`, if it had one; the
/// previous line's effect along that role's dimension is appended.
pub fn build_inference_set<B: CommonsenseBackend + ?Sized>(
    story: &Story,
    t: usize,
    character: &str,
    role: Role,
    prev_role: Option<Role>,
    backend: &B,
    options: &ScoringOptions,
) -> Result<InferenceSet, EngineError> {
    let locus = |source: BackendError| EngineError::Backend {
        pair: PairKey::new(story.story_id.clone(), t, character),
        source,
    };
    let line = story
        .lines
        .get(t)
        .ok_or_else(|| EngineError::Config(format!("story `{}` has no line {t}", story.story_id)))?;
    let event = line.effective_text();
    let mut set = InferenceSet::default();
    set.push(event.to_string(), Provenance::RawEvent);
    match role {
        Role::Actor => {
            set.push(
                backend.generate(event, Dimension::XIntent).map_err(locus)?,
                Provenance::XIntent,
            );
            set.push(
                backend.generate(event, Dimension::XReact).map_err(locus)?,
                Provenance::XReactText,
            );
        }
        Role::Object => {
            set.push(
                backend.generate(event, Dimension::OReact).map_err(locus)?,
                Provenance::OReactText,
            );
        }
    }
    if let (Some(prev), true) = (prev_role, t > 0) {
        let prev_event = story.lines[t - 1].effective_text();
        let (dim, prov) = match prev {
            Role::Actor => (Dimension::XEffect, Provenance::PrevXEffect),
            Role::Object => (Dimension::OEffect, Provenance::PrevOEffect),
        };
        set.push(backend.generate(prev_event, dim).map_err(locus)?, prov);
    }
    if options.include_current_effect {
        let (dim, prov) = match role {
            Role::Actor => (Dimension::XEffect, Provenance::CurXEffect),
            Role::Object => (Dimension::OEffect, Provenance::CurOEffect),
        };
        set.push(backend.generate(event, dim).map_err(locus)?, prov);
    }
    Ok(set)
}

/// Geometric mean computed in log space and clamped to `[min, max]` of the
/// inputs. Any zero gives zero; an empty slice gives zero.
pub fn geometric_mean(probs: &[f64]) -> f64 {
    if probs.is_empty() || probs.iter().any(|&p| p <= 0.0) {
        return 0.0;
    }
    let lo = probs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_log = probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64;
    mean_log.exp().clamp(lo, hi)
}

/// Score of `emotion` for a pair: geometric mean of the reaction-word
/// probability over every element of `set`.
pub fn score_emotion<B: CommonsenseBackend + ?Sized>(
    set: &InferenceSet,
    role: Role,
    emotion: Emotion,
    dictionary: &EmotionDictionary,
    backend: &B,
    options: &ScoringOptions,
) -> Result<f64, BackendError> {
    let word = dictionary.word(emotion);
    let mut probs = Vec::with_capacity(set.len());
    for text in set.texts() {
        let p = backend.react_word_prob(text, role, word)?;
        probs.push(match options.probability_floor {
            Some(floor) => p.max(floor),
            None => p,
        });
    }
    Ok(geometric_mean(&probs))
}

/// All eight scores for a pair, in canonical emotion order.
pub fn score_all<B: CommonsenseBackend + ?Sized>(
    set: &InferenceSet,
    role: Role,
    dictionary: &EmotionDictionary,
    backend: &B,
    options: &ScoringOptions,
) -> Result<[f64; EMOTION_COUNT], BackendError> {
    let mut out = [0.0; EMOTION_COUNT];
    for e in Emotion::ALL {
        out[e.index()] = score_emotion(set, role, e, dictionary, backend, options)?;
    }
    Ok(out)
}
