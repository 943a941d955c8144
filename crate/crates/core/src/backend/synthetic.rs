//! A rule-based backend whose answers are derived from gold labels.
//!
//! Every registered event has an id and one gold emotion set per side
//! (actor and object). Generations are template phrases that carry the id
//! and side, e.g. `moved by [[x|s01:2]]`, so probability queries on them can
//! be traced back to the event. The reaction word of a gold emotion gets
//! probability `0.9 / |G|`; every other word gets `1e-4`.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{check_event, BackendError, CommonsenseBackend, Dimension, Query};
use crate::corpus::Corpus;
use crate::emotion::EmotionSet;
use crate::engine::EmotionDictionary;
use crate::records::{self, ArtifactHeader, RecordError, RecordWriter};
use crate::rolelab::{Role, RoleAssignment};

/// Probability mass shared by the gold emotions of one side.
pub const ORACLE_PRESENT_MASS: f64 = 0.9;
/// Probability of any word outside the gold set.
pub const ORACLE_ABSENT_PROB: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticEvent {
    pub id: String,
    /// Surface forms that name this event (raw and resolved text).
    pub texts: Vec<String>,
    pub actor_gold: EmotionSet,
    pub object_gold: EmotionSet,
}

impl SyntheticEvent {
    fn gold(&self, side: Role) -> EmotionSet {
        match side {
            Role::Actor => self.actor_gold,
            Role::Object => self.object_gold,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    events: Vec<SyntheticEvent>,
    by_text: HashMap<String, usize>,
    by_id: HashMap<String, usize>,
    dictionary: EmotionDictionary,
}

fn marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\[([xo])\|([^\]]+)\]\]").expect("valid regex"))
}

fn lead(dimension: Dimension) -> &'static str {
    match dimension {
        Dimension::XIntent => "to see what comes of",
        Dimension::XNeed => "to prepare for",
        Dimension::XAttr => "involved in",
        Dimension::XReact => "moved by",
        Dimension::XWant => "to follow up on",
        Dimension::XEffect => "is changed by",
        Dimension::OReact => "affected by",
        Dimension::OWant => "to respond to",
        Dimension::OEffect => "is touched by",
    }
}

impl SyntheticOracle {
    /// Fails if two events share an id or a surface text.
    pub fn new(events: Vec<SyntheticEvent>, dictionary: EmotionDictionary) -> Result<Self, String> {
        let mut by_text = HashMap::new();
        let mut by_id = HashMap::new();
        for (i, ev) in events.iter().enumerate() {
            if by_id.insert(ev.id.clone(), i).is_some() {
                return Err(format!("duplicate event id `{}`", ev.id));
            }
            for t in &ev.texts {
                if let Some(j) = by_text.insert(t.clone(), i) {
                    if j != i {
                        return Err(format!("text {t:?} names both `{}` and `{}`", events[j].id, ev.id));
                    }
                }
            }
        }
        Ok(SyntheticOracle {
            events,
            by_text,
            by_id,
            dictionary,
        })
    }

    /// One event per corpus line. The gold set of a side is the union of the
    /// gold sets of the characters holding that role in `truth`.
    pub fn from_truth(
        corpus: &Corpus,
        truth: &[RoleAssignment],
        dictionary: EmotionDictionary,
    ) -> Result<Self, String> {
        let gold = corpus.gold_map();
        let mut events = Vec::new();
        for story in &corpus.stories {
            for line in &story.lines {
                let mut ev = SyntheticEvent {
                    id: format!("{}:{}", story.story_id, line.index),
                    texts: vec![line.text.clone()],
                    actor_gold: EmotionSet::empty(),
                    object_gold: EmotionSet::empty(),
                };
                if let Some(r) = &line.resolved_text {
                    if *r != line.text {
                        ev.texts.push(r.clone());
                    }
                }
                for a in truth
                    .iter()
                    .filter(|a| a.story_id == story.story_id && a.line_index == line.index)
                {
                    let g = gold.get(&a.key()).copied().unwrap_or_default();
                    match a.role {
                        Role::Actor => ev.actor_gold = ev.actor_gold.union(g),
                        Role::Object => ev.object_gold = ev.object_gold.union(g),
                    }
                }
                events.push(ev);
            }
        }
        Self::new(events, dictionary)
    }

    pub fn events(&self) -> &[SyntheticEvent] {
        &self.events
    }

    /// The event and the side a query refers to. Generated phrases carry
    /// their own side; raw text takes the side of the queried dimension.
    fn locate(&self, event: &str, dimension: Dimension, query: Query) -> Result<(&SyntheticEvent, Role), BackendError> {
        let miss = || BackendError::Miss {
            event: event.to_string(),
            dimension,
            query: query.clone(),
        };
        if let Some(c) = marker().captures(event) {
            let idx = *self.by_id.get(&c[2]).ok_or_else(miss)?;
            let side = if &c[1] == "x" { Role::Actor } else { Role::Object };
            return Ok((&self.events[idx], side));
        }
        let idx = *self.by_text.get(event).ok_or_else(miss)?;
        Ok((&self.events[idx], dimension.side()))
    }

    pub fn read<R: BufRead>(reader: R, path: &Path) -> Result<Self, BackendError> {
        let (header, body) = records::split_header(records::read_records(reader, path)?, path)?;
        let dictionary = match header {
            Some(h) => match h.settings.get("dictionary") {
                Some(d) => serde_json::from_value(d.clone())
                    .map_err(|e| RecordError::malformed(path, 1, format!("dictionary: {e}")))?,
                None => EmotionDictionary::default(),
            },
            None => EmotionDictionary::default(),
        };
        let mut events = Vec::new();
        for raw in body {
            if raw.kind != "event" {
                return Err(
                    RecordError::malformed(path, raw.line, format!("unexpected record kind `{}`", raw.kind)).into(),
                );
            }
            events.push(raw.decode(path)?);
        }
        Self::new(events, dictionary).map_err(|m| RecordError::malformed(path, 0, m).into())
    }

    pub fn read_file(path: &Path) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path).map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read(std::io::BufReader::new(file), path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = RecordWriter::new(Vec::new());
        let header = ArtifactHeader::new("oracle", serde_json::json!({ "dictionary": self.dictionary }));
        w.header(&header).expect("write to memory");
        for ev in &self.events {
            w.record("event", ev).expect("write to memory");
        }
        w.finish().expect("write to memory")
    }
}

impl CommonsenseBackend for SyntheticOracle {
    fn identity(&self) -> String {
        "synthetic-oracle/1".to_string()
    }

    fn generate(&self, event: &str, dimension: Dimension) -> Result<String, BackendError> {
        check_event(event)?;
        let (ev, _) = self.locate(event, dimension, Query::Generate)?;
        let side = if dimension.is_actor_side() { 'x' } else { 'o' };
        Ok(format!("{} [[{side}|{}]]", lead(dimension), ev.id))
    }

    fn word_prob(&self, event: &str, dimension: Dimension, word: &str) -> Result<f64, BackendError> {
        check_event(event)?;
        let (ev, side) = self.locate(event, dimension, Query::WordProb(word.to_string()))?;
        let gold = ev.gold(side);
        Ok(match self.dictionary.emotion_for(word) {
            Some(e) if gold.contains(e) => ORACLE_PRESENT_MASS / gold.len() as f64,
            _ => ORACLE_ABSENT_PROB,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::Emotion;

    fn oracle() -> SyntheticOracle {
        SyntheticOracle::new(
            vec![
                SyntheticEvent {
                    id: "s:0".into(),
                    texts: vec!["Tom won.".into()],
                    actor_gold: [Emotion::Joy].into_iter().collect(),
                    object_gold: [Emotion::Sadness, Emotion::Anger].into_iter().collect(),
                },
                SyntheticEvent {
                    id: "s:1".into(),
                    texts: vec!["He cheered.".into(), "Tom cheered.".into()],
                    actor_gold: EmotionSet::empty(),
                    object_gold: EmotionSet::empty(),
                },
            ],
            EmotionDictionary::default(),
        )
        .unwrap()
    }

    #[test]
    fn gold_words_dominate() {
        let o = oracle();
        assert_eq!(o.react_word_prob("Tom won.", Role::Actor, "happy").unwrap(), 0.9);
        assert_eq!(o.react_word_prob("Tom won.", Role::Actor, "sad").unwrap(), 1e-4);
        assert_eq!(o.react_word_prob("Tom won.", Role::Object, "sad").unwrap(), 0.45);
        assert_eq!(o.react_word_prob("Tom cheered.", Role::Actor, "happy").unwrap(), 1e-4);
    }

    #[test]
    fn phrases_carry_id_and_side() {
        let o = oracle();
        let p = o.generate("Tom won.", Dimension::XEffect).unwrap();
        assert_eq!(p, "is changed by [[x|s:0]]");
        // the phrase keeps the actor side even on the object dimension
        assert_eq!(o.word_prob(&p, Dimension::OReact, "happy").unwrap(), 0.9);
        let q = o.generate("Tom won.", Dimension::OEffect).unwrap();
        assert_eq!(o.word_prob(&q, Dimension::XReact, "angry").unwrap(), 0.45);
    }

    #[test]
    fn unknown_events_miss() {
        let o = oracle();
        assert!(matches!(
            o.generate("Anna left.", Dimension::XIntent),
            Err(BackendError::Miss { .. })
        ));
        assert!(o
            .word_prob("moved by [[x|nope:0]]", Dimension::XReact, "happy")
            .is_err());
    }

    #[test]
    fn collisions_are_rejected() {
        let mut evs = oracle().events().to_vec();
        evs[1].texts.push("Tom won.".into());
        assert!(SyntheticOracle::new(evs, EmotionDictionary::default()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let o = oracle();
        let again = SyntheticOracle::read(o.to_bytes().as_slice(), Path::new("o")).unwrap();
        assert_eq!(again.events(), o.events());
    }
}
