//! Story corpus: stories, their event lines, and gold emotion annotations.
//!
//! The canonical on-disk form is a line-record file (see [`crate::records`])
//! with record kinds `story`, `line` and `annotation`, preceded by a header
//! naming the vote aggregation rule that produced the gold sets.

mod import;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emotion::{Emotion, EmotionSet};
use crate::records::{self, ArtifactHeader, RecordError, RecordWriter};

pub use import::{
    import_corpus, write_release_csv, ColumnMapping, ImportConfig, ImportError, ImportOutcome, RejectedRecord,
};
pub use validate::{validate_corpus, validate_corpus_file, ValidationReport, Violation};

/// How per-annotator votes become a gold emotion set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// At least `ceil(K / 2)` of the `K` annotators.
    #[default]
    Majority,
    /// At least one annotator.
    Any,
    /// Every annotator.
    All,
}

impl Aggregation {
    /// Minimum number of votes an emotion needs to enter the gold set.
    pub fn required_votes(self, annotators: u32) -> u32 {
        match self {
            Aggregation::Majority => annotators.div_ceil(2).max(1),
            Aggregation::Any => 1,
            Aggregation::All => annotators.max(1),
        }
    }

    pub fn aggregate(self, votes: &BTreeMap<Emotion, u32>, annotators: u32) -> EmotionSet {
        if annotators == 0 {
            return EmotionSet::empty();
        }
        let needed = self.required_votes(annotators);
        votes.iter().filter(|(_, &n)| n >= needed).map(|(&e, _)| e).collect()
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Majority => "majority",
            Aggregation::Any => "any",
            Aggregation::All => "all",
        })
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "majority" => Ok(Aggregation::Majority),
            "any" => Ok(Aggregation::Any),
            "all" => Ok(Aggregation::All),
            other => Err(format!(
                "unknown aggregation rule `{other}` (expected majority, any or all)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLine {
    pub index: usize,
    pub text: String,
    /// Text after pronoun substitution; `None` until coreference has run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_text: Option<String>,
}

impl EventLine {
    pub fn new(index: usize, text: impl Into<String>) -> Self {
        EventLine {
            index,
            text: text.into(),
            resolved_text: None,
        }
    }

    /// The resolved text when available, the raw text otherwise.
    pub fn effective_text(&self) -> &str {
        self.resolved_text.as_deref().unwrap_or(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Story {
    pub story_id: String,
    /// Split label carried over from the source release, e.g. `dev`.
    pub split: Option<String>,
    pub characters: Vec<String>,
    pub lines: Vec<EventLine>,
}

impl Story {
    pub fn new<S: Into<String>>(story_id: impl Into<String>, characters: Vec<String>, lines: Vec<S>) -> Self {
        Story {
            story_id: story_id.into(),
            split: None,
            characters,
            lines: lines
                .into_iter()
                .enumerate()
                .map(|(i, t)| EventLine::new(i, t))
                .collect(),
        }
    }

    pub fn has_character(&self, name: &str) -> bool {
        self.characters.iter().any(|c| c == name)
    }

    /// The first `n` lines of the story, used to check that nothing looks ahead.
    pub fn prefix(&self, n: usize) -> Story {
        Story {
            lines: self.lines.iter().take(n).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Identifies one event-character pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub story_id: String,
    pub line: usize,
    pub character: String,
}

impl PairKey {
    pub fn new(story_id: impl Into<String>, line: usize, character: impl Into<String>) -> Self {
        PairKey {
            story_id: story_id.into(),
            line,
            character: character.into(),
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}/{}", self.story_id, self.line, self.character)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub story_id: String,
    pub line_index: usize,
    pub character: String,
    /// Number of annotators that judged this pair.
    pub annotators: u32,
    /// Per-emotion vote counts; emotions without votes are omitted.
    pub votes: BTreeMap<Emotion, u32>,
    pub gold: EmotionSet,
}

impl GoldAnnotation {
    pub fn key(&self) -> PairKey {
        PairKey::new(self.story_id.clone(), self.line_index, self.character.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub aggregation: Aggregation,
    pub stories: Vec<Story>,
    pub annotations: Vec<GoldAnnotation>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{path}:{line}: {message}")]
    Structure { path: String, line: usize, message: String },
    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct StoryRecord {
    story_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    characters: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LineRecord {
    story_id: String,
    #[serde(flatten)]
    line: EventLine,
}

impl Corpus {
    pub fn story(&self, story_id: &str) -> Option<&Story> {
        self.stories.iter().find(|s| s.story_id == story_id)
    }

    pub fn line_count(&self) -> usize {
        self.stories.iter().map(|s| s.lines.len()).sum()
    }

    /// Gold emotion sets keyed by event-character pair.
    pub fn gold_map(&self) -> BTreeMap<PairKey, EmotionSet> {
        self.annotations.iter().map(|a| (a.key(), a.gold)).collect()
    }

    /// Story ids whose split label equals `split`.
    pub fn split_ids(&self, split: &str) -> BTreeSet<String> {
        self.stories
            .iter()
            .filter(|s| s.split.as_deref() == Some(split))
            .map(|s| s.story_id.clone())
            .collect()
    }

    pub fn header(&self) -> ArtifactHeader {
        ArtifactHeader::new(
            "corpus",
            serde_json::json!({ "aggregation": self.aggregation.to_string() }),
        )
    }

    pub fn write_to<W: Write>(&self, out: W) -> std::io::Result<W> {
        let mut w = RecordWriter::new(out);
        w.header(&self.header())?;
        for story in &self.stories {
            w.record(
                "story",
                &StoryRecord {
                    story_id: story.story_id.clone(),
                    split: story.split.clone(),
                    characters: story.characters.clone(),
                },
            )?;
            for line in &story.lines {
                w.record(
                    "line",
                    &LineRecord {
                        story_id: story.story_id.clone(),
                        line: line.clone(),
                    },
                )?;
            }
        }
        for ann in &self.annotations {
            w.record("annotation", ann)?;
        }
        w.finish()
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        records::write_file(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.write_to(Vec::new()).expect("writing to memory cannot fail")
    }

    pub fn read(path: &Path) -> Result<Corpus, CorpusError> {
        let records = records::read_record_file(path)?;
        Self::from_records(records, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Corpus, CorpusError> {
        let records = records::read_records(bytes, path)?;
        Self::from_records(records, path)
    }

    fn from_records(records: Vec<records::RawRecord>, path: &Path) -> Result<Corpus, CorpusError> {
        let (header, records) = records::split_header(records, path)?;
        let aggregation = match header {
            Some(h) => h
                .settings
                .get("aggregation")
                .and_then(|v| v.as_str())
                .map(|s| s.parse::<Aggregation>())
                .transpose()
                .map_err(|message| CorpusError::Structure {
                    path: path.display().to_string(),
                    line: 1,
                    message,
                })?
                .unwrap_or_default(),
            None => Aggregation::default(),
        };
        let structure = |line: usize, message: String| CorpusError::Structure {
            path: path.display().to_string(),
            line,
            message,
        };
        let mut corpus = Corpus {
            aggregation,
            ..Corpus::default()
        };
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for rec in records {
            match rec.kind.as_str() {
                "story" => {
                    let s: StoryRecord = rec.decode(path)?;
                    if index.contains_key(&s.story_id) {
                        return Err(structure(rec.line, format!("duplicate story `{}`", s.story_id)));
                    }
                    index.insert(s.story_id.clone(), corpus.stories.len());
                    corpus.stories.push(Story {
                        story_id: s.story_id,
                        split: s.split,
                        characters: s.characters,
                        lines: Vec::new(),
                    });
                }
                "line" => {
                    let l: LineRecord = rec.decode(path)?;
                    let &i = index
                        .get(&l.story_id)
                        .ok_or_else(|| structure(rec.line, format!("line for unknown story `{}`", l.story_id)))?;
                    corpus.stories[i].lines.push(l.line);
                }
                "annotation" => corpus.annotations.push(rec.decode(path)?),
                other => return Err(structure(rec.line, format!("unknown record kind `{other}`"))),
            }
        }
        Ok(corpus)
    }
}
