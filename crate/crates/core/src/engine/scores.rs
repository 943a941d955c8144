//! Score tables: per-pair emotion scores plus the failures met while
//! producing them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmotionDictionary, EngineError, InferenceSet, ScoringOptions};
use crate::corpus::PairKey;
use crate::emotion::{Emotion, EMOTION_COUNT};
use crate::records::{self, ArtifactHeader, RecordError, RecordWriter};
use crate::rolelab::Role;

/// Eight scores in canonical emotion order, stored as a name-keyed map.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScoreVector(pub [f64; EMOTION_COUNT]);

impl ScoreVector {
    pub fn get(&self, emotion: Emotion) -> f64 {
        self.0[emotion.index()]
    }
}

impl Serialize for ScoreVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<Emotion, f64> = Emotion::ALL.iter().map(|e| (*e, self.get(*e))).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScoreVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<Emotion, f64>::deserialize(d)?;
        let mut out = [0.0; EMOTION_COUNT];
        for e in Emotion::ALL {
            let v = *map
                .get(&e)
                .ok_or_else(|| serde::de::Error::custom(format!("missing score for {e}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(serde::de::Error::custom(format!("score {v} for {e} is outside [0, 1]")));
            }
            out[e.index()] = v;
        }
        Ok(ScoreVector(out))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub story_id: String,
    pub line_index: usize,
    pub character: String,
    pub role: Role,
    pub scores: ScoreVector,
    pub inference_set: InferenceSet,
}

impl PairScores {
    pub fn key(&self) -> PairKey {
        PairKey::new(self.story_id.clone(), self.line_index, self.character.clone())
    }
}

/// A pair that could not be scored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFailure {
    pub story_id: String,
    pub line_index: usize,
    pub character: String,
    pub role: Role,
    pub error: String,
    /// Set when the backend could not be reached at all.
    pub transport: bool,
}

impl PairFailure {
    pub fn key(&self) -> PairKey {
        PairKey::new(self.story_id.clone(), self.line_index, self.character.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSettings {
    pub backend: String,
    pub dictionary: EmotionDictionary,
    pub scoring: ScoringOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub settings: ScoreSettings,
    /// Sorted by pair key.
    pub pairs: Vec<PairScores>,
    pub failures: Vec<PairFailure>,
}

impl ScoreTable {
    pub fn header(&self) -> ArtifactHeader {
        ArtifactHeader::new(
            "scores",
            serde_json::to_value(&self.settings).expect("settings serialize"),
        )
    }

    /// Keeps only pairs from the given stories.
    pub fn restrict<F: Fn(&str) -> bool>(&self, keep: F) -> ScoreTable {
        ScoreTable {
            settings: self.settings.clone(),
            pairs: self.pairs.iter().filter(|p| keep(&p.story_id)).cloned().collect(),
            failures: self.failures.iter().filter(|f| keep(&f.story_id)).cloned().collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = RecordWriter::new(Vec::new());
        w.header(&self.header()).expect("write to memory");
        for p in &self.pairs {
            w.record("score", p).expect("write to memory");
        }
        for f in &self.failures {
            w.record("failure", f).expect("write to memory");
        }
        w.finish().expect("write to memory")
    }

    pub fn write(&self, path: &Path) -> Result<(), EngineError> {
        Ok(records::write_file(path, &self.to_bytes())?)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ScoreTable, EngineError> {
        let (header, body) = records::split_header(records::read_records(bytes, path)?, path)?;
        let header = header.ok_or_else(|| RecordError::malformed(path, 1, "missing header"))?;
        if header.artifact != "scores" {
            return Err(RecordError::malformed(
                path,
                1,
                format!("expected a scores artifact, found `{}`", header.artifact),
            )
            .into());
        }
        let settings: ScoreSettings = serde_json::from_value(header.settings)
            .map_err(|e| RecordError::malformed(path, 1, format!("header settings: {e}")))?;
        let mut pairs = Vec::new();
        let mut failures = Vec::new();
        for raw in body {
            match raw.kind.as_str() {
                "score" => pairs.push(raw.decode::<PairScores>(path)?),
                "failure" => failures.push(raw.decode::<PairFailure>(path)?),
                other => {
                    return Err(
                        RecordError::malformed(path, raw.line, format!("unexpected record kind `{other}`")).into(),
                    )
                }
            }
        }
        Ok(ScoreTable {
            settings,
            pairs,
            failures,
        })
    }

    pub fn read(path: &Path) -> Result<ScoreTable, EngineError> {
        let bytes = std::fs::read(path).map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }
}
