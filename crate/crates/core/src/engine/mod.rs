//! Scoring, calibration and classification.
//!
//! For every (line, character) pair with a role, the engine builds an
//! inference set, scores each emotion by the geometric mean of its
//! dictionary word's reaction probability over that set, and predicts the
//! emotions whose score strictly exceeds the (emotion, role) threshold.

mod calibrate;
mod dictionary;
mod inference;
mod scores;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CommonsenseBackend};
use crate::corpus::{Corpus, PairKey};
use crate::emotion::{Emotion, EmotionSet};
use crate::records::{self, ArtifactHeader, RecordError, RecordWriter};
use crate::rolelab::{Role, RoleAssignment};

pub use calibrate::{
    calibrate_few_shot, calibrate_zero_shot, default_grid, f1_at, few_shot_threshold, nearest_rank, normalize_grid,
    zero_shot_threshold, CalibrationInfo, CalibrationMode, FrequencyTable, QuantileMode, ThresholdSet,
};
pub use dictionary::EmotionDictionary;
pub use inference::{
    build_inference_set, geometric_mean, score_all, score_emotion, InferenceElement, InferenceSet, Provenance,
    ScoringOptions,
};
pub use scores::{PairFailure, PairScores, ScoreSettings, ScoreTable, ScoreVector};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{pair}: {source}")]
    Backend {
        pair: PairKey,
        #[source]
        source: BackendError,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("no training scores for {emotion} / {role}")]
    EmptyCalibration { emotion: Emotion, role: Role },
    #[error("role assignment {0} does not match the corpus")]
    UnknownPair(PairKey),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// Predicted emotions for every pair whose score strictly exceeds its
/// threshold.
pub fn classify(scores: &ScoreVector, thresholds: &ThresholdSet, role: Role) -> EmotionSet {
    Emotion::ALL
        .into_iter()
        .filter(|e| scores.get(*e) > thresholds.get(*e, role))
        .collect()
}

/// Scores every role assignment against `backend`.
///
/// Pairs are scored in parallel on `workers` threads (0 picks the rayon
/// default) and returned in key order. Backend failures are kept per pair
/// instead of aborting the run.
pub fn score_corpus<B: CommonsenseBackend + ?Sized>(
    corpus: &Corpus,
    assignments: &[RoleAssignment],
    backend: &B,
    dictionary: &EmotionDictionary,
    options: &ScoringOptions,
    workers: usize,
) -> Result<ScoreTable, EngineError> {
    let roles: BTreeMap<PairKey, Role> = assignments.iter().map(|a| (a.key(), a.role)).collect();
    let mut jobs = Vec::with_capacity(roles.len());
    for (key, role) in &roles {
        let story = corpus
            .story(&key.story_id)
            .filter(|s| key.line < s.lines.len())
            .ok_or_else(|| EngineError::UnknownPair(key.clone()))?;
        let prev = key
            .line
            .checked_sub(1)
            .and_then(|t| roles.get(&PairKey::new(key.story_id.clone(), t, key.character.clone())))
            .copied();
        jobs.push((story, key, *role, prev));
    }

    let run = || -> Vec<Result<PairScores, PairFailure>> {
        jobs.par_iter()
            .map(|(story, key, role, prev)| {
                let fail = |e: &EngineError, transport: bool| PairFailure {
                    story_id: key.story_id.clone(),
                    line_index: key.line,
                    character: key.character.clone(),
                    role: *role,
                    error: e.to_string(),
                    transport,
                };
                let set = build_inference_set(story, key.line, &key.character, *role, *prev, backend, options)
                    .map_err(|e| {
                        let transport = matches!(&e, EngineError::Backend { source, .. } if source.is_transport());
                        fail(&e, transport)
                    })?;
                let scores = score_all(&set, *role, dictionary, backend, options).map_err(|source| {
                    let transport = source.is_transport();
                    fail(
                        &EngineError::Backend {
                            pair: (*key).clone(),
                            source,
                        },
                        transport,
                    )
                })?;
                Ok(PairScores {
                    story_id: key.story_id.clone(),
                    line_index: key.line,
                    character: key.character.clone(),
                    role: *role,
                    scores: ScoreVector(scores),
                    inference_set: set,
                })
            })
            .collect()
    };
    let results = if workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| EngineError::Config(format!("worker pool: {e}")))?
            .install(run)
    };

    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(p) => pairs.push(p),
            Err(f) => failures.push(f),
        }
    }
    Ok(ScoreTable {
        settings: ScoreSettings {
            backend: backend.identity(),
            dictionary: dictionary.clone(),
            scoring: *options,
        },
        pairs,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub story_id: String,
    pub line_index: usize,
    pub character: String,
    pub role: Role,
    pub predicted: EmotionSet,
}

impl Prediction {
    pub fn key(&self) -> PairKey {
        PairKey::new(self.story_id.clone(), self.line_index, self.character.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSettings {
    pub backend: String,
    pub calibration: CalibrationInfo,
    pub thresholds_hash: String,
}

/// Classified pairs plus the failures carried over from scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub settings: PredictionSettings,
    pub rows: Vec<Prediction>,
    pub failures: Vec<PairFailure>,
}

impl Predictions {
    pub fn header(&self) -> ArtifactHeader {
        ArtifactHeader::new(
            "predictions",
            serde_json::to_value(&self.settings).expect("settings serialize"),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = RecordWriter::new(Vec::new());
        w.header(&self.header()).expect("write to memory");
        for p in &self.rows {
            w.record("prediction", p).expect("write to memory");
        }
        for f in &self.failures {
            w.record("failure", f).expect("write to memory");
        }
        w.finish().expect("write to memory")
    }

    pub fn write(&self, path: &Path) -> Result<(), EngineError> {
        Ok(records::write_file(path, &self.to_bytes())?)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Predictions, EngineError> {
        let (header, body) = records::split_header(records::read_records(bytes, path)?, path)?;
        let header = header.ok_or_else(|| RecordError::malformed(path, 1, "missing header"))?;
        if header.artifact != "predictions" {
            return Err(RecordError::malformed(
                path,
                1,
                format!("expected a predictions artifact, found `{}`", header.artifact),
            )
            .into());
        }
        let settings = serde_json::from_value(header.settings)
            .map_err(|e| RecordError::malformed(path, 1, format!("header settings: {e}")))?;
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for raw in body {
            match raw.kind.as_str() {
                "prediction" => rows.push(raw.decode(path)?),
                "failure" => failures.push(raw.decode(path)?),
                other => {
                    return Err(
                        RecordError::malformed(path, raw.line, format!("unexpected record kind `{other}`")).into(),
                    )
                }
            }
        }
        Ok(Predictions {
            settings,
            rows,
            failures,
        })
    }

    pub fn read(path: &Path) -> Result<Predictions, EngineError> {
        let bytes = std::fs::read(path).map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }

    pub fn map(&self) -> BTreeMap<PairKey, EmotionSet> {
        self.rows.iter().map(|p| (p.key(), p.predicted)).collect()
    }
}

/// Applies `thresholds` to every scored pair.
pub fn classify_table(table: &ScoreTable, thresholds: &ThresholdSet) -> Predictions {
    Predictions {
        settings: PredictionSettings {
            backend: table.settings.backend.clone(),
            calibration: thresholds.info.clone(),
            thresholds_hash: records::settings_hash(&serde_json::json!({
                "info": thresholds.info,
                "k": thresholds.k,
            })),
        },
        rows: table
            .pairs
            .iter()
            .map(|p| Prediction {
                story_id: p.story_id.clone(),
                line_index: p.line_index,
                character: p.character.clone(),
                role: p.role,
                predicted: classify(&p.scores, thresholds, p.role),
            })
            .collect(),
        failures: table.failures.clone(),
    }
}

/// Scores and classifies every role assignment in one go.
pub fn run_pipeline<B: CommonsenseBackend + ?Sized>(
    corpus: &Corpus,
    assignments: &[RoleAssignment],
    backend: &B,
    thresholds: &ThresholdSet,
    dictionary: &EmotionDictionary,
    options: &ScoringOptions,
) -> Result<Predictions, EngineError> {
    let table = score_corpus(corpus, assignments, backend, dictionary, options, 0)?;
    Ok(classify_table(&table, thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vector(values: [f64; 8]) -> ScoreVector {
        ScoreVector(values)
    }

    #[test]
    fn classify_is_strict() {
        let mut t = ThresholdSet::uniform(0.3);
        let s = vector([0.1, 0.1, 0.1, 0.6, 0.1, 0.1, 0.3, 0.5]);
        let got = classify(&s, &t, Role::Actor);
        assert_eq!(got, [Emotion::Joy, Emotion::Anticipation].into_iter().collect());
        t.set(Emotion::Joy, Role::Actor, 0.6);
        assert_eq!(
            classify(&s, &t, Role::Actor),
            [Emotion::Anticipation].into_iter().collect()
        );
    }

    #[test]
    fn boundary_thresholds() {
        let s = vector([1.0, 0.5, 0.1, 1e-9, 0.2, 0.3, 0.4, 0.9]);
        assert!(classify(&s, &ThresholdSet::uniform(1.0), Role::Object).is_empty());
        assert_eq!(
            classify(&s, &ThresholdSet::uniform(0.0), Role::Object),
            EmotionSet::full()
        );
    }
}
