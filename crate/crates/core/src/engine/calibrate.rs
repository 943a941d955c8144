//! Per-(emotion, role) decision thresholds.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EngineError, ScoreTable};
use crate::corpus::PairKey;
use crate::emotion::{Emotion, EmotionSet, EMOTION_COUNT};
use crate::records::{self, ArtifactHeader, RecordError, RecordWriter};
use crate::rolelab::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    ZeroShot,
    FewShot,
    /// Thresholds supplied by hand.
    Fixed,
}

impl fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CalibrationMode::ZeroShot => "zero-shot",
            CalibrationMode::FewShot => "few-shot",
            CalibrationMode::Fixed => "fixed",
        })
    }
}

impl FromStr for CalibrationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero-shot" => Ok(CalibrationMode::ZeroShot),
            "few-shot" => Ok(CalibrationMode::FewShot),
            "fixed" => Ok(CalibrationMode::Fixed),
            other => Err(format!("unknown calibration mode `{other}`")),
        }
    }
}

/// How an annotation frequency becomes a percentile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileMode {
    /// The q-th percentile itself.
    Literal,
    /// The (100 - q)-th percentile, so about q percent of scores lie above.
    #[default]
    Complement,
}

impl fmt::Display for QuantileMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantileMode::Literal => "literal",
            QuantileMode::Complement => "complement",
        })
    }
}

impl FromStr for QuantileMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(QuantileMode::Literal),
            "complement" => Ok(QuantileMode::Complement),
            other => Err(format!("unknown quantile convention `{other}`")),
        }
    }
}

/// Percentage of pairs annotated with each emotion, split by role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    /// `[emotion][role]`, in percent.
    pub percent: [[f64; 2]; EMOTION_COUNT],
}

impl FrequencyTable {
    /// Annotation frequencies of the StoryCommonsense training data.
    pub fn story_commonsense() -> Self {
        let mut percent = [[0.0; 2]; EMOTION_COUNT];
        for (e, actors, objects) in [
            (Emotion::Surprise, 38.8, 32.6),
            (Emotion::Disgust, 18.3, 13.6),
            (Emotion::Sadness, 25.2, 19.9),
            (Emotion::Joy, 53.0, 33.4),
            (Emotion::Anger, 19.3, 15.1),
            (Emotion::Fear, 26.3, 20.1),
            (Emotion::Trust, 34.1, 24.0),
            (Emotion::Anticipation, 56.4, 33.7),
        ] {
            percent[e.index()] = [actors, objects];
        }
        FrequencyTable { percent }
    }

    /// Frequencies measured on labelled pairs.
    pub fn from_gold<'a, I: IntoIterator<Item = (Role, &'a EmotionSet)>>(pairs: I) -> Self {
        let mut hits = [[0usize; 2]; EMOTION_COUNT];
        let mut totals = [0usize; 2];
        for (role, gold) in pairs {
            totals[role.index()] += 1;
            for e in gold.iter() {
                hits[e.index()][role.index()] += 1;
            }
        }
        let mut percent = [[0.0; 2]; EMOTION_COUNT];
        for e in 0..EMOTION_COUNT {
            for r in 0..2 {
                if totals[r] > 0 {
                    percent[e][r] = 100.0 * hits[e][r] as f64 / totals[r] as f64;
                }
            }
        }
        FrequencyTable { percent }
    }

    pub fn get(&self, emotion: Emotion, role: Role) -> f64 {
        self.percent[emotion.index()][role.index()]
    }
}

/// Nearest-rank percentile of an ascending slice: the element at rank
/// `ceil(p / 100 * n)`, with rank clamped to `1..=n`.
pub fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    assert!(!sorted.is_empty(), "nearest rank of an empty sample");
    let n = sorted.len();
    // the small slack keeps e.g. 47.0 / 100 * 100 from rounding up to 48
    let rank = (percentile / 100.0 * n as f64 - 1e-9).ceil();
    let rank = (rank.max(1.0) as usize).min(n);
    sorted[rank - 1]
}

/// Threshold for one score distribution given an annotation rate `q`
/// (percent, strictly between 0 and 100).
pub fn zero_shot_threshold(scores: &[f64], q: f64, mode: QuantileMode) -> Result<f64, EngineError> {
    if !(q > 0.0 && q < 100.0) {
        return Err(EngineError::Config(format!("quantile {q} is outside (0, 100)")));
    }
    if scores.is_empty() {
        return Err(EngineError::Config("no scores to calibrate on".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let percentile = match mode {
        QuantileMode::Literal => q,
        QuantileMode::Complement => 100.0 - q,
    };
    Ok(nearest_rank(&sorted, percentile))
}

/// Sorted, de-duplicated grid; every point must lie in [0, 1].
pub fn normalize_grid(grid: &[f64]) -> Result<Vec<f64>, EngineError> {
    if grid.is_empty() {
        return Err(EngineError::Config("threshold grid is empty".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(EngineError::Config(format!("grid point {g} is outside [0, 1]")));
    }
    let mut out = grid.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// Five log-spaced points per decade from 1e-5 to 1e-1, then 0.2, 0.5, 0.9.
pub fn default_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=20).map(|i| 10f64.powf(-5.0 + i as f64 / 5.0)).collect();
    grid.extend([0.2, 0.5, 0.9]);
    grid
}

/// F1 of predicting `score > k`. With no positives and no predictions the
/// threshold is perfect and scores 1.
pub fn f1_at(samples: &[(f64, bool)], k: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for &(s, positive) in samples {
        match (s > k, positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let den = 2 * tp + fp + fn_;
    if den == 0 {
        1.0
    } else {
        2.0 * tp as f64 / den as f64
    }
}

/// Lowest grid point reaching the best F1 on `samples`.
pub fn few_shot_threshold(samples: &[(f64, bool)], grid: &[f64]) -> Result<f64, EngineError> {
    let grid = normalize_grid(grid)?;
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &g in &grid {
        let f = f1_at(samples, g);
        if f > best.0 {
            best = (f, g);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInfo {
    pub mode: CalibrationMode,
    /// Identifies the training data the thresholds were fitted on.
    pub training: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantile: Option<QuantileMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<FrequencyTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
}

impl CalibrationInfo {
    pub fn fixed() -> Self {
        CalibrationInfo {
            mode: CalibrationMode::Fixed,
            training: String::new(),
            quantile: None,
            frequencies: None,
            grid: None,
            backend: None,
        }
    }
}

/// Complete set of thresholds over emotions and roles.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    pub info: CalibrationInfo,
    /// `[emotion][role]`.
    pub k: [[f64; 2]; EMOTION_COUNT],
}

#[derive(Serialize, Deserialize)]
struct ThresholdRow {
    emotion: Emotion,
    role: Role,
    k: f64,
}

impl ThresholdSet {
    pub fn uniform(k: f64) -> Self {
        ThresholdSet {
            info: CalibrationInfo::fixed(),
            k: [[k; 2]; EMOTION_COUNT],
        }
    }

    pub fn get(&self, emotion: Emotion, role: Role) -> f64 {
        self.k[emotion.index()][role.index()]
    }

    pub fn set(&mut self, emotion: Emotion, role: Role, k: f64) {
        self.k[emotion.index()][role.index()] = k;
    }

    pub fn header(&self) -> ArtifactHeader {
        ArtifactHeader::new("thresholds", serde_json::to_value(&self.info).expect("info serializes"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = RecordWriter::new(Vec::new());
        w.header(&self.header()).expect("write to memory");
        for e in Emotion::ALL {
            for role in Role::BOTH {
                let row = ThresholdRow {
                    emotion: e,
                    role,
                    k: self.get(e, role),
                };
                w.record("threshold", &row).expect("write to memory");
            }
        }
        w.finish().expect("write to memory")
    }

    pub fn write(&self, path: &Path) -> Result<(), EngineError> {
        Ok(records::write_file(path, &self.to_bytes())?)
    }

    /// Reads a thresholds file; every (emotion, role) must be present once.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ThresholdSet, EngineError> {
        let (header, body) = records::split_header(records::read_records(bytes, path)?, path)?;
        let info = match header {
            Some(h) if h.artifact == "thresholds" => serde_json::from_value(h.settings)
                .map_err(|e| RecordError::malformed(path, 1, format!("header settings: {e}")))?,
            Some(h) => {
                return Err(RecordError::malformed(
                    path,
                    1,
                    format!("expected a thresholds artifact, found `{}`", h.artifact),
                )
                .into())
            }
            None => CalibrationInfo::fixed(),
        };
        let mut seen: BTreeMap<(Emotion, Role), f64> = BTreeMap::new();
        for raw in body {
            if raw.kind != "threshold" {
                return Err(
                    RecordError::malformed(path, raw.line, format!("unexpected record kind `{}`", raw.kind)).into(),
                );
            }
            let row: ThresholdRow = raw.decode(path)?;
            if !(0.0..=1.0).contains(&row.k) {
                return Err(
                    RecordError::malformed(path, raw.line, format!("threshold {} is outside [0, 1]", row.k)).into(),
                );
            }
            if seen.insert((row.emotion, row.role), row.k).is_some() {
                return Err(RecordError::malformed(
                    path,
                    raw.line,
                    format!("duplicate threshold for {} / {}", row.emotion, row.role),
                )
                .into());
            }
        }
        let mut set = ThresholdSet {
            info,
            k: [[0.0; 2]; EMOTION_COUNT],
        };
        for e in Emotion::ALL {
            for role in Role::BOTH {
                let k = seen
                    .get(&(e, role))
                    .ok_or_else(|| RecordError::malformed(path, 0, format!("no threshold for {e} / {role}")))?;
                set.set(e, role, *k);
            }
        }
        Ok(set)
    }

    pub fn read(path: &Path) -> Result<ThresholdSet, EngineError> {
        let bytes = std::fs::read(path).map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }
}

fn scores_by_role(table: &ScoreTable, role: Role, emotion: Emotion) -> Vec<f64> {
    table
        .pairs
        .iter()
        .filter(|p| p.role == role)
        .map(|p| p.scores.get(emotion))
        .collect()
}

/// Quantile thresholds matched to annotation frequencies.
pub fn calibrate_zero_shot(
    training: &ScoreTable,
    frequencies: &FrequencyTable,
    mode: QuantileMode,
    training_id: &str,
) -> Result<ThresholdSet, EngineError> {
    let mut set = ThresholdSet {
        info: CalibrationInfo {
            mode: CalibrationMode::ZeroShot,
            training: training_id.to_string(),
            quantile: Some(mode),
            frequencies: Some(*frequencies),
            grid: None,
            backend: Some(training.settings.backend.clone()),
        },
        k: [[0.0; 2]; EMOTION_COUNT],
    };
    for e in Emotion::ALL {
        for role in Role::BOTH {
            let scores = scores_by_role(training, role, e);
            if scores.is_empty() {
                return Err(EngineError::EmptyCalibration { emotion: e, role });
            }
            set.set(e, role, zero_shot_threshold(&scores, frequencies.get(e, role), mode)?);
        }
    }
    Ok(set)
}

/// Grid-swept thresholds maximizing per-(emotion, role) F1. Pairs without
/// a gold label are skipped.
pub fn calibrate_few_shot(
    training: &ScoreTable,
    gold: &BTreeMap<PairKey, EmotionSet>,
    grid: &[f64],
    training_id: &str,
) -> Result<ThresholdSet, EngineError> {
    let grid = normalize_grid(grid)?;
    let mut set = ThresholdSet {
        info: CalibrationInfo {
            mode: CalibrationMode::FewShot,
            training: training_id.to_string(),
            quantile: None,
            frequencies: None,
            grid: Some(grid.clone()),
            backend: Some(training.settings.backend.clone()),
        },
        k: [[0.0; 2]; EMOTION_COUNT],
    };
    let labelled: Vec<(&super::PairScores, EmotionSet)> = training
        .pairs
        .iter()
        .filter_map(|p| gold.get(&p.key()).map(|g| (p, *g)))
        .collect();
    for e in Emotion::ALL {
        for role in Role::BOTH {
            let samples: Vec<(f64, bool)> = labelled
                .iter()
                .filter(|(p, _)| p.role == role)
                .map(|(p, g)| (p.scores.get(e), g.contains(e)))
                .collect();
            if samples.is_empty() {
                return Err(EngineError::EmptyCalibration { emotion: e, role });
            }
            set.set(e, role, few_shot_threshold(&samples, &grid)?);
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_median_of_four() {
        let k = zero_shot_threshold(&[0.3, 0.1, 0.4, 0.2], 50.0, QuantileMode::Complement).unwrap();
        assert_eq!(k, 0.2);
        let k = zero_shot_threshold(&[0.3, 0.1, 0.4, 0.2], 25.0, QuantileMode::Literal).unwrap();
        assert_eq!(k, 0.1);
    }

    #[test]
    fn identical_scores() {
        let k = zero_shot_threshold(&[0.2; 5], 53.0, QuantileMode::Complement).unwrap();
        assert_eq!(k, 0.2);
    }

    #[test]
    fn q_bounds() {
        for q in [0.0, 100.0, -3.0, 120.0, f64::NAN] {
            assert!(zero_shot_threshold(&[0.1], q, QuantileMode::Complement).is_err(), "{q}");
        }
    }

    #[test]
    fn rank_slack() {
        // 47% of 100 is rank 47 exactly, despite 100 - 53.0 rounding
        let sorted: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(nearest_rank(&sorted, 100.0 - 53.0), 47.0);
    }

    #[test]
    fn frequency_rows() {
        let f = FrequencyTable::story_commonsense();
        assert_eq!(f.get(Emotion::Joy, Role::Actor), 53.0);
        assert_eq!(f.get(Emotion::Joy, Role::Object), 33.4);
        assert_eq!(f.get(Emotion::Anticipation, Role::Object), 33.7);
        assert_eq!(f.get(Emotion::Disgust, Role::Object), 13.6);
    }

    #[test]
    fn few_shot_examples() {
        let samples = [(0.9, true), (0.8, true), (0.1, false)];
        assert_eq!(few_shot_threshold(&samples, &[0.05, 0.5, 0.95]).unwrap(), 0.5);
        let all_pos = [(0.9, true), (0.3, true)];
        assert_eq!(few_shot_threshold(&all_pos, &[0.5, 0.01, 0.2]).unwrap(), 0.01);
        let tie = [(0.6, true), (0.05, false)];
        assert_eq!(few_shot_threshold(&tie, &[0.1, 0.3]).unwrap(), 0.1);
        assert!(few_shot_threshold(&tie, &[]).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 24);
        assert!((g[0] - 1e-5).abs() < 1e-20);
        assert!((g[20] - 0.1).abs() < 1e-15);
        assert!((g[5] - 1e-4).abs() < 1e-18);
        assert_eq!(&g[21..], &[0.2, 0.5, 0.9]);
    }

    #[test]
    fn thresholds_round_trip() {
        let mut t = ThresholdSet::uniform(0.25);
        t.set(Emotion::Fear, Role::Object, 1.0 / 3.0);
        let again = ThresholdSet::from_bytes(&t.to_bytes(), Path::new("t")).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn incomplete_thresholds_are_rejected() {
        let t = ThresholdSet::uniform(0.25);
        let text = String::from_utf8(t.to_bytes()).unwrap();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(ThresholdSet::from_bytes(cut.as_bytes(), Path::new("t")).is_err());
    }
}
