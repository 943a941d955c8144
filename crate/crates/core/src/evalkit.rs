//! Multi-label confusion counts and micro-averaged metrics over
//! (line, character) pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::Add;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::PairKey;
use crate::emotion::{Emotion, EmotionSet, UnknownEmotion, EMOTION_COUNT};
use crate::engine::{CalibrationInfo, Predictions};
use crate::records::{self, ArtifactHeader, RecordError, RecordWriter};
use crate::rolelab::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = ConfusionCounts>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

/// Counts for one pair over all eight emotions.
pub fn count_pair(gold: EmotionSet, predicted: EmotionSet) -> ConfusionCounts {
    let tp = gold.intersection(predicted).len() as u64;
    let fp = predicted.difference(gold).len() as u64;
    let fn_ = gold.difference(predicted).len() as u64;
    ConfusionCounts {
        tp,
        fp,
        fn_,
        tn: EMOTION_COUNT as u64 - tp - fp - fn_,
    }
}

/// [`count_pair`] on emotion names; unknown names are an error.
pub fn count_pair_labels<S: AsRef<str>>(gold: &[S], predicted: &[S]) -> Result<ConfusionCounts, UnknownEmotion> {
    Ok(count_pair(
        EmotionSet::from_labels(gold)?,
        EmotionSet::from_labels(predicted)?,
    ))
}

/// Counts restricted to one emotion.
pub fn count_emotion(gold: EmotionSet, predicted: EmotionSet, emotion: Emotion) -> ConfusionCounts {
    let (g, p) = (gold.contains(emotion), predicted.contains(emotion));
    ConfusionCounts {
        tp: (g && p) as u64,
        fp: (!g && p) as u64,
        fn_: (g && !p) as u64,
        tn: (!g && !p) as u64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// A zero denominator was reported as 0.
    pub degenerate: bool,
}

pub fn micro_metrics(c: &ConfusionCounts) -> Metrics {
    let ratio = |num: u64, den: u64| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    Metrics {
        degenerate: precision.is_none() || recall.is_none() || f1.is_none(),
        precision: precision.unwrap_or(0.0),
        recall: recall.unwrap_or(0.0),
        f1: f1.unwrap_or(0.0),
    }
}

/// Published headline numbers, printed next to a run for comparison.
pub const REFERENCE_ROWS: [(&str, f64, f64, f64); 2] = [
    ("reference zero-shot", 31.1, 77.4, 44.3),
    ("reference few-shot", 39.4, 81.5, 53.1),
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Count pairs whose character plays no role as predicted-empty.
    pub include_absent: bool,
    /// Restrict evaluation to these stories.
    pub stories: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub story_id: String,
    pub line_index: usize,
    pub character: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: Metrics,
}

impl Cell {
    fn new(counts: ConfusionCounts) -> Self {
        Cell {
            counts,
            metrics: micro_metrics(&counts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub backend: String,
    pub calibration: CalibrationInfo,
    /// `exclude-absent` or `include-absent`.
    pub convention: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stories: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub settings: ReportSettings,
    pub overall: Cell,
    /// Overall metrics under the other absent-pair convention.
    pub alternate: Cell,
    pub per_emotion: [Cell; EMOTION_COUNT],
    pub per_role: [Cell; 2],
    pub per_emotion_role: [[Cell; 2]; EMOTION_COUNT],
    pub macro_f1: f64,
    pub pairs_with_role: usize,
    pub pairs_absent: usize,
    pub exclusions: Vec<Exclusion>,
}

#[derive(Serialize)]
struct MetricRow<'a> {
    scope: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    emotion: Option<Emotion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    role: Option<Role>,
    #[serde(flatten)]
    cell: &'a Cell,
}

#[derive(Serialize)]
struct ReferenceRow<'a> {
    system: &'a str,
    precision: f64,
    recall: f64,
    f1: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    pairs_with_role: usize,
    pairs_absent: usize,
    excluded: usize,
    macro_f1: f64,
}

/// Scores predictions against gold labels.
///
/// The key space is the gold annotations (optionally restricted to some
/// stories). A gold pair with a prediction is counted; one whose scoring
/// failed, or one predicted without gold, is listed as an exclusion; one
/// with no role is skipped unless `include_absent` is set.
pub fn evaluate(predictions: &Predictions, gold: &BTreeMap<PairKey, EmotionSet>, options: &EvalOptions) -> Report {
    let in_scope = |k: &PairKey| options.stories.as_ref().is_none_or(|s| s.contains(&k.story_id));
    let predicted: BTreeMap<PairKey, (Role, EmotionSet)> = predictions
        .rows
        .iter()
        .map(|p| (p.key(), (p.role, p.predicted)))
        .collect();
    let failed: BTreeMap<PairKey, &str> = predictions
        .failures
        .iter()
        .map(|f| (f.key(), f.error.as_str()))
        .collect();

    let mut exclusions = Vec::new();
    let mut roled: Vec<(Role, EmotionSet, EmotionSet)> = Vec::new();
    let mut absent: Vec<EmotionSet> = Vec::new();
    for (key, g) in gold.iter().filter(|(k, _)| in_scope(k)) {
        if let Some((role, p)) = predicted.get(key) {
            roled.push((*role, *g, *p));
        } else if let Some(err) = failed.get(key) {
            exclusions.push(exclusion(key, format!("backend failure: {err}")));
        } else {
            absent.push(*g);
        }
    }
    for key in predicted.keys().filter(|k| in_scope(k) && !gold.contains_key(*k)) {
        exclusions.push(exclusion(key, "no gold annotation".into()));
    }

    let roled_counts: ConfusionCounts = roled.iter().map(|(_, g, p)| count_pair(*g, *p)).sum();
    let absent_counts: ConfusionCounts = absent.iter().map(|g| count_pair(*g, EmotionSet::empty())).sum();
    let (overall, alternate) = if options.include_absent {
        (roled_counts + absent_counts, roled_counts)
    } else {
        (roled_counts, roled_counts + absent_counts)
    };
    let counted = roled.len() + if options.include_absent { absent.len() } else { 0 };
    assert_eq!(
        overall.total(),
        (EMOTION_COUNT * counted) as u64,
        "confusion counts lost a pair"
    );

    let emotion_counts = |e: Emotion, role: Option<Role>| -> ConfusionCounts {
        let mut c: ConfusionCounts = roled
            .iter()
            .filter(|(r, _, _)| role.is_none_or(|x| x == *r))
            .map(|(_, g, p)| count_emotion(*g, *p, e))
            .sum();
        if options.include_absent && role.is_none() {
            c = c + absent.iter().map(|g| count_emotion(*g, EmotionSet::empty(), e)).sum();
        }
        c
    };
    let per_emotion = Emotion::ALL.map(|e| Cell::new(emotion_counts(e, None)));
    let per_emotion_role = Emotion::ALL.map(|e| Role::BOTH.map(|r| Cell::new(emotion_counts(e, Some(r)))));
    let per_role = Role::BOTH.map(|r| {
        Cell::new(
            roled
                .iter()
                .filter(|(x, _, _)| *x == r)
                .map(|(_, g, p)| count_pair(*g, *p))
                .sum(),
        )
    });
    let macro_f1 = per_emotion.iter().map(|c| c.metrics.f1).sum::<f64>() / EMOTION_COUNT as f64;

    Report {
        settings: ReportSettings {
            backend: predictions.settings.backend.clone(),
            calibration: predictions.settings.calibration.clone(),
            convention: if options.include_absent {
                "include-absent"
            } else {
                "exclude-absent"
            }
            .into(),
            stories: options.stories.as_ref().map(|s| s.len()),
        },
        overall: Cell::new(overall),
        alternate: Cell::new(alternate),
        per_emotion,
        per_role,
        per_emotion_role,
        macro_f1,
        pairs_with_role: roled.len(),
        pairs_absent: absent.len(),
        exclusions,
    }
}

fn exclusion(key: &PairKey, reason: String) -> Exclusion {
    Exclusion {
        story_id: key.story_id.clone(),
        line_index: key.line,
        character: key.character.clone(),
        reason,
    }
}

impl Report {
    pub fn header(&self) -> ArtifactHeader {
        ArtifactHeader::new(
            "report",
            serde_json::to_value(&self.settings).expect("settings serialize"),
        )
    }

    /// One row per (emotion, role), per emotion, per role, and overall,
    /// then exclusions and reference rows.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = RecordWriter::new(Vec::new());
        let metric = |scope, emotion, role, cell| MetricRow {
            scope,
            emotion,
            role,
            cell,
        };
        w.header(&self.header()).expect("write to memory");
        for e in Emotion::ALL {
            for r in Role::BOTH {
                let cell = &self.per_emotion_role[e.index()][r.index()];
                w.record("metric", &metric("emotion-role", Some(e), Some(r), cell))
                    .expect("write to memory");
            }
        }
        for e in Emotion::ALL {
            w.record(
                "metric",
                &metric("emotion", Some(e), None, &self.per_emotion[e.index()]),
            )
            .expect("write to memory");
        }
        for r in Role::BOTH {
            w.record("metric", &metric("role", None, Some(r), &self.per_role[r.index()]))
                .expect("write to memory");
        }
        w.record("metric", &metric("overall", None, None, &self.overall))
            .expect("write to memory");
        w.record("metric", &metric("overall-alternate", None, None, &self.alternate))
            .expect("write to memory");
        let summary = SummaryRow {
            pairs_with_role: self.pairs_with_role,
            pairs_absent: self.pairs_absent,
            excluded: self.exclusions.len(),
            macro_f1: self.macro_f1,
        };
        w.record("summary", &summary).expect("write to memory");
        for x in &self.exclusions {
            w.record("exclusion", x).expect("write to memory");
        }
        for (system, precision, recall, f1) in REFERENCE_ROWS {
            let row = ReferenceRow {
                system,
                precision,
                recall,
                f1,
            };
            w.record("reference", &row).expect("write to memory");
        }
        w.finish().expect("write to memory")
    }

    pub fn write(&self, path: &Path) -> Result<(), RecordError> {
        records::write_file(path, &self.to_bytes())
    }

    pub fn to_text(&self) -> String {
        let pct = |x: f64| 100.0 * x;
        let mut s = String::new();
        let c = &self.settings.calibration;
        let _ = writeln!(s, "backend      {}", self.settings.backend);
        let _ = writeln!(s, "calibration  {}", c.mode);
        if let Some(q) = c.quantile {
            let _ = writeln!(s, "quantile     {q}");
        }
        let _ = writeln!(s, "convention   {}", self.settings.convention);
        let _ = writeln!(
            s,
            "pairs        {} with a role, {} without, {} excluded",
            self.pairs_with_role,
            self.pairs_absent,
            self.exclusions.len()
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<22} {:>7} {:>7} {:>7}  {:>6} {:>6} {:>6}",
            "", "P", "R", "F1", "TP", "FP", "FN"
        );
        let mut row = |label: &str, cell: &Cell| {
            let m = &cell.metrics;
            let flag = if m.degenerate { " *" } else { "" };
            let _ = writeln!(
                s,
                "{:<22} {:>7.1} {:>7.1} {:>7.1}  {:>6} {:>6} {:>6}{flag}",
                label,
                pct(m.precision),
                pct(m.recall),
                pct(m.f1),
                cell.counts.tp,
                cell.counts.fp,
                cell.counts.fn_
            );
        };
        row("micro", &self.overall);
        row("micro (other conv.)", &self.alternate);
        for r in Role::BOTH {
            row(&format!("role {r}"), &self.per_role[r.index()]);
        }
        for e in Emotion::ALL {
            row(e.name(), &self.per_emotion[e.index()]);
        }
        let _ = writeln!(s, "{:<22} {:>23.1}", "macro F1", pct(self.macro_f1));
        for (system, p, r, f) in REFERENCE_ROWS {
            let _ = writeln!(s, "{system:<22} {p:>7.1} {r:>7.1} {f:>7.1}");
        }
        if !self.exclusions.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "excluded pairs:");
            for x in &self.exclusions {
                let _ = writeln!(s, "  {}:{}/{}  {}", x.story_id, x.line_index, x.character, x.reason);
            }
        }
        s
    }
}
