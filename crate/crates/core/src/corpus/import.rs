//! Import of StoryCommonsense-style CSV releases.
//!
//! Each CSV row is one annotator's judgement of one (story, line, character)
//! triple. The column mapping names which header carries which field; the
//! defaults follow the release's `allcharlinepairs.csv` layout.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Aggregation, Corpus, EventLine, GoldAnnotation, Story};
use crate::emotion::{Emotion, EmotionSet};

/// Maps logical fields to CSV header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub story_id: String,
    pub line: String,
    pub character: String,
    pub sentence: String,
    pub emotions: String,
    /// Distinguishes annotators; when absent every row counts as a new one.
    pub annotator: Option<String>,
    pub split: Option<String>,
    /// Story roster column; when absent the roster is the union of the
    /// characters that appear in annotation rows.
    pub characters: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            story_id: "storyid".into(),
            line: "linenum".into(),
            character: "char".into(),
            sentence: "sentence".into(),
            emotions: "plutchik".into(),
            annotator: None,
            split: None,
            characters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportConfig {
    pub aggregation: Aggregation,
    /// Labels with a lower intensity (`joy:1`) are not counted as votes.
    pub min_intensity: u32,
    /// Number of the first line in the source (the release counts from 1).
    pub line_base: usize,
    /// Split label for files without a split column.
    pub default_split: Option<String>,
    pub columns: ColumnMapping,
}

impl Default for ImportConfig {
    fn default() -> Self {
        ImportConfig {
            aggregation: Aggregation::Majority,
            min_intensity: 1,
            line_base: 1,
            default_split: None,
            columns: ColumnMapping::default(),
        }
    }
}

impl ImportConfig {
    /// Config matching the files produced by [`write_release_csv`].
    pub fn for_exported_release(aggregation: Aggregation) -> Self {
        ImportConfig {
            aggregation,
            columns: ColumnMapping {
                annotator: Some("workerid".into()),
                split: Some("split".into()),
                characters: Some("characters".into()),
                ..ColumnMapping::default()
            },
            ..ImportConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ImportError> {
        toml::from_str(text).map_err(|e| ImportError::Config(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("invalid importer config: {0}")]
    Config(String),
    #[error("{file}: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Malformed { file: PathBuf, line: u64, message: String },
}

/// An annotation row dropped during import; the import itself continues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedRecord {
    pub file: PathBuf,
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportOutcome {
    pub corpus: Corpus,
    pub rejected: Vec<RejectedRecord>,
}

#[derive(Debug, Clone)]
struct Row {
    file_line: u64,
    story_id: String,
    line: usize,
    character: String,
    sentence: String,
    labels: Vec<(Emotion, u32)>,
    annotator: Option<String>,
    split: Option<String>,
    roster: Option<Vec<String>>,
}

/// Splits an emotion cell such as `["joy:3","trust:2"]`, `joy;fear` or
/// `none` into labels with intensities (missing intensity counts as 3).
fn parse_emotion_cell(cell: &str) -> Result<Vec<(Emotion, u32)>, String> {
    let mut out = Vec::new();
    for raw in cell.split([',', ';', '|']) {
        let item = raw.trim_matches(|c: char| c.is_whitespace() || "[]\"'".contains(c));
        if item.is_empty() || item.eq_ignore_ascii_case("none") {
            continue;
        }
        let (label, intensity) = match item.split_once(':') {
            Some((l, i)) => {
                let i = i
                    .trim()
                    .parse::<u32>()
                    .map_err(|_| format!("bad intensity in `{item}`"))?;
                (l, i)
            }
            None => (item, 3),
        };
        let emotion = label.parse::<Emotion>().map_err(|e| e.to_string())?;
        out.push((emotion, intensity));
    }
    Ok(out)
}

fn parse_list_cell(cell: &str) -> Vec<String> {
    cell.split(['|', ';', ','])
        .map(|s| s.trim_matches(|c: char| c.is_whitespace() || "[]\"'".contains(c)))
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn read_rows(file: &Path, config: &ImportConfig) -> Result<Vec<Row>, ImportError> {
    let malformed = |line: u64, message: String| ImportError::Malformed {
        file: file.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(file)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => ImportError::Io {
                file: file.to_path_buf(),
                source,
            },
            other => malformed(1, format!("{other:?}")),
        })?;
    let headers = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let column = |name: &str| -> Result<usize, ImportError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| malformed(1, format!("missing column `{name}`")))
    };
    let optional = |name: &Option<String>| name.as_deref().map(column).transpose();

    let cols = &config.columns;
    let story_col = column(&cols.story_id)?;
    let line_col = column(&cols.line)?;
    let char_col = column(&cols.character)?;
    let sentence_col = column(&cols.sentence)?;
    let emotion_col = column(&cols.emotions)?;
    let annotator_col = optional(&cols.annotator)?;
    let split_col = optional(&cols.split)?;
    let roster_col = optional(&cols.characters)?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        let file_line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |idx: usize| record.get(idx).unwrap_or("").trim().to_string();

        let story_id = field(story_col);
        if story_id.is_empty() {
            return Err(malformed(file_line, "empty story id".into()));
        }
        let raw_line = field(line_col);
        let source_line: usize = raw_line
            .parse()
            .map_err(|_| malformed(file_line, format!("line number `{raw_line}` is not an integer")))?;
        let line = source_line.checked_sub(config.line_base).ok_or_else(|| {
            malformed(
                file_line,
                format!("line number {source_line} below base {}", config.line_base),
            )
        })?;
        let character = field(char_col);
        if character.is_empty() {
            return Err(malformed(file_line, "empty character".into()));
        }
        let sentence = field(sentence_col);
        if sentence.is_empty() {
            return Err(malformed(file_line, "empty sentence".into()));
        }
        let labels = parse_emotion_cell(&field(emotion_col)).map_err(|m| malformed(file_line, m))?;
        rows.push(Row {
            file_line,
            story_id,
            line,
            character,
            sentence,
            labels,
            annotator: annotator_col.map(field).filter(|s| !s.is_empty()),
            split: split_col.map(field).filter(|s| !s.is_empty()),
            roster: roster_col.map(|c| parse_list_cell(&field(c))),
        });
    }
    Ok(rows)
}

#[derive(Default)]
struct StoryAcc {
    first: Option<(PathBuf, u64)>,
    split: Option<String>,
    roster: Option<BTreeSet<String>>,
    seen: BTreeSet<String>,
    lines: BTreeMap<usize, String>,
}

#[derive(Default)]
struct PairAcc {
    rows: u32,
    annotators: BTreeSet<String>,
    // annotator key -> emotions voted
    votes: BTreeMap<String, EmotionSet>,
}

/// Imports one or more release files into a canonical [`Corpus`].
///
/// Files are parsed in parallel and merged in the order given. Stories are
/// ordered by id and characters by name, so the result does not depend on
/// row order.
pub fn import_corpus(files: &[PathBuf], config: &ImportConfig) -> Result<ImportOutcome, ImportError> {
    let parsed: Vec<Vec<Row>> = files
        .par_iter()
        .map(|f| read_rows(f, config))
        .collect::<Result<_, _>>()?;

    let mut stories: BTreeMap<String, StoryAcc> = BTreeMap::new();
    for (file, rows) in files.iter().zip(&parsed) {
        for row in rows {
            let malformed = |message: String| ImportError::Malformed {
                file: file.clone(),
                line: row.file_line,
                message,
            };
            let acc = stories.entry(row.story_id.clone()).or_default();
            acc.first.get_or_insert_with(|| (file.clone(), row.file_line));
            let split = row.split.clone().or_else(|| config.default_split.clone());
            match (&acc.split, &split) {
                (None, Some(_)) => acc.split = split,
                (Some(a), Some(b)) if a != b => {
                    return Err(malformed(format!(
                        "story `{}` appears in splits `{a}` and `{b}`",
                        row.story_id
                    )))
                }
                _ => {}
            }
            if let Some(roster) = &row.roster {
                let roster: BTreeSet<String> = roster.iter().cloned().collect();
                match &acc.roster {
                    None => acc.roster = Some(roster),
                    Some(r) if *r != roster => {
                        return Err(malformed(format!(
                            "conflicting character lists for story `{}`",
                            row.story_id
                        )))
                    }
                    _ => {}
                }
            }
            match acc.lines.get(&row.line) {
                None => {
                    acc.lines.insert(row.line, row.sentence.clone());
                }
                Some(s) if *s != row.sentence => {
                    return Err(malformed(format!(
                        "line {} of story `{}` has conflicting sentences",
                        row.line, row.story_id
                    )))
                }
                _ => {}
            }
            acc.seen.insert(row.character.clone());
        }
    }

    let mut corpus = Corpus {
        aggregation: config.aggregation,
        ..Corpus::default()
    };
    for (story_id, acc) in &stories {
        if let Some((n, _)) = acc.lines.iter().enumerate().find(|(i, (idx, _))| *i != **idx) {
            let (file, line) = acc.first.clone().expect("story has rows");
            return Err(ImportError::Malformed {
                file,
                line,
                message: format!("story `{story_id}` is missing line {}", n + config.line_base),
            });
        }
        let characters: Vec<String> = acc
            .roster
            .clone()
            .unwrap_or_else(|| acc.seen.clone())
            .into_iter()
            .collect();
        corpus.stories.push(Story {
            story_id: story_id.clone(),
            split: acc.split.clone(),
            characters,
            lines: acc
                .lines
                .iter()
                .map(|(&i, text)| EventLine::new(i, text.clone()))
                .collect(),
        });
    }

    let mut rejected = Vec::new();
    let mut pairs: BTreeMap<(String, usize, String), PairAcc> = BTreeMap::new();
    for (file, rows) in files.iter().zip(&parsed) {
        for row in rows {
            let story = corpus.story(&row.story_id).expect("story built above");
            if !story.has_character(&row.character) {
                let reason = format!(
                    "character `{}` is not in the roster of story `{}`",
                    row.character, row.story_id
                );
                warn!("{}:{}: {reason}; record skipped", file.display(), row.file_line);
                rejected.push(RejectedRecord {
                    file: file.clone(),
                    line: row.file_line,
                    reason,
                });
                continue;
            }
            let pair = pairs
                .entry((row.story_id.clone(), row.line, row.character.clone()))
                .or_default();
            pair.rows += 1;
            let annotator = row.annotator.clone().unwrap_or_else(|| format!("#row{}", pair.rows));
            pair.annotators.insert(annotator.clone());
            let voted = pair.votes.entry(annotator).or_default();
            for &(emotion, intensity) in &row.labels {
                if intensity >= config.min_intensity {
                    voted.insert(emotion);
                }
            }
        }
    }
    for ((story_id, line_index, character), pair) in pairs {
        let mut votes: BTreeMap<Emotion, u32> = BTreeMap::new();
        for set in pair.votes.values() {
            for e in set.iter() {
                *votes.entry(e).or_default() += 1;
            }
        }
        let annotators = pair.annotators.len() as u32;
        let gold = config.aggregation.aggregate(&votes, annotators);
        corpus.annotations.push(GoldAnnotation {
            story_id,
            line_index,
            character,
            annotators,
            votes,
            gold,
        });
    }
    Ok(ImportOutcome { corpus, rejected })
}

/// Writes `corpus` as a release CSV that [`import_corpus`] reads back under
/// [`ImportConfig::for_exported_release`].
///
/// Annotator `i` is written as voting for every emotion with more than `i`
/// votes, which reproduces the vote counts exactly.
pub fn write_release_csv(corpus: &Corpus, path: &Path) -> Result<(), ImportError> {
    let io_err = |source: std::io::Error| ImportError::Io {
        file: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(e.into()))?;
    w.write_record([
        "storyid",
        "linenum",
        "char",
        "sentence",
        "plutchik",
        "workerid",
        "split",
        "characters",
    ])
    .map_err(|e| io_err(e.into()))?;
    for ann in &corpus.annotations {
        let story = corpus.story(&ann.story_id).ok_or_else(|| ImportError::Malformed {
            file: path.to_path_buf(),
            line: 0,
            message: format!("annotation for unknown story `{}`", ann.story_id),
        })?;
        let sentence = &story.lines[ann.line_index].text;
        for i in 0..ann.annotators {
            let labels: Vec<String> = ann
                .votes
                .iter()
                .filter(|(_, &n)| n > i)
                .map(|(e, _)| format!("{e}:3"))
                .collect();
            let cell = if labels.is_empty() {
                "none".to_string()
            } else {
                labels.join(";")
            };
            w.write_record([
                story.story_id.as_str(),
                &(ann.line_index + 1).to_string(),
                &ann.character,
                sentence,
                &cell,
                &format!("w{i}"),
                story.split.as_deref().unwrap_or(""),
                &story.characters.join("|"),
            ])
            .map_err(|e| io_err(e.into()))?;
        }
    }
    w.flush().map_err(io_err)
}
