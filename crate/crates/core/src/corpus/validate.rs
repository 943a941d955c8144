use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::Serialize;

use super::{Corpus, CorpusError};
use crate::emotion::Emotion;
use crate::records;

/// One broken invariant, located by story and a free-form locus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub story_id: String,
    pub locus: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.story_id, self.locus, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, story_id: &str, locus: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            story_id: story_id.to_string(),
            locus: locus.into(),
            message: message.into(),
        });
    }
}

/// Checks every type invariant of a loaded corpus.
pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut ids = BTreeSet::new();
    for story in &corpus.stories {
        let id = story.story_id.as_str();
        if !ids.insert(id) {
            report.push(id, "story", "duplicate story id");
        }
        if story.lines.is_empty() {
            report.push(id, "lines", "story has no lines");
        }
        for (pos, line) in story.lines.iter().enumerate() {
            if line.index != pos {
                report.push(
                    id,
                    format!("line {pos}"),
                    format!("index {} is not contiguous from 0", line.index),
                );
            }
            if line.text.trim().is_empty() {
                report.push(id, format!("line {pos}"), "empty text");
            }
        }
        let mut names = BTreeSet::new();
        for name in &story.characters {
            if name.trim().is_empty() {
                report.push(id, "characters", "empty character name");
            } else if !names.insert(name.as_str()) {
                report.push(id, "characters", format!("duplicate character `{name}`"));
            }
        }
    }

    let mut seen = BTreeSet::new();
    for ann in &corpus.annotations {
        let id = ann.story_id.as_str();
        let locus = format!("line {} / {}", ann.line_index, ann.character);
        let Some(story) = corpus.story(id) else {
            report.push(id, locus, "annotation for unknown story");
            continue;
        };
        if ann.line_index >= story.lines.len() {
            report.push(id, locus.clone(), "annotation for missing line");
        }
        if !story.has_character(&ann.character) {
            report.push(id, locus.clone(), "annotation for character outside the roster");
        }
        if !seen.insert(ann.key()) {
            report.push(id, locus.clone(), "duplicate annotation");
        }
        if let Some((e, n)) = ann.votes.iter().find(|(_, &n)| n > ann.annotators) {
            report.push(
                id,
                locus.clone(),
                format!("{n} votes for {e} from {} annotators", ann.annotators),
            );
        }
        let expected = corpus.aggregation.aggregate(&ann.votes, ann.annotators);
        if expected != ann.gold {
            report.push(
                id,
                locus,
                format!(
                    "gold set {} differs from {} aggregation of the votes ({expected})",
                    ann.gold, corpus.aggregation
                ),
            );
        }
    }
    report
}

fn unknown_labels(body: &serde_json::Value) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(gold) = body.get("gold").and_then(|g| g.as_array()) {
        out.extend(gold.iter().filter_map(|v| v.as_str()).map(str::to_string));
    }
    if let Some(votes) = body.get("votes").and_then(|v| v.as_object()) {
        out.extend(votes.keys().cloned());
    }
    out.retain(|l| l.parse::<Emotion>().is_err());
    out
}

/// Validates a canonical corpus file without failing on bad labels.
///
/// Annotation records naming an emotion outside the eight-label set are
/// reported and skipped; the remaining records are checked with
/// [`validate_corpus`]. Structural damage (unparseable lines, lines for
/// unknown stories) is still an error.
pub fn validate_corpus_file(path: &Path) -> Result<ValidationReport, CorpusError> {
    let all = records::read_record_file(path)?;
    let mut report = ValidationReport::default();
    let mut kept = Vec::with_capacity(all.len());
    for rec in all {
        if rec.kind == "annotation" {
            let bad = unknown_labels(&rec.body);
            if !bad.is_empty() {
                let story = rec.body.get("story_id").and_then(|v| v.as_str()).unwrap_or("?");
                report.push(
                    story,
                    format!("record line {}", rec.line),
                    format!("emotion outside the label set: {}", bad.join(", ")),
                );
                continue;
            }
        }
        kept.push(rec);
    }
    let corpus = Corpus::from_records(kept, path)?;
    report.violations.extend(validate_corpus(&corpus).violations);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Aggregation, GoldAnnotation, Story};
    use crate::emotion::EmotionSet;
    use std::collections::BTreeMap;

    fn fixture() -> Corpus {
        let story = Story::new(
            "s1",
            vec!["Tom".into(), "People".into()],
            vec!["Tom ordered coffee.", "The coffee was hot."],
        );
        let votes: BTreeMap<Emotion, u32> = [(Emotion::Joy, 2)].into_iter().collect();
        Corpus {
            aggregation: Aggregation::Majority,
            stories: vec![story],
            annotations: vec![GoldAnnotation {
                story_id: "s1".into(),
                line_index: 0,
                character: "Tom".into(),
                annotators: 3,
                gold: [Emotion::Joy].into_iter().collect(),
                votes,
            }],
        }
    }

    #[test]
    fn valid_fixture_is_clean() {
        assert!(validate_corpus(&fixture()).is_clean());
    }

    #[test]
    fn duplicate_character_is_reported_once() {
        let mut c = fixture();
        c.stories[0].characters.push("Tom".into());
        let report = validate_corpus(&c);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].story_id, "s1");
    }

    #[test]
    fn gold_outside_label_set_in_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut text = String::from_utf8(fixture().to_bytes()).unwrap();
        text = text.replace(r#""gold":["joy"]"#, r#""gold":["boredom"]"#);
        std::fs::write(&path, text).unwrap();
        let report = validate_corpus_file(&path).unwrap();
        assert_eq!(report.violations.len(), 1, "{:?}", report.violations);
        assert!(report.violations[0].message.contains("boredom"));
    }

    #[test]
    fn gold_inconsistent_with_votes() {
        let mut c = fixture();
        c.annotations[0].gold = EmotionSet::empty();
        assert_eq!(validate_corpus(&c).violations.len(), 1);
    }

    #[test]
    fn non_contiguous_lines() {
        let mut c = fixture();
        c.stories[0].lines[1].index = 5;
        assert_eq!(validate_corpus(&c).violations.len(), 1);
    }
}
