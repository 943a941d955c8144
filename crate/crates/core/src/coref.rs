//! Rule-based pronoun substitution over a story.
//!
//! Each target pronoun is replaced by the most recent compatible character
//! mentioned before it, scanning the current line right to left and then the
//! earlier lines. Possessive forms become `<Name>'s`. Pronouns without a
//! compatible antecedent are left in place and reported.
//!
//! ```
//! use charet::corpus::Story;
//! use charet::coref::{CorefResolver, FeatureTable, RuleResolver};
//!
//! let story = Story::new("s", vec!["Tom".into()], vec!["Tom was hungry.", "He went out."]);
//! let out = RuleResolver::default().resolve_story(&story, &FeatureTable::default()).unwrap();
//! assert_eq!(out.story.lines[1].resolved_text.as_deref(), Some("Tom went out."));
//! ```

use std::collections::BTreeMap;
use std::io::BufRead;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Story};
use crate::records::{self, RecordError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "m")]
    Masculine,
    #[serde(rename = "f")]
    Feminine,
    #[serde(rename = "n")]
    Neuter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Number {
    #[serde(rename = "sg")]
    Singular,
    #[serde(rename = "pl")]
    Plural,
}

/// Agreement features of one character. Missing values match anything,
/// except that only explicitly neuter entities take neuter pronouns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityFeatures {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number: Option<Number>,
}

const COLLECTIVE_NOUNS: &[&str] = &[
    "people",
    "friends",
    "family",
    "parents",
    "kids",
    "children",
    "students",
    "classmates",
    "coworkers",
    "co-workers",
    "neighbors",
    "neighbours",
    "everyone",
    "others",
    "team",
    "crowd",
    "guests",
    "teachers",
    "boys",
    "girls",
    "class",
    "players",
    "fans",
    "group",
    "customers",
    "siblings",
    "cousins",
    "townspeople",
];

impl EntityFeatures {
    /// Number guessed from the surface form: collective nouns and
    /// coordinated names are plural, everything else is left open.
    pub fn guess(name: &str) -> Self {
        let lower = name.to_lowercase();
        let plural = COLLECTIVE_NOUNS.contains(&lower.as_str()) || lower.contains(" and ");
        EntityFeatures {
            gender: None,
            number: plural.then_some(Number::Plural),
        }
    }
}

/// Entity-feature sidecar: global entries keyed by character name, plus
/// story-specific overrides.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureTable {
    global: BTreeMap<String, EntityFeatures>,
    per_story: BTreeMap<(String, String), EntityFeatures>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntityRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    story_id: Option<String>,
    character: String,
    #[serde(flatten)]
    features: EntityFeatures,
}

impl FeatureTable {
    pub fn insert(&mut self, character: impl Into<String>, features: EntityFeatures) {
        self.global.insert(character.into(), features);
    }

    pub fn insert_for_story(
        &mut self,
        story_id: impl Into<String>,
        character: impl Into<String>,
        features: EntityFeatures,
    ) {
        self.per_story.insert((story_id.into(), character.into()), features);
    }

    pub fn lookup(&self, story_id: &str, character: &str) -> EntityFeatures {
        self.per_story
            .get(&(story_id.to_string(), character.to_string()))
            .or_else(|| self.global.get(character))
            .copied()
            .unwrap_or_else(|| EntityFeatures::guess(character))
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty() && self.per_story.is_empty()
    }

    /// Reads `entity` line records: `{"kind":"entity","character":"Tom","gender":"m"}`.
    pub fn read<R: BufRead>(reader: R, path: &Path) -> Result<Self, RecordError> {
        let mut table = FeatureTable::default();
        for rec in records::read_records(reader, path)? {
            if rec.kind != "entity" {
                return Err(RecordError::malformed(
                    path,
                    rec.line,
                    format!("unexpected record kind `{}`", rec.kind),
                ));
            }
            let e: EntityRecord = rec.decode(path)?;
            match e.story_id {
                Some(story) => table.insert_for_story(story, e.character, e.features),
                None => table.insert(e.character, e.features),
            }
        }
        Ok(table)
    }

    pub fn read_file(path: &Path) -> Result<Self, RecordError> {
        let file = std::fs::File::open(path).map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read(std::io::BufReader::new(file), path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = records::RecordWriter::new(Vec::new());
        for (character, features) in &self.global {
            let rec = EntityRecord {
                story_id: None,
                character: character.clone(),
                features: *features,
            };
            w.record("entity", &rec).expect("in-memory write");
        }
        for ((story, character), features) in &self.per_story {
            let rec = EntityRecord {
                story_id: Some(story.clone()),
                character: character.clone(),
                features: *features,
            };
            w.record("entity", &rec).expect("in-memory write");
        }
        w.finish().expect("in-memory write")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PronounForm {
    Subject,
    Object,
    Possessive,
    /// `her`: possessive before a noun, object otherwise.
    ObjectOrPossessive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    Masculine,
    Feminine,
    Neuter,
    Plural,
}

/// How one pronoun surface form is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PronounRule {
    pub surface: &'static str,
    pub form: PronounForm,
    pub agreement: Agreement,
}

impl PronounRule {
    pub const TABLE: &'static [PronounRule] = &[
        PronounRule {
            surface: "he",
            form: PronounForm::Subject,
            agreement: Agreement::Masculine,
        },
        PronounRule {
            surface: "him",
            form: PronounForm::Object,
            agreement: Agreement::Masculine,
        },
        PronounRule {
            surface: "his",
            form: PronounForm::Possessive,
            agreement: Agreement::Masculine,
        },
        PronounRule {
            surface: "she",
            form: PronounForm::Subject,
            agreement: Agreement::Feminine,
        },
        PronounRule {
            surface: "her",
            form: PronounForm::ObjectOrPossessive,
            agreement: Agreement::Feminine,
        },
        PronounRule {
            surface: "it",
            form: PronounForm::Subject,
            agreement: Agreement::Neuter,
        },
        PronounRule {
            surface: "its",
            form: PronounForm::Possessive,
            agreement: Agreement::Neuter,
        },
        PronounRule {
            surface: "they",
            form: PronounForm::Subject,
            agreement: Agreement::Plural,
        },
        PronounRule {
            surface: "them",
            form: PronounForm::Object,
            agreement: Agreement::Plural,
        },
        PronounRule {
            surface: "their",
            form: PronounForm::Possessive,
            agreement: Agreement::Plural,
        },
    ];

    pub fn lookup(surface: &str) -> Option<PronounRule> {
        let lower = surface.to_lowercase();
        Self::TABLE.iter().copied().find(|r| r.surface == lower)
    }

    /// Whether an entity with `features` can be the antecedent. Plural
    /// pronouns are handled separately by the resolver.
    pub fn accepts(&self, features: EntityFeatures) -> bool {
        let EntityFeatures { gender, number } = features;
        match self.agreement {
            Agreement::Masculine => matches!(gender, None | Some(Gender::Masculine)) && number != Some(Number::Plural),
            Agreement::Feminine => matches!(gender, None | Some(Gender::Feminine)) && number != Some(Number::Plural),
            Agreement::Neuter => gender == Some(Gender::Neuter) && number != Some(Number::Plural),
            Agreement::Plural => number == Some(Number::Plural),
        }
    }
}

/// The pronouns substituted by default: he, his, they and him, plus the
/// feminine and neuter counterparts.
pub const DEFAULT_TARGETS: &[&str] = &["he", "his", "they", "him", "she", "her", "it", "its"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorefError {
    #[error("story `{0}` has an empty character roster")]
    EmptyRoster(String),
    #[error("no resolution rule for target pronoun `{0}`")]
    UnknownPronoun(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum CorefFlagKind {
    /// No compatible antecedent; the pronoun was left as is.
    Unresolved,
    /// `they` with no plural antecedent fell back to the most recent entity.
    PluralFallback { antecedent: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorefFlag {
    pub story_id: String,
    pub line: usize,
    pub pronoun: String,
    /// Byte offset of the pronoun in the line's input text.
    pub offset: usize,
    #[serde(flatten)]
    pub kind: CorefFlagKind,
}

/// One replacement made in a line's input text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Substitution {
    pub line: usize,
    pub span: Range<usize>,
    pub replacement: String,
    pub antecedent: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorefOutcome {
    pub story: Story,
    pub flags: Vec<CorefFlag>,
    pub substitutions: Vec<Substitution>,
}

/// Anything that can fill in `resolved_text` for a story. A neural or
/// remote resolver can implement this in place of [`RuleResolver`].
pub trait CorefResolver: Send + Sync {
    fn resolve_story(&self, story: &Story, features: &FeatureTable) -> Result<CorefOutcome, CorefError>;
}

/// Most-recent-compatible-antecedent resolver.
#[derive(Debug, Clone)]
pub struct RuleResolver {
    targets: Vec<PronounRule>,
    word: Regex,
}

impl Default for RuleResolver {
    fn default() -> Self {
        RuleResolver::new(DEFAULT_TARGETS).expect("default targets all have rules")
    }
}

const NON_NOUN_FOLLOWERS: &[&str] = &[
    "a", "an", "the", "to", "and", "or", "but", "up", "out", "back", "for", "with", "in", "on", "at", "about", "off",
    "that", "this", "some", "so", "as", "by", "from", "into", "again", "too", "very", "home", "down", "over", "away",
    "if", "when", "because", "then",
];

impl RuleResolver {
    pub fn new<S: AsRef<str>>(targets: &[S]) -> Result<Self, CorefError> {
        let targets = targets
            .iter()
            .map(|t| PronounRule::lookup(t.as_ref()).ok_or_else(|| CorefError::UnknownPronoun(t.as_ref().to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RuleResolver {
            targets,
            word: Regex::new(r"[A-Za-z]+").expect("static regex"),
        })
    }

    pub fn targets(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.targets.iter().map(|r| r.surface)
    }

    fn target(&self, word: &str) -> Option<PronounRule> {
        let lower = word.to_lowercase();
        self.targets.iter().copied().find(|r| r.surface == lower)
    }

    fn her_is_possessive(&self, rest: &str) -> bool {
        let trimmed = rest.trim_start();
        if trimmed.len() == rest.len() {
            return false; // punctuation or end of text follows directly
        }
        match self.word.find(trimmed) {
            Some(m) if m.start() == 0 => !NON_NOUN_FOLLOWERS.contains(&m.as_str().to_lowercase().as_str()),
            _ => false,
        }
    }
}

fn mention_patterns(characters: &[String]) -> Vec<(usize, Regex)> {
    let mut order: Vec<usize> = (0..characters.len()).collect();
    // Longer names first so "Mary Ann" wins over "Mary".
    order.sort_by_key(|&i| std::cmp::Reverse(characters[i].len()));
    order
        .into_iter()
        .filter(|&i| !characters[i].trim().is_empty())
        .map(|i| {
            let pat = format!(r"\b{}\b", regex::escape(characters[i].trim()));
            let re = RegexBuilder::new(&pat)
                .case_insensitive(true)
                .build()
                .expect("escaped name");
            (i, re)
        })
        .collect()
}

enum Event {
    Mention(usize),
    Pronoun(PronounRule),
}

impl CorefResolver for RuleResolver {
    fn resolve_story(&self, story: &Story, features: &FeatureTable) -> Result<CorefOutcome, CorefError> {
        if story.characters.is_empty() {
            return Err(CorefError::EmptyRoster(story.story_id.clone()));
        }
        let feats: Vec<EntityFeatures> = story
            .characters
            .iter()
            .map(|c| features.lookup(&story.story_id, c))
            .collect();
        let patterns = mention_patterns(&story.characters);

        let mut out = story.clone();
        let mut flags = Vec::new();
        let mut substitutions = Vec::new();
        let mut history: Vec<usize> = Vec::new();

        for line in &mut out.lines {
            let input = line.effective_text().to_string();

            let mut spans: Vec<(Range<usize>, usize)> = Vec::new();
            for (entity, re) in &patterns {
                for m in re.find_iter(&input) {
                    if spans.iter().all(|(r, _)| m.end() <= r.start || m.start() >= r.end) {
                        spans.push((m.range(), *entity));
                    }
                }
            }
            let mut events: Vec<(Range<usize>, Event)> =
                spans.into_iter().map(|(r, e)| (r, Event::Mention(e))).collect();
            for m in self.word.find_iter(&input) {
                if let Some(rule) = self.target(m.as_str()) {
                    if events.iter().all(|(r, _)| m.end() <= r.start || m.start() >= r.end) {
                        events.push((m.range(), Event::Pronoun(rule)));
                    }
                }
            }
            events.sort_by_key(|(r, _)| r.start);

            let mut resolved = String::with_capacity(input.len());
            let mut cursor = 0;
            for (range, event) in events {
                match event {
                    Event::Mention(e) => history.push(e),
                    Event::Pronoun(rule) => {
                        let surface = &input[range.clone()];
                        let flag = |kind| CorefFlag {
                            story_id: story.story_id.clone(),
                            line: line.index,
                            pronoun: surface.to_string(),
                            offset: range.start,
                            kind,
                        };
                        let found = history.iter().rev().copied().find(|&e| rule.accepts(feats[e]));
                        let antecedent = match (found, rule.agreement) {
                            (Some(e), _) => Some(e),
                            (None, Agreement::Plural) => {
                                let last = history.last().copied();
                                if let Some(e) = last {
                                    flags.push(flag(CorefFlagKind::PluralFallback {
                                        antecedent: story.characters[e].clone(),
                                    }));
                                }
                                last
                            }
                            (None, _) => None,
                        };
                        let Some(e) = antecedent else {
                            flags.push(flag(CorefFlagKind::Unresolved));
                            continue;
                        };
                        let name = story.characters[e].trim();
                        let possessive = match rule.form {
                            PronounForm::Possessive => true,
                            PronounForm::ObjectOrPossessive => self.her_is_possessive(&input[range.end..]),
                            PronounForm::Subject | PronounForm::Object => false,
                        };
                        let replacement = if possessive {
                            format!("{name}'s")
                        } else {
                            name.to_string()
                        };
                        resolved.push_str(&input[cursor..range.start]);
                        resolved.push_str(&replacement);
                        cursor = range.end;
                        substitutions.push(Substitution {
                            line: line.index,
                            span: range,
                            replacement,
                            antecedent: story.characters[e].clone(),
                        });
                        history.push(e);
                    }
                }
            }
            resolved.push_str(&input[cursor..]);
            line.resolved_text = Some(resolved);
        }
        Ok(CorefOutcome {
            story: out,
            flags,
            substitutions,
        })
    }
}

/// Resolves every story in parallel; story order and annotations are kept.
pub fn resolve_corpus<R: CorefResolver + ?Sized>(
    corpus: &Corpus,
    resolver: &R,
    features: &FeatureTable,
) -> Result<(Corpus, Vec<CorefFlag>), CorefError> {
    let outcomes = corpus
        .stories
        .par_iter()
        .map(|s| resolver.resolve_story(s, features))
        .collect::<Result<Vec<_>, _>>()?;
    let mut flags = Vec::new();
    let mut stories = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        flags.extend(o.flags);
        stories.push(o.story);
    }
    Ok((
        Corpus {
            stories,
            ..corpus.clone()
        },
        flags,
    ))
}
