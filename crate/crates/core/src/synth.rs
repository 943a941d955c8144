//! Seeded generator of small labelled story corpora.
//!
//! Each story has a male, a female and a collective character. Lines come
//! from a handful of sentence templates with one actor and at most one
//! object; pronouns are used only where the resolver can bind them without
//! ambiguity. Besides the corpus the generator emits everything a full run
//! needs: entity features, dependency parses of the resolved lines, the
//! intended roles, and an oracle backend built from the gold labels.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::SyntheticOracle;
use crate::coref::{EntityFeatures, FeatureTable, Gender, Number};
use crate::corpus::{Aggregation, Corpus, EventLine, GoldAnnotation, Story};
use crate::emotion::{Emotion, EmotionSet};
use crate::engine::EmotionDictionary;
use crate::records::{self, RecordError};
use crate::rolelab::{write_conllu, DepGraph, Role, RoleAssignment, Token};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub stories: usize,
    pub lines: usize,
    pub annotators: u32,
    pub seed: u64,
    /// Every n-th story goes to the `test` split, the rest to `train`.
    pub test_every: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            stories: 50,
            lines: 5,
            annotators: 3,
            seed: 7,
            test_every: 5,
        }
    }
}

const MALE: &[&str] = &["Tom", "Jack", "Sam", "Ben", "Max", "Leo", "Dan", "Carl", "Omar", "Ivan"];
const FEMALE: &[&str] = &[
    "Mary", "Anna", "Lucy", "Kate", "Emma", "Jane", "Rose", "Nina", "Sara", "Ruth",
];
const GROUPS: &[&str] = &["People", "Friends", "Neighbors", "Classmates"];
const ITEMS: &[&str] = &[
    "lamp", "kite", "book", "bike", "cake", "hat", "radio", "watch", "puzzle", "ticket", "camera", "guitar", "scarf",
    "plant", "ladder", "wallet", "phone", "jacket", "map", "drum",
];
const PLACES: &[&str] = &[
    "park", "market", "beach", "library", "museum", "station", "harbor", "zoo", "bakery", "gym",
];
const MOODS: &[&str] = &[
    "calm", "tired", "brave", "restless", "proud", "lonely", "busy", "sleepy",
];

/// One mention slot: who, and in which grammatical form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Case {
    Subject,
    Object,
    Possessive,
}

/// A token before rendering: either a fixed word or a character mention.
#[derive(Debug, Clone)]
enum Piece {
    Word {
        form: String,
        lemma: String,
        upos: &'static str,
        head: usize,
        rel: &'static str,
    },
    Mention {
        who: usize,
        case: Case,
        head: usize,
        rel: &'static str,
    },
}

fn word(form: &str, upos: &'static str, head: usize, rel: &'static str) -> Piece {
    Piece::Word {
        form: form.to_string(),
        lemma: form.to_lowercase(),
        upos,
        head,
        rel,
    }
}

fn verb(form: &str, lemma: &str, head: usize, rel: &'static str) -> Piece {
    Piece::Word {
        form: form.to_string(),
        lemma: lemma.to_string(),
        upos: "VERB",
        head,
        rel,
    }
}

fn mention(who: usize, case: Case, head: usize, rel: &'static str) -> Piece {
    Piece::Mention { who, case, head, rel }
}

/// A templated line: pieces with 1-based heads over pieces, plus the roles
/// the template intends.
struct Template {
    pieces: Vec<Piece>,
    actor: usize,
    object: Option<usize>,
}

fn template<R: Rng>(rng: &mut R, kind: usize, a: usize, b: usize, male: bool) -> Template {
    let item = *ITEMS.choose(rng).expect("items");
    let punct = |head| word(".", "PUNCT", head, "punct");
    let (pieces, object) = match kind {
        0 => (
            vec![
                mention(a, Case::Subject, 2, "nsubj"),
                verb("bought", "buy", 0, "root"),
                word("a", "DET", 4, "det"),
                word(item, "NOUN", 2, "obj"),
                punct(2),
            ],
            None,
        ),
        1 => (
            vec![
                mention(a, Case::Subject, 2, "nsubj"),
                verb("called", "call", 0, "root"),
                mention(b, Case::Object, 2, "obj"),
                punct(2),
            ],
            Some(b),
        ),
        2 => (
            vec![
                mention(b, Case::Subject, 3, "nsubj:pass"),
                word("was", "AUX", 3, "aux:pass"),
                verb("praised", "praise", 0, "root"),
                word("by", "ADP", 5, "case"),
                mention(a, Case::Object, 3, "obl:agent"),
                punct(3),
            ],
            Some(b),
        ),
        3 => (
            vec![
                mention(a, Case::Subject, 2, "nsubj"),
                verb("gave", "give", 0, "root"),
                mention(b, Case::Object, 2, "iobj"),
                word("a", "DET", 5, "det"),
                word(item, "NOUN", 2, "obj"),
                punct(2),
            ],
            Some(b),
        ),
        4 => (
            vec![
                mention(a, Case::Subject, 2, "nsubj"),
                verb("felt", "feel", 0, "root"),
                word(MOODS.choose(rng).expect("moods"), "ADJ", 2, "xcomp"),
                punct(2),
            ],
            None,
        ),
        5 => (
            vec![
                mention(a, Case::Subject, 2, "nsubj"),
                verb("talked", "talk", 0, "root"),
                word("to", "ADP", 4, "case"),
                mention(b, Case::Object, 2, "obl"),
                punct(2),
            ],
            Some(b),
        ),
        6 => (
            vec![
                mention(a, Case::Subject, 2, "nsubj"),
                verb("went", "go", 0, "root"),
                word("to", "ADP", 5, "case"),
                word("the", "DET", 5, "det"),
                word(PLACES.choose(rng).expect("places"), "NOUN", 2, "obl"),
                punct(2),
            ],
            None,
        ),
        _ if male => (
            vec![
                mention(a, Case::Subject, 2, "nsubj"),
                verb("lost", "lose", 0, "root"),
                mention(a, Case::Possessive, 4, "nmod:poss"),
                word(item, "NOUN", 2, "obj"),
                punct(2),
            ],
            None,
        ),
        _ => (
            vec![
                mention(a, Case::Subject, 2, "nsubj"),
                verb("lost", "lose", 0, "root"),
                word("a", "DET", 4, "det"),
                word(item, "NOUN", 2, "obj"),
                punct(2),
            ],
            None,
        ),
    };
    Template {
        pieces,
        actor: a,
        object,
    }
}

struct Cast {
    names: [String; 3],
    pronouns: [[&'static str; 3]; 3],
}

impl Cast {
    /// Subject, object and possessive pronouns usable for each member;
    /// only pronouns in the resolver's default target list are offered.
    fn pronoun(&self, who: usize, case: Case) -> Option<&'static str> {
        let p = self.pronouns[who][case as usize];
        (!p.is_empty()).then_some(p)
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn join(tokens: &[String]) -> String {
    let mut out = String::new();
    for t in tokens {
        if !out.is_empty() && t != "." && t != "'s" {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

/// Renders raw text, resolved text and the parse of the resolved text.
fn render(
    t: &Template,
    cast: &Cast,
    use_pronoun: &dyn Fn(usize) -> bool,
    sent_id: String,
) -> (String, String, DepGraph) {
    let mut raw = Vec::new();
    let mut resolved = Vec::new();
    // piece index -> token id of the piece's head word after expansion
    let mut ids = Vec::with_capacity(t.pieces.len());
    let mut next = 1;
    for p in &t.pieces {
        ids.push(next);
        next += match p {
            Piece::Mention {
                case: Case::Possessive, ..
            } => 2,
            _ => 1,
        };
    }
    let head_id = |h: usize| if h == 0 { 0 } else { ids[h - 1] };
    let mut tokens = Vec::new();
    for (i, p) in t.pieces.iter().enumerate() {
        match p {
            Piece::Word {
                form,
                lemma,
                upos,
                head,
                rel,
            } => {
                raw.push(form.clone());
                resolved.push(form.clone());
                tokens.push(Token {
                    id: ids[i],
                    form: form.clone(),
                    lemma: lemma.clone(),
                    upos: upos.to_string(),
                    feats: String::new(),
                    head: head_id(*head),
                    deprel: rel.to_string(),
                });
            }
            Piece::Mention { who, case, head, rel } => {
                let name = &cast.names[*who];
                let pron = cast.pronoun(*who, *case).filter(|_| use_pronoun(*who));
                match (pron, case) {
                    (Some(p), _) => raw.push(if i == 0 { capitalize(p) } else { p.to_string() }),
                    (None, Case::Possessive) => {
                        raw.push(name.clone());
                        raw.push("'s".into());
                    }
                    (None, _) => raw.push(name.clone()),
                }
                resolved.push(name.clone());
                tokens.push(Token {
                    id: ids[i],
                    form: name.clone(),
                    lemma: name.clone(),
                    upos: "PROPN".into(),
                    feats: String::new(),
                    head: head_id(*head),
                    deprel: rel.to_string(),
                });
                if *case == Case::Possessive {
                    resolved.push("'s".into());
                    tokens.push(Token {
                        id: ids[i] + 1,
                        form: "'s".into(),
                        lemma: "'s".into(),
                        upos: "PART".into(),
                        feats: String::new(),
                        head: ids[i],
                        deprel: "case".into(),
                    });
                }
            }
        }
    }
    let resolved_text = join(&resolved);
    let graph = DepGraph {
        sent_id: Some(sent_id),
        text: Some(resolved_text.clone()),
        tokens,
    };
    (join(&raw), resolved_text, graph)
}

/// Everything produced for one synthetic corpus.
#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub config: SynthConfig,
    /// Raw text only; `resolved_text` is left for the resolver.
    pub corpus: Corpus,
    /// Resolved text per line, as the generator intends it.
    pub expected_resolved: BTreeMap<(String, usize), String>,
    pub features: FeatureTable,
    pub graphs: Vec<DepGraph>,
    pub truth: Vec<RoleAssignment>,
    pub oracle: SyntheticOracle,
}

fn random_gold<R: Rng>(rng: &mut R, max: usize) -> EmotionSet {
    let n = rng.gen_range(0..=max);
    let mut all = Emotion::ALL;
    all.shuffle(rng);
    all[..n].iter().copied().collect()
}

fn votes_for<R: Rng>(
    rng: &mut R,
    gold: EmotionSet,
    annotators: u32,
    aggregation: Aggregation,
) -> BTreeMap<Emotion, u32> {
    let need = aggregation.required_votes(annotators);
    let mut votes = BTreeMap::new();
    for e in Emotion::ALL {
        let n = if gold.contains(e) {
            rng.gen_range(need..=annotators)
        } else if need > 0 {
            rng.gen_range(0..need)
        } else {
            0
        };
        if n > 0 {
            votes.insert(e, n);
        }
    }
    votes
}

/// Generates a corpus; identical configs give identical output.
pub fn generate(config: &SynthConfig) -> Result<SynthBundle, String> {
    if config.stories == 0 || config.lines == 0 || config.annotators == 0 {
        return Err("stories, lines and annotators must all be positive".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let aggregation = Aggregation::Majority;
    let mut used_texts: HashSet<String> = HashSet::new();
    let mut features = FeatureTable::default();
    let mut corpus = Corpus {
        aggregation,
        ..Default::default()
    };
    let mut expected_resolved = BTreeMap::new();
    let mut graphs = Vec::new();
    let mut truth = Vec::new();

    for s in 0..config.stories {
        let story_id = format!("syn{s:03}");
        let male = MALE.choose(&mut rng).expect("names").to_string();
        let female = FEMALE.choose(&mut rng).expect("names").to_string();
        let group = GROUPS.choose(&mut rng).expect("names").to_string();
        let cast = Cast {
            names: [male.clone(), female.clone(), group.clone()],
            pronouns: [["he", "him", "his"], ["she", "her", "her"], ["they", "", ""]],
        };
        features.insert_for_story(
            &story_id,
            &male,
            EntityFeatures {
                gender: Some(Gender::Masculine),
                number: Some(Number::Singular),
            },
        );
        features.insert_for_story(
            &story_id,
            &female,
            EntityFeatures {
                gender: Some(Gender::Feminine),
                number: Some(Number::Singular),
            },
        );
        features.insert_for_story(
            &story_id,
            &group,
            EntityFeatures {
                gender: None,
                number: Some(Number::Plural),
            },
        );

        let mut lines = Vec::new();
        let mut mentioned = [false; 3];
        let mut annotations = Vec::new();
        for t in 0..config.lines {
            let mut attempts = 0;
            let (raw, resolved, graph, tmpl) = loop {
                attempts += 1;
                if attempts > 200 {
                    return Err(format!("could not draw a fresh sentence for {story_id}:{t}"));
                }
                let a = rng.gen_range(0..3);
                let b = (a + rng.gen_range(1..3)) % 3;
                let kind = rng.gen_range(0..8);
                let tmpl = template(&mut rng, kind, a, b, a == 0);
                let pronoun_ok = rng.gen_bool(0.5);
                let seen = mentioned;
                let use_pronoun = move |who: usize| pronoun_ok && seen[who];
                let (raw, resolved, graph) = render(&tmpl, &cast, &use_pronoun, format!("{story_id}:{t}"));
                if used_texts.contains(&raw) || used_texts.contains(&resolved) {
                    continue;
                }
                break (raw, resolved, graph, tmpl);
            };
            used_texts.insert(raw.clone());
            used_texts.insert(resolved.clone());
            mentioned[tmpl.actor] = true;
            if let Some(o) = tmpl.object {
                mentioned[o] = true;
            }
            let mut roles: [Option<Role>; 3] = [None; 3];
            roles[tmpl.actor] = Some(Role::Actor);
            if let Some(o) = tmpl.object {
                roles[o] = Some(Role::Object);
            }
            for (who, name) in cast.names.iter().enumerate() {
                let gold = match roles[who] {
                    Some(_) => random_gold(&mut rng, 3),
                    None => random_gold(&mut rng, 2),
                };
                let votes = votes_for(&mut rng, gold, config.annotators, aggregation);
                annotations.push(GoldAnnotation {
                    story_id: story_id.clone(),
                    line_index: t,
                    character: name.clone(),
                    annotators: config.annotators,
                    gold: aggregation.aggregate(&votes, config.annotators),
                    votes,
                });
                if let Some(role) = roles[who] {
                    truth.push(RoleAssignment {
                        story_id: story_id.clone(),
                        line_index: t,
                        character: name.clone(),
                        role,
                    });
                }
            }
            expected_resolved.insert((story_id.clone(), t), resolved);
            graphs.push(graph);
            lines.push(EventLine::new(t, raw));
        }
        let mut characters = cast.names.to_vec();
        characters.sort();
        annotations.sort_by(|a, b| (a.line_index, &a.character).cmp(&(b.line_index, &b.character)));
        corpus.annotations.extend(annotations);
        corpus.stories.push(Story {
            story_id,
            split: Some(
                if config.test_every > 0 && s % config.test_every == config.test_every - 1 {
                    "test"
                } else {
                    "train"
                }
                .into(),
            ),
            characters,
            lines,
        });
    }
    truth.sort();

    let mut resolved_corpus = corpus.clone();
    for story in &mut resolved_corpus.stories {
        for line in &mut story.lines {
            line.resolved_text = expected_resolved.get(&(story.story_id.clone(), line.index)).cloned();
        }
    }
    let oracle = SyntheticOracle::from_truth(&resolved_corpus, &truth, EmotionDictionary::default())?;
    Ok(SynthBundle {
        config: config.clone(),
        corpus,
        expected_resolved,
        features,
        graphs,
        truth,
        oracle,
    })
}

impl SynthBundle {
    /// Role gold over every annotated pair, in the `story:line<TAB>name<TAB>role`
    /// layout read by [`crate::rolelab::read_role_gold`].
    pub fn role_gold_tsv(&self) -> String {
        let roles: BTreeMap<_, _> = self.truth.iter().map(|a| (a.key(), a.role)).collect();
        let mut out = String::from("# sentence\tcharacter\trole\n");
        for ann in &self.corpus.annotations {
            let label = roles
                .get(&ann.key())
                .map(|r| r.to_string())
                .unwrap_or_else(|| "absent".into());
            out.push_str(&format!(
                "{}:{}\t{}\t{label}\n",
                ann.story_id, ann.line_index, ann.character
            ));
        }
        out
    }

    /// Writes `corpus.jsonl`, `release.csv`, `features.jsonl`,
    /// `parses.conllu`, `roles.tsv` and `oracle.jsonl` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), RecordError> {
        let io = |source| RecordError::Io {
            path: dir.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        records::write_file(&dir.join("corpus.jsonl"), &self.corpus.to_bytes())?;
        crate::corpus::write_release_csv(&self.corpus, &dir.join("release.csv"))
            .map_err(|e| RecordError::malformed(&dir.join("release.csv"), 0, e.to_string()))?;
        records::write_file(&dir.join("features.jsonl"), &self.features.to_bytes())?;
        records::write_file(&dir.join("parses.conllu"), write_conllu(&self.graphs).as_bytes())?;
        records::write_file(&dir.join("roles.tsv"), self.role_gold_tsv().as_bytes())?;
        records::write_file(&dir.join("oracle.jsonl"), &self.oracle.to_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_corpus;

    #[test]
    fn deterministic_and_valid() {
        let cfg = SynthConfig {
            stories: 8,
            ..Default::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.corpus.stories.len(), 8);
        assert!(a.corpus.stories.iter().all(|s| s.lines.len() == 5));
        assert!(
            validate_corpus(&a.corpus).is_clean(),
            "{:?}",
            validate_corpus(&a.corpus)
        );
        assert_eq!(a.graphs.len(), 40);
        assert!(a.graphs.iter().all(|g| g.check().is_ok()));
    }

    #[test]
    fn one_actor_per_line() {
        let b = generate(&SynthConfig::default()).unwrap();
        let mut per_line: BTreeMap<(String, usize, Role), usize> = BTreeMap::new();
        for a in &b.truth {
            *per_line.entry((a.story_id.clone(), a.line_index, a.role)).or_default() += 1;
        }
        assert!(per_line.values().all(|&n| n == 1));
        assert_eq!(per_line.keys().filter(|k| k.2 == Role::Actor).count(), 250);
    }

    #[test]
    fn pronouns_appear() {
        let b = generate(&SynthConfig::default()).unwrap();
        let with_pronoun = b
            .corpus
            .stories
            .iter()
            .flat_map(|s| &s.lines)
            .filter(|l| {
                l.text
                    .split(' ')
                    .any(|w| ["He", "She", "They", "him", "her", "his"].contains(&w))
            })
            .count();
        assert!(with_pronoun > 20, "{with_pronoun}");
    }
}
