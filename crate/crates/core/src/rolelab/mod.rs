//! Character role labeling over Universal Dependencies parses.
//!
//! Predicates and their arguments are read off the dependency graph with a
//! small set of non-lexicalized patterns; a relation table then maps each
//! argument relation to [`Role::Actor`] or [`Role::Object`]. Only tags,
//! relation labels and tree shape drive the patterns. Surface forms are
//! consulted only to find where each character is mentioned.
//!
//! | relation     | role   |
//! |--------------|--------|
//! | `nsubj`      | actor  |
//! | `obl:agent`  | actor  |
//! | `obj`        | object |
//! | `iobj`       | object |
//! | `nsubj:pass` | object |
//! | `obl`        | object |

mod conllu;
mod eval;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use std::path::Path;

use crate::corpus::{Corpus, PairKey};
use crate::records::{self, ArtifactHeader, RecordError, RecordWriter};

pub use conllu::{parse_conllu, parse_conllu_file, write_conllu, ConlluError, DepGraph, Token};
pub use eval::{evaluate_roles, read_role_gold, RoleEvaluation, RoleGold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Actor,
    Object,
}

impl Role {
    pub const BOTH: [Role; 2] = [Role::Actor, Role::Object];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Actor => "actor",
            Role::Object => "object",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "actor" => Ok(Role::Actor),
            "object" => Ok(Role::Object),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum RoleError {
    #[error("pattern table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error("sentence {index} has no usable `story:line` sent_id")]
    MissingSentId { index: usize },
    #[error("sentence `{sent_id}` refers to story `{story}` which has no roster")]
    UnknownStory { sent_id: String, story: String },
    #[error("predicted and gold role keys do not line up: {0}")]
    KeyMismatch(String),
    #[error("{path}:{line}: {message}")]
    Gold { path: String, line: usize, message: String },
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// Relation label -> role mapping used to classify arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternTable {
    relations: BTreeMap<String, Role>,
}

impl Default for PatternTable {
    fn default() -> Self {
        let relations = [
            ("nsubj", Role::Actor),
            ("obl:agent", Role::Actor),
            ("obj", Role::Object),
            ("iobj", Role::Object),
            ("nsubj:pass", Role::Object),
            ("obl", Role::Object),
        ]
        .into_iter()
        .map(|(r, role)| (r.to_string(), role))
        .collect();
        PatternTable { relations }
    }
}

impl PatternTable {
    /// Parses `relation role` lines; `#` starts a comment. Entries extend
    /// and override the default table.
    pub fn parse(text: &str) -> Result<Self, RoleError> {
        let mut table = PatternTable::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(rel), Some(role), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(RoleError::Table {
                    line: idx + 1,
                    message: format!("expected `relation role`, got `{line}`"),
                });
            };
            let role = role
                .parse()
                .map_err(|message| RoleError::Table { line: idx + 1, message })?;
            table.relations.insert(rel.to_string(), role);
        }
        Ok(table)
    }

    /// Role for a relation label; subtypes fall back to their base label
    /// unless listed themselves.
    pub fn role_for(&self, deprel: &str) -> Option<Role> {
        self.relations.get(deprel).copied().or_else(|| {
            let (base, _) = deprel.split_once(':')?;
            self.relations.get(base).copied()
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, Role)> {
        self.relations.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn to_text(&self) -> String {
        self.entries().map(|(r, role)| format!("{r}\t{role}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Argument {
    /// Token id of the argument head.
    pub token: usize,
    pub relation: String,
    /// Reached through a coordination or subject-sharing rule rather than
    /// as a direct dependent.
    pub inherited: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub head: usize,
    pub arguments: Vec<Argument>,
}

fn is_subject(rel: &str) -> bool {
    rel == "nsubj" || rel.starts_with("nsubj:")
}

fn is_predicate(graph: &DepGraph, token: &Token) -> bool {
    let verbal = token.upos == "VERB" && !matches!(token.base_deprel(), "aux" | "cop");
    verbal
        || graph
            .dependents(token.id)
            .any(|d| d.deprel == "cop" || is_subject(&d.deprel))
}

fn direct_arguments(graph: &DepGraph, head: usize, table: &PatternTable) -> Vec<Argument> {
    let mut args = Vec::new();
    for d in graph.dependents(head) {
        if table.role_for(&d.deprel).is_none() {
            continue;
        }
        args.push(Argument {
            token: d.id,
            relation: d.deprel.clone(),
            inherited: false,
        });
        // every conjunct of a coordinated argument fills the same slot
        let mut stack = vec![d.id];
        while let Some(id) = stack.pop() {
            for c in graph.dependents(id).filter(|c| c.deprel == "conj") {
                args.push(Argument {
                    token: c.id,
                    relation: d.deprel.clone(),
                    inherited: true,
                });
                stack.push(c.id);
            }
        }
    }
    args
}

/// Extracts predicates and their core/oblique arguments.
///
/// A predicate is a non-auxiliary verb or any token carrying a copula or
/// subject dependent. Predicates attached by `xcomp`, `ccomp` or `conj` to
/// another predicate share its subject when they have none of their own.
pub fn extract_predicates(graph: &DepGraph, table: &PatternTable) -> Vec<Predicate> {
    let heads: Vec<usize> = graph
        .tokens
        .iter()
        .filter(|t| is_predicate(graph, t))
        .map(|t| t.id)
        .collect();
    let mut own: BTreeMap<usize, Vec<Argument>> =
        heads.iter().map(|&h| (h, direct_arguments(graph, h, table))).collect();

    // Subject sharing walks from the top of the tree down, so process heads
    // in order of depth.
    let depth = |mut id: usize| {
        let mut d = 0;
        while id != 0 {
            id = graph.token(id).head;
            d += 1;
        }
        d
    };
    let mut ordered = heads.clone();
    ordered.sort_by_key(|&h| (depth(h), h));
    for h in ordered {
        let tok = graph.token(h);
        let shares = matches!(tok.base_deprel(), "xcomp" | "ccomp" | "conj");
        if !shares || tok.head == 0 || !own.contains_key(&tok.head) {
            continue;
        }
        if own[&h].iter().any(|a| is_subject(&a.relation)) {
            continue;
        }
        let inherited: Vec<Argument> = own[&tok.head]
            .iter()
            .filter(|a| is_subject(&a.relation))
            .map(|a| Argument {
                inherited: true,
                ..a.clone()
            })
            .collect();
        own.get_mut(&h).expect("head present").extend(inherited);
    }

    heads
        .into_iter()
        .map(|h| Predicate {
            head: h,
            arguments: own.remove(&h).unwrap_or_default(),
        })
        .collect()
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

fn strip_possessive(s: &str) -> &str {
    s.strip_suffix("'s")
        .or_else(|| s.strip_suffix("’s"))
        .or_else(|| s.strip_suffix('\''))
        .unwrap_or(s)
}

/// Token spans (inclusive ids) whose concatenated forms spell `name`,
/// case-insensitively and ignoring a trailing possessive.
pub fn character_spans(graph: &DepGraph, name: &str) -> Vec<(usize, usize)> {
    let target = normalize(name);
    if target.is_empty() {
        return Vec::new();
    }
    let mut spans = Vec::new();
    for start in 0..graph.tokens.len() {
        let mut acc = String::new();
        for end in start..graph.tokens.len() {
            acc.push_str(&normalize(&graph.tokens[end].form));
            if strip_possessive(&acc) == target || acc == target {
                spans.push((start + 1, end + 1));
                break;
            }
            if acc.len() > target.len() + 2 {
                break;
            }
        }
    }
    spans
}

/// Role of each roster character in one sentence; Actor wins over Object.
pub fn roles_in_graph(graph: &DepGraph, roster: &[String], table: &PatternTable) -> BTreeMap<String, Role> {
    let predicates = extract_predicates(graph, table);
    let mut out = BTreeMap::new();
    for name in roster {
        let spans = character_spans(graph, name);
        let mut best: Option<Role> = None;
        for p in &predicates {
            for a in &p.arguments {
                if !spans.iter().any(|&(s, e)| (s..=e).contains(&a.token)) {
                    continue;
                }
                let role = table.role_for(&a.relation).expect("arguments come from the table");
                best = Some(match (best, role) {
                    (Some(Role::Actor), _) | (_, Role::Actor) => Role::Actor,
                    _ => Role::Object,
                });
            }
        }
        if let Some(role) = best {
            out.insert(name.clone(), role);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub story_id: String,
    pub line_index: usize,
    pub character: String,
    pub role: Role,
}

impl RoleAssignment {
    pub fn key(&self) -> PairKey {
        PairKey::new(self.story_id.clone(), self.line_index, self.character.clone())
    }
}

/// Character rosters keyed by story id.
pub type Rosters = BTreeMap<String, Vec<String>>;

pub fn rosters(corpus: &Corpus) -> Rosters {
    corpus
        .stories
        .iter()
        .map(|s| (s.story_id.clone(), s.characters.clone()))
        .collect()
}

/// Assigns roles for every sentence, keyed by the `story:line` sentence id.
///
/// Several sentences with the same id are merged (a line may hold more than
/// one sentence). The result is sorted by story, line and character.
pub fn assign_roles(
    graphs: &[DepGraph],
    rosters: &Rosters,
    table: &PatternTable,
) -> Result<Vec<RoleAssignment>, RoleError> {
    let mut merged: BTreeMap<PairKey, Role> = BTreeMap::new();
    for (index, g) in graphs.iter().enumerate() {
        let (story, line) = g.story_line().ok_or(RoleError::MissingSentId { index })?;
        let roster = rosters.get(&story).ok_or_else(|| RoleError::UnknownStory {
            sent_id: g.sent_id.clone().unwrap_or_default(),
            story: story.clone(),
        })?;
        for (character, role) in roles_in_graph(g, roster, table) {
            let slot = merged
                .entry(PairKey::new(story.clone(), line, character))
                .or_insert(role);
            if role == Role::Actor {
                *slot = Role::Actor;
            }
        }
    }
    Ok(merged
        .into_iter()
        .map(|(k, role)| RoleAssignment {
            story_id: k.story_id,
            line_index: k.line,
            character: k.character,
            role,
        })
        .collect())
}

/// Serializes assignments as a record file; the header names the pattern
/// table that produced them.
pub fn roles_to_bytes(assignments: &[RoleAssignment], table: &PatternTable) -> Vec<u8> {
    let header = ArtifactHeader::new("roles", serde_json::json!({ "patterns": table.to_text() }));
    let mut w = RecordWriter::new(Vec::new());
    w.header(&header).expect("writing to memory");
    for a in assignments {
        w.record("role", a).expect("writing to memory");
    }
    w.finish().expect("writing to memory")
}

pub fn read_roles(path: &Path) -> Result<Vec<RoleAssignment>, RoleError> {
    let (_, body) = records::split_header(records::read_record_file(path)?, path)?;
    let mut out = Vec::with_capacity(body.len());
    for r in body {
        if r.kind != "role" {
            return Err(RecordError::malformed(path, r.line, format!("unexpected `{}` record", r.kind)).into());
        }
        out.push(r.decode(path)?);
    }
    Ok(out)
}

/// Role lookup keyed by pair.
pub fn role_map(assignments: &[RoleAssignment]) -> BTreeMap<PairKey, Role> {
    assignments.iter().map(|a| (a.key(), a.role)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn graph(rows: &[(&str, &str, usize, &str)]) -> DepGraph {
        let mut text = String::from("# sent_id = s:0\n");
        for (i, (form, upos, head, rel)) in rows.iter().enumerate() {
            text.push_str(&format!(
                "{}\t{form}\t{form}\t{upos}\t_\t_\t{head}\t{rel}\t_\t_\n",
                i + 1
            ));
        }
        parse_conllu(text.as_bytes(), Path::new("t")).unwrap().remove(0)
    }

    fn roster(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn bought() -> DepGraph {
        graph(&[
            ("Tom", "PROPN", 2, "nsubj"),
            ("bought", "VERB", 0, "root"),
            ("coffee", "NOUN", 2, "obj"),
            (".", "PUNCT", 2, "punct"),
        ])
    }

    fn praised() -> DepGraph {
        graph(&[
            ("Tom", "PROPN", 3, "nsubj:pass"),
            ("was", "AUX", 3, "aux:pass"),
            ("praised", "VERB", 0, "root"),
            ("by", "ADP", 5, "case"),
            ("People", "NOUN", 3, "obl:agent"),
            (".", "PUNCT", 3, "punct"),
        ])
    }

    #[test]
    fn transitive_predicate() {
        let preds = extract_predicates(&bought(), &PatternTable::default());
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].head, 2);
        let args: Vec<(usize, &str)> = preds[0]
            .arguments
            .iter()
            .map(|a| (a.token, a.relation.as_str()))
            .collect();
        assert_eq!(args, vec![(1, "nsubj"), (3, "obj")]);
    }

    #[test]
    fn passive_predicate() {
        let preds = extract_predicates(&praised(), &PatternTable::default());
        assert_eq!(preds.len(), 1);
        let args: Vec<(usize, &str)> = preds[0]
            .arguments
            .iter()
            .map(|a| (a.token, a.relation.as_str()))
            .collect();
        assert_eq!(args, vec![(1, "nsubj:pass"), (5, "obl:agent")]);
    }

    #[test]
    fn expletive_has_no_arguments() {
        let g = graph(&[
            ("It", "PRON", 2, "expl"),
            ("rained", "VERB", 0, "root"),
            (".", "PUNCT", 2, "punct"),
        ]);
        let preds = extract_predicates(&g, &PatternTable::default());
        assert_eq!(preds.len(), 1);
        assert!(preds[0].arguments.is_empty());
    }

    #[test]
    fn roles_from_examples() {
        let t = PatternTable::default();
        let r = roles_in_graph(&bought(), &roster(&["Tom", "People"]), &t);
        assert_eq!(
            r.into_iter().collect::<Vec<_>>(),
            vec![("Tom".to_string(), Role::Actor)]
        );

        let burned = graph(&[
            ("The", "DET", 2, "det"),
            ("coffee", "NOUN", 3, "nsubj"),
            ("burned", "VERB", 0, "root"),
            ("Tom", "PROPN", 3, "obj"),
        ]);
        assert_eq!(roles_in_graph(&burned, &roster(&["Tom"]), &t)["Tom"], Role::Object);

        let r = roles_in_graph(&praised(), &roster(&["Tom", "People"]), &t);
        assert_eq!(r["Tom"], Role::Object);
        assert_eq!(r["People"], Role::Actor);
    }

    #[test]
    fn multiword_and_possessive_matching() {
        let g = graph(&[
            ("Mr.", "PROPN", 2, "compound"),
            ("Smith's", "PROPN", 3, "nmod:poss"),
            ("dog", "NOUN", 4, "nsubj"),
            ("ran", "VERB", 0, "root"),
        ]);
        assert_eq!(character_spans(&g, "Mr. Smith"), vec![(1, 2)]);
        assert!(roles_in_graph(&g, &roster(&["Mr. Smith"]), &PatternTable::default()).is_empty());
    }

    #[test]
    fn table_parsing_and_overrides() {
        let t = PatternTable::parse("# custom\nobl object\nnmod:poss actor  # odd but allowed\n").unwrap();
        assert_eq!(t.role_for("nmod:poss"), Some(Role::Actor));
        assert_eq!(t.role_for("obl:tmod"), Some(Role::Object));
        assert_eq!(t.role_for("nsubj:pass"), Some(Role::Object));
        assert_eq!(t.role_for("expl"), None);
        assert!(PatternTable::parse("nsubj\n").is_err());
        assert!(PatternTable::parse("nsubj hero\n").is_err());
        assert_eq!(PatternTable::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn missing_sent_id_is_an_error() {
        let mut g = bought();
        g.sent_id = None;
        let r: Rosters = [("s".to_string(), roster(&["Tom"]))].into_iter().collect();
        assert!(matches!(
            assign_roles(&[g], &r, &PatternTable::default()),
            Err(RoleError::MissingSentId { index: 0 })
        ));
    }
}
