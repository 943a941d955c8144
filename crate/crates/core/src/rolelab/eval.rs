//! Scoring role predictions against hand labels.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::{Role, RoleAssignment, RoleError};
use crate::corpus::PairKey;

/// Gold roles over a closed key space; `None` marks a character that plays
/// no role in the line.
pub type RoleGold = BTreeMap<PairKey, Option<Role>>;

/// Reads `story:line<TAB>character<TAB>actor|object|absent` lines.
pub fn read_role_gold(text: &str, path: &Path) -> Result<RoleGold, RoleError> {
    let err = |line: usize, message: String| RoleError::Gold {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut gold = RoleGold::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [id, character, label] = cols[..] else {
            return Err(err(
                idx + 1,
                format!("expected 3 tab-separated fields, got {}", cols.len()),
            ));
        };
        let (story, line_no) = id
            .rsplit_once(':')
            .and_then(|(s, l)| Some((s, l.parse::<usize>().ok()?)))
            .ok_or_else(|| err(idx + 1, format!("bad sentence id `{id}`")))?;
        let role = match label {
            "absent" => None,
            other => Some(other.parse::<Role>().map_err(|m| err(idx + 1, m))?),
        };
        gold.insert(PairKey::new(story, line_no, character), role);
    }
    Ok(gold)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleEvaluation {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Actor-class precision; 0 when nothing was predicted Actor.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a metric had a zero denominator and was reported as 0.
    pub degenerate: bool,
    /// Keys where the three-way label (actor/object/absent) matches.
    pub agreements: usize,
    pub total: usize,
    pub disagreements: Vec<(PairKey, Option<Role>, Option<Role>)>,
}

impl RoleEvaluation {
    pub fn agreement_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.agreements as f64 / self.total as f64
        }
    }
}

/// Actor-class precision, recall and F1 of `predicted` against `gold`.
///
/// Every predicted key must belong to the gold key space; keys absent from
/// `predicted` count as "no role".
pub fn evaluate_roles(predicted: &[RoleAssignment], gold: &RoleGold) -> Result<RoleEvaluation, RoleError> {
    let pred: BTreeMap<PairKey, Role> = predicted.iter().map(|a| (a.key(), a.role)).collect();
    if let Some(k) = pred.keys().find(|k| !gold.contains_key(k)) {
        return Err(RoleError::KeyMismatch(format!(
            "predicted pair {k} is not in the gold key space"
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut agreements = 0;
    let mut disagreements = Vec::new();
    for (key, &g) in gold {
        let p = pred.get(key).copied();
        match (p == Some(Role::Actor), g == Some(Role::Actor)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
        if p == g {
            agreements += 1;
        } else {
            disagreements.push((key.clone(), g, p));
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    Ok(RoleEvaluation {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        degenerate: precision.is_none() || recall.is_none() || f1.is_none(),
        precision: precision.unwrap_or(0.0),
        recall: recall.unwrap_or(0.0),
        f1: f1.unwrap_or(0.0),
        agreements,
        total: gold.len(),
        disagreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold() -> RoleGold {
        read_role_gold(
            "# id\tcharacter\trole\ns:0\tTom\tactor\ns:0\tPeople\tabsent\ns:1\tTom\tobject\ns:1\tPeople\tactor\n",
            Path::new("g.tsv"),
        )
        .unwrap()
    }

    fn assign(story: &str, line: usize, c: &str, role: Role) -> RoleAssignment {
        RoleAssignment {
            story_id: story.into(),
            line_index: line,
            character: c.into(),
            role,
        }
    }

    #[test]
    fn identity_is_perfect() {
        let pred: Vec<RoleAssignment> = gold()
            .into_iter()
            .filter_map(|(k, r)| Some(assign(&k.story_id, k.line, &k.character, r?)))
            .collect();
        let e = evaluate_roles(&pred, &gold()).unwrap();
        assert_eq!((e.precision, e.recall, e.f1), (1.0, 1.0, 1.0));
        assert!(!e.degenerate);
        assert_eq!(e.agreement_rate(), 1.0);
    }

    #[test]
    fn empty_prediction_is_degenerate() {
        let e = evaluate_roles(&[], &gold()).unwrap();
        assert_eq!((e.precision, e.recall, e.f1), (0.0, 0.0, 0.0));
        assert!(e.degenerate);
        assert_eq!(e.false_negatives, 2);
    }

    #[test]
    fn foreign_keys_are_rejected() {
        let pred = vec![assign("other", 0, "Tom", Role::Actor)];
        assert!(matches!(evaluate_roles(&pred, &gold()), Err(RoleError::KeyMismatch(_))));
    }

    #[test]
    fn bad_gold_lines() {
        assert!(read_role_gold("s:0\tTom\n", Path::new("g")).is_err());
        assert!(read_role_gold("s:x\tTom\tactor\n", Path::new("g")).is_err());
        assert!(read_role_gold("s:0\tTom\thero\n", Path::new("g")).is_err());
    }
}
