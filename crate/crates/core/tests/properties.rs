use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;

use charet::backend::{CachedBackend, CommonsenseBackend, Dimension, InferenceCache};
use charet::coref::{CorefResolver, EntityFeatures, FeatureTable, Gender, Number, RuleResolver};
use charet::corpus::{Aggregation, Story};
use charet::emotion::{Emotion, EmotionSet};
use charet::engine::{classify, geometric_mean, EmotionDictionary, ScoreVector, ThresholdSet};
use charet::evalkit::{count_pair, micro_metrics, ConfusionCounts};
use charet::rolelab::{assign_roles, parse_conllu_file, PatternTable, Role, Rosters};
use charet::synth::{generate, SynthConfig};

fn emotion_set() -> impl Strategy<Value = EmotionSet> {
    any::<u8>().prop_map(EmotionSet::from_bits)
}

fn permute(set: EmotionSet, perm: &[usize]) -> EmotionSet {
    set.iter()
        .map(|e| Emotion::from_index(perm[e.index()]).unwrap())
        .collect()
}

proptest! {
    #[test]
    fn adding_a_vote_never_removes_an_emotion(
        counts in proptest::collection::vec(0u32..=5, 8),
        annotators in 1u32..=5,
        which in 0usize..8,
        rule in prop_oneof![Just(Aggregation::Majority), Just(Aggregation::Any), Just(Aggregation::All)],
    ) {
        let votes: BTreeMap<Emotion, u32> = counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(i, &n)| (Emotion::from_index(i).unwrap(), n.min(annotators)))
            .collect();
        let before = rule.aggregate(&votes, annotators);
        let y = Emotion::from_index(which).unwrap();
        let mut more = votes.clone();
        let slot = more.entry(y).or_default();
        *slot = (*slot + 1).min(annotators);
        let after = rule.aggregate(&more, annotators);
        prop_assert!(before.difference(after).is_empty());
    }

    #[test]
    fn count_pair_sums_to_eight(gold in emotion_set(), pred in emotion_set()) {
        prop_assert_eq!(count_pair(gold, pred).total(), 8);
    }

    #[test]
    fn count_pair_is_invariant_under_relabeling(
        gold in emotion_set(),
        pred in emotion_set(),
        perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        prop_assert_eq!(count_pair(gold, pred), count_pair(permute(gold, &perm), permute(pred, &perm)));
    }

    #[test]
    fn micro_metrics_ignore_pair_order(
        pairs in proptest::collection::vec((emotion_set(), emotion_set()), 1..30)
            .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle())),
    ) {
        let (a, b) = pairs;
        let sum = |v: &[(EmotionSet, EmotionSet)]| v.iter().map(|&(g, p)| count_pair(g, p)).sum::<ConfusionCounts>();
        let (ca, cb) = (sum(&a), sum(&b));
        prop_assert_eq!(ca, cb);
        prop_assert_eq!(ca.total(), 8 * a.len() as u64);
        prop_assert_eq!(micro_metrics(&ca), micro_metrics(&cb));
    }

    #[test]
    fn geometric_mean_is_bounded_and_order_free(
        probs in proptest::collection::vec(1e-12f64..=1.0, 1..10).prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle())),
    ) {
        let (a, b) = probs;
        let g = geometric_mean(&a);
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().copied().fold(0.0, f64::max);
        prop_assert!(lo <= g && g <= hi);
        prop_assert!((g - geometric_mean(&b)).abs() <= 1e-12);
    }

    #[test]
    fn geometric_mean_fixed_point(p in 1e-12f64..=1.0, n in 1usize..12) {
        prop_assert!((geometric_mean(&vec![p; n]) - p).abs() <= 1e-12);
    }

    #[test]
    fn geometric_mean_rises_with_any_input(
        probs in proptest::collection::vec(1e-6f64..=0.9, 2..8),
        which in any::<proptest::sample::Index>(),
        factor in 1.01f64..1.1,
    ) {
        let i = which.index(probs.len());
        let mut up = probs.clone();
        up[i] *= factor;
        prop_assert!(geometric_mean(&up) > geometric_mean(&probs));
    }

    #[test]
    fn geometric_mean_zero_forces_zero(probs in proptest::collection::vec(0.0f64..=1.0, 1..8), at in any::<proptest::sample::Index>()) {
        let mut v = probs;
        let i = at.index(v.len());
        v[i] = 0.0;
        prop_assert_eq!(geometric_mean(&v), 0.0);
    }

    #[test]
    fn raising_thresholds_never_adds_emotions(
        scores in proptest::array::uniform8(0.0f64..=1.0),
        low in proptest::array::uniform16(0.0f64..=1.0),
        bump in proptest::array::uniform16(0.0f64..=0.5),
        actor in any::<bool>(),
    ) {
        let role = if actor { Role::Actor } else { Role::Object };
        let mut a = ThresholdSet::uniform(0.0);
        let mut b = ThresholdSet::uniform(0.0);
        for (i, e) in Emotion::ALL.iter().enumerate() {
            for r in Role::BOTH {
                let j = 2 * i + r.index();
                a.set(*e, r, low[j]);
                b.set(*e, r, (low[j] + bump[j]).min(1.0));
            }
        }
        let v = ScoreVector(scores);
        prop_assert!(classify(&v, &b, role).difference(classify(&v, &a, role)).is_empty());
    }
}

const ROSTER: [&str; 4] = ["Tom", "Mary", "Kids", "Rex"];
const VOCAB: [&str; 20] = [
    "Tom", "Mary", "Kids", "Rex", "he", "his", "him", "she", "her", "they", "it", "its", "He", "She", "saw", "went",
    "home", "the", "and", ".",
];
const TARGETS: [&str; 8] = ["he", "his", "him", "she", "her", "they", "it", "its"];

fn features() -> FeatureTable {
    let mut t = FeatureTable::default();
    let f = |g, n| EntityFeatures { gender: g, number: n };
    t.insert("Tom", f(Some(Gender::Masculine), Some(Number::Singular)));
    t.insert("Mary", f(Some(Gender::Feminine), Some(Number::Singular)));
    t.insert("Kids", f(None, Some(Number::Plural)));
    t.insert("Rex", f(Some(Gender::Neuter), Some(Number::Singular)));
    t
}

fn story_strategy() -> impl Strategy<Value = Story> {
    let line = proptest::collection::vec(proptest::sample::select(VOCAB.to_vec()), 1..9).prop_map(|w| w.join(" "));
    proptest::collection::vec(line, 1..6)
        .prop_map(|lines| Story::new("p", ROSTER.iter().map(|s| s.to_string()).collect(), lines))
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

proptest! {
    #[test]
    fn coref_is_idempotent(story in story_strategy()) {
        let r = RuleResolver::default();
        let once = r.resolve_story(&story, &features()).unwrap().story;
        let twice = r.resolve_story(&once, &features()).unwrap().story;
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn coref_only_touches_pronouns(story in story_strategy()) {
        let out = RuleResolver::default().resolve_story(&story, &features()).unwrap();
        for s in &out.substitutions {
            let text = &story.lines[s.line].text;
            prop_assert!(TARGETS.contains(&text[s.span.clone()].to_lowercase().as_str()));
            prop_assert!(ROSTER.contains(&s.antecedent.as_str()));
        }
        for (orig, res) in story.lines.iter().zip(&out.story.lines) {
            let res = res.resolved_text.as_deref().unwrap();
            let (a, b) = (words(&orig.text), words(res));
            // names are single tokens here, so token counts match
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                if x != y {
                    prop_assert!(TARGETS.contains(&x.to_lowercase().as_str()), "{} -> {}", x, y);
                    let name = y.trim_end_matches("'s");
                    prop_assert!(ROSTER.contains(&name));
                }
            }
        }
    }
}

fn conformance() -> Vec<charet::rolelab::DepGraph> {
    parse_conllu_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/conformance.conllu")).unwrap()
}

fn conformance_roster(names: Vec<String>) -> Rosters {
    BTreeMap::from([("conf".to_string(), names)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roles_ignore_content_lemmas(seed in any::<u64>()) {
        let graphs = conformance();
        let roster = conformance_roster(["Tom", "Mary", "Anna", "People", "Mr. Smith"].map(String::from).to_vec());
        let table = PatternTable::default();
        let before = assign_roles(&graphs, &roster, &table).unwrap();
        let mut scrambled = graphs.clone();
        let mut n = seed;
        for g in &mut scrambled {
            for t in &mut g.tokens {
                if matches!(t.upos.as_str(), "VERB" | "NOUN" | "ADJ" | "ADV") {
                    n = n.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let junk = format!("zq{:x}", n >> 40);
                    t.form = junk.clone();
                    t.lemma = junk;
                }
            }
        }
        prop_assert_eq!(assign_roles(&scrambled, &roster, &table).unwrap(), before);
    }

    #[test]
    fn roles_ignore_roster_order(
        names in Just(["Tom", "Mary", "Anna", "People", "Mr. Smith"].map(String::from).to_vec()).prop_shuffle(),
    ) {
        let graphs = conformance();
        let table = PatternTable::default();
        let sorted = {
            let mut v = names.clone();
            v.sort();
            v
        };
        let a = assign_roles(&graphs, &conformance_roster(names), &table).unwrap();
        let b = assign_roles(&graphs, &conformance_roster(sorted), &table).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn roles_depend_on_each_sentence_alone(keep in proptest::collection::vec(any::<bool>(), 20)) {
        let graphs = conformance();
        let roster = conformance_roster(["Tom", "Mary", "Anna", "People", "Mr. Smith"].map(String::from).to_vec());
        let table = PatternTable::default();
        let all = assign_roles(&graphs, &roster, &table).unwrap();
        let subset: Vec<_> = graphs.iter().zip(&keep).filter(|(_, &k)| k).map(|(g, _)| g.clone()).collect();
        let lines: Vec<usize> = subset.iter().map(|g| g.story_line().unwrap().1).collect();
        let want: Vec<_> = all.into_iter().filter(|a| lines.contains(&a.line_index)).collect();
        prop_assert_eq!(assign_roles(&subset, &roster, &table).unwrap(), want);
    }
}

#[test]
fn oracle_gold_words_dominate_and_cache_is_transparent() {
    let bundle = generate(&SynthConfig {
        stories: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let dict = EmotionDictionary::default();
    let cached = CachedBackend::new(&bundle.oracle, std::sync::Arc::new(InferenceCache::in_memory()));
    for story in &bundle.corpus.stories {
        for line in &story.lines {
            for role in Role::BOTH {
                let gold = bundle
                    .truth
                    .iter()
                    .filter(|a| a.story_id == story.story_id && a.line_index == line.index && a.role == role)
                    .map(|a| bundle.corpus.gold_map()[&a.key()])
                    .fold(EmotionSet::empty(), EmotionSet::union);
                let p = |e: Emotion| bundle.oracle.react_word_prob(&line.text, role, dict.word(e)).unwrap();
                let lowest_gold = gold.iter().map(p).fold(f64::INFINITY, f64::min);
                let highest_other = Emotion::ALL
                    .iter()
                    .filter(|e| !gold.contains(**e))
                    .map(|&e| p(e))
                    .fold(0.0, f64::max);
                assert!(gold.is_empty() || lowest_gold >= highest_other);
                let sum: f64 = Emotion::ALL.iter().map(|&e| p(e)).sum();
                assert!(sum <= 1.0 + 1e-6);
                for _ in 0..2 {
                    for dim in [Dimension::XIntent, Dimension::OReact] {
                        assert_eq!(
                            cached.generate(&line.text, dim).unwrap(),
                            bundle.oracle.generate(&line.text, dim).unwrap()
                        );
                    }
                    for e in Emotion::ALL {
                        let direct = p(e);
                        let via = cached.react_word_prob(&line.text, role, dict.word(e)).unwrap();
                        assert_eq!(direct.to_bits(), via.to_bits());
                    }
                }
            }
        }
    }
}
