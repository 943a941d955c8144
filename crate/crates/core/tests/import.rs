use std::collections::BTreeMap;
use std::path::PathBuf;

use charet::corpus::{import_corpus, validate_corpus, Aggregation, ImportConfig};
use charet::emotion::{Emotion, EmotionSet};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/two_stories.csv")
}

fn set(es: &[Emotion]) -> EmotionSet {
    es.iter().copied().collect()
}

#[test]
fn two_story_release_imports_field_by_field() {
    let mut config = ImportConfig::default();
    config.columns.annotator = Some("workerid".into());
    let out = import_corpus(&[fixture()], &config).unwrap();
    assert!(out.rejected.is_empty());
    let c = &out.corpus;
    assert!(validate_corpus(c).is_clean());
    assert_eq!(c.stories.len(), 2);
    assert_eq!(c.line_count(), 10);

    let a1 = c.story("a1").unwrap();
    assert_eq!(a1.characters, vec!["Mary", "Tom"]);
    assert_eq!(a1.split, None);
    let texts: Vec<&str> = a1.lines.iter().map(|l| l.text.as_str()).collect();
    assert_eq!(
        texts,
        [
            "Tom lost his keys.",
            "He asked Mary for help.",
            "She found the keys under the couch.",
            "Tom thanked her.",
            "They went out for dinner.",
        ]
    );
    assert!(a1
        .lines
        .iter()
        .enumerate()
        .all(|(i, l)| l.index == i && l.resolved_text.is_none()));
    let b2 = c.story("b2").unwrap();
    assert_eq!(b2.characters, vec!["Anna"]);
    assert_eq!(b2.lines[2].text, "A cat was sitting on the table.");

    assert_eq!(c.annotations.len(), 11);
    let find = |s: &str, l: usize, ch: &str| {
        c.annotations
            .iter()
            .find(|a| a.story_id == s && a.line_index == l && a.character == ch)
            .unwrap_or_else(|| panic!("missing {s}:{l}/{ch}"))
    };

    // three annotators, majority needs two votes
    let tom0 = find("a1", 0, "Tom");
    assert_eq!(tom0.annotators, 3);
    assert_eq!(
        tom0.votes,
        BTreeMap::from([(Emotion::Surprise, 1), (Emotion::Sadness, 2), (Emotion::Anger, 2)])
    );
    assert_eq!(tom0.gold, set(&[Emotion::Sadness, Emotion::Anger]));

    let tom1 = find("a1", 1, "Tom");
    assert_eq!((tom1.annotators, tom1.votes.len()), (1, 0));
    assert!(tom1.gold.is_empty());

    // two annotators, majority needs one vote
    let mary1 = find("a1", 1, "Mary");
    assert_eq!(mary1.annotators, 2);
    assert_eq!(mary1.votes, BTreeMap::from([(Emotion::Joy, 1), (Emotion::Trust, 2)]));
    assert_eq!(mary1.gold, set(&[Emotion::Joy, Emotion::Trust]));

    assert_eq!(find("a1", 2, "Mary").gold, set(&[Emotion::Joy]));
    assert_eq!(find("a1", 3, "Tom").gold, set(&[Emotion::Joy, Emotion::Trust]));
    assert_eq!(find("a1", 4, "Tom").gold, set(&[Emotion::Joy, Emotion::Anticipation]));
    assert_eq!(find("b2", 0, "Anna").gold, set(&[Emotion::Surprise, Emotion::Fear]));
    assert_eq!(find("b2", 4, "Anna").gold, set(&[Emotion::Joy, Emotion::Trust]));
}

#[test]
fn aggregation_rules_change_only_the_gold_sets() {
    let base = |agg| {
        let mut config = ImportConfig {
            aggregation: agg,
            ..ImportConfig::default()
        };
        config.columns.annotator = Some("workerid".into());
        import_corpus(&[fixture()], &config).unwrap().corpus
    };
    let any = base(Aggregation::Any);
    let all = base(Aggregation::All);
    let tom0 = |c: &charet::corpus::Corpus| {
        c.annotations
            .iter()
            .find(|a| a.story_id == "a1" && a.line_index == 0)
            .unwrap()
            .gold
    };
    assert_eq!(tom0(&any), set(&[Emotion::Surprise, Emotion::Sadness, Emotion::Anger]));
    assert_eq!(tom0(&all), EmotionSet::empty());
    assert_eq!(any.stories, all.stories);
}

#[test]
fn higher_intensity_floor_drops_weak_votes() {
    let mut config = ImportConfig {
        min_intensity: 2,
        ..ImportConfig::default()
    };
    config.columns.annotator = Some("workerid".into());
    let c = import_corpus(&[fixture()], &config).unwrap().corpus;
    let tom0 = c
        .annotations
        .iter()
        .find(|a| a.story_id == "a1" && a.line_index == 0)
        .unwrap();
    assert_eq!(tom0.votes.get(&Emotion::Surprise), None);
}

#[test]
fn import_is_deterministic() {
    let mut config = ImportConfig::default();
    config.columns.annotator = Some("workerid".into());
    let a = import_corpus(&[fixture()], &config).unwrap().corpus.to_bytes();
    let b = import_corpus(&[fixture()], &config).unwrap().corpus.to_bytes();
    assert_eq!(a, b);
}
