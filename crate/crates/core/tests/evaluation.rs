//! Report counts against an independent recount over label strings.

use std::collections::BTreeSet;

use charet::coref::RuleResolver;
use charet::engine::{classify_table, ThresholdSet};
use charet::evalkit::{evaluate, EvalOptions};
use charet::pipeline::{run, PipelineSettings};
use charet::rolelab::PatternTable;
use charet::synth::{generate, SynthConfig};

const LABELS: [&str; 8] = [
    "surprise",
    "disgust",
    "sadness",
    "joy",
    "anger",
    "fear",
    "trust",
    "anticipation",
];

#[test]
fn fifty_pair_run_matches_independent_counter() {
    let bundle = generate(&SynthConfig {
        stories: 12,
        ..SynthConfig::default()
    })
    .unwrap();
    let out = run(
        &bundle.corpus,
        &bundle.features,
        &RuleResolver::default(),
        &bundle.graphs,
        &PatternTable::default(),
        &bundle.oracle,
        &PipelineSettings::default(),
    )
    .unwrap();
    // a deliberately loose threshold so the counts are not trivial
    let mut preds = classify_table(&out.scores, &ThresholdSet::uniform(1e-4));
    preds.rows.truncate(50);
    let gold = out.resolved.gold_map();
    let report = evaluate(&preds, &gold, &EvalOptions::default());

    let names = |s: charet::emotion::EmotionSet| -> BTreeSet<&'static str> {
        LABELS
            .iter()
            .copied()
            .filter(|l| s.iter().any(|e| e.name() == *l))
            .collect()
    };
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    let mut pairs = 0;
    for row in &preds.rows {
        let Some(g) = gold.get(&row.key()) else { continue };
        pairs += 1;
        let (g, p) = (names(*g), names(row.predicted));
        for l in LABELS {
            match (g.contains(l), p.contains(l)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    assert_eq!(pairs, 50);
    let c = report.overall.counts;
    assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, tn));
    assert!(fp > 0 && tp > 0);
    let m = report.overall.metrics;
    assert_eq!(m.precision, tp as f64 / (tp + fp) as f64);
    assert_eq!(m.recall, tp as f64 / (tp + fn_) as f64);
    let f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    assert!((m.f1 - f1).abs() < 1e-12);
}
