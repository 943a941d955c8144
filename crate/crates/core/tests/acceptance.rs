//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p charet --test acceptance -- --nocapture` to see
//! the report.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use charet::backend::RecordingBackend;
use charet::coref::{resolve_corpus, RuleResolver};
use charet::corpus::{Corpus, PairKey};
use charet::emotion::{Emotion, EmotionSet};
use charet::engine::{
    build_inference_set, classify_table, default_grid, few_shot_threshold, geometric_mean, score_corpus,
    zero_shot_threshold, EmotionDictionary, FrequencyTable, Provenance, QuantileMode, ScoringOptions,
};
use charet::evalkit::{count_pair_labels, micro_metrics};
use charet::pipeline::{run, PipelineOutput, PipelineSettings};
use charet::rolelab::{assign_roles, evaluate_roles, parse_conllu_file, read_role_gold, rosters, PatternTable, Role};
use charet::synth::{generate, SynthBundle, SynthConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
/// A named check with its time budget.
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pipeline(bundle: &SynthBundle, backend: &dyn charet::backend::CommonsenseBackend, workers: usize) -> PipelineOutput {
    let settings = PipelineSettings {
        workers,
        ..PipelineSettings::default()
    };
    run(
        &bundle.corpus,
        &bundle.features,
        &RuleResolver::default(),
        &bundle.graphs,
        &PatternTable::default(),
        backend,
        &settings,
    )
    .expect("pipeline run")
}

fn bundle() -> SynthBundle {
    generate(&SynthConfig::default()).expect("synthetic corpus")
}

fn metrics_worked_example() -> Outcome {
    let c = count_pair_labels(
        &["surprise", "disgust", "anticipation"],
        &["surprise", "disgust", "trust"],
    )
    .map_err(|e| e.to_string())?;
    ensure((c.tp, c.fp, c.fn_, c.tn) == (2, 1, 1, 4), || format!("counts {c:?}"))?;
    let m = micro_metrics(&c);
    let third = 2.0 / 3.0;
    ensure(m.precision == third && m.recall == third && m.f1 == third, || {
        format!("metrics {m:?}")
    })?;
    Ok("TP=2 FP=1 FN=1 TN=4, P=R=F1=2/3".into())
}

fn geometric_mean_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..1000 {
        let n = rng.gen_range(1..=8);
        let mut set: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-9..=1.0)).collect();
        let g = geometric_mean(&set);
        let lo = set.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = set.iter().copied().fold(0.0, f64::max);
        ensure(lo <= g && g <= hi, || format!("set {i}: {g} outside [{lo}, {hi}]"))?;
        set.shuffle(&mut rng);
        let h = geometric_mean(&set);
        ensure((g - h).abs() <= 1e-12, || {
            format!("set {i}: permutation moved {g} to {h}")
        })?;
        let p = set[0];
        let fixed = geometric_mean(&vec![p; n]);
        ensure((fixed - p).abs() <= 1e-12, || {
            format!("set {i}: fixed point {p} gave {fixed}")
        })?;
    }
    Ok("1000 sets".into())
}

fn zero_shot_rate() -> Outcome {
    let table = FrequencyTable::story_commonsense();
    let rows: Vec<f64> = Emotion::ALL
        .iter()
        .flat_map(|&e| Role::BOTH.map(|r| table.get(e, r)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let q = rows[i % rows.len()];
        let n = rng.gen_range(20..=600);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(3)).collect();
        let k = zero_shot_threshold(&scores, q, QuantileMode::Complement).map_err(|e| e.to_string())?;
        let rate = scores.iter().filter(|&&s| s > k).count() as f64 / n as f64;
        let gap = (rate - q / 100.0).abs();
        ensure(gap <= 1.0 / n as f64 + 1e-12, || {
            format!("distribution {i}: q={q} n={n} rate={rate}")
        })?;
        worst = worst.max(gap * n as f64);
    }
    Ok(format!("200 distributions, worst gap {worst:.3}/N"))
}

/// Counts and compares F1 as exact fractions, scanning the grid as given.
fn brute_force(samples: &[(f64, bool)], grid: &[f64]) -> (f64, (u64, u64)) {
    let mut best: Option<(f64, (u64, u64))> = None;
    for &k in grid {
        let mut tp = 0u64;
        let mut wrong = 0u64;
        for &(s, pos) in samples {
            let fire = s > k;
            if fire && pos {
                tp += 1;
            } else if fire != pos {
                wrong += 1;
            }
        }
        let frac = if 2 * tp + wrong == 0 {
            (1, 1)
        } else {
            (2 * tp, 2 * tp + wrong)
        };
        best = match best {
            None => Some((k, frac)),
            Some((bk, bf)) => {
                let better = frac.0 * bf.1 > bf.0 * frac.1;
                let tie = frac.0 * bf.1 == bf.0 * frac.1;
                if better || (tie && k < bk) {
                    Some((k, frac))
                } else {
                    Some((bk, bf))
                }
            }
        };
    }
    best.expect("non-empty grid")
}

fn few_shot_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let base = default_grid();
    for i in 0..100 {
        let mut grid: Vec<f64> = if i % 2 == 0 {
            base.clone()
        } else {
            (0..rng.gen_range(2..8))
                .map(|_| (rng.gen_range(0..20) as f64) / 20.0)
                .collect()
        };
        grid.shuffle(&mut rng);
        let n = rng.gen_range(1..40);
        let samples: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let s = if rng.gen_bool(0.3) {
                    grid[rng.gen_range(0..grid.len())]
                } else {
                    rng.gen::<f64>().powi(2)
                };
                (s, rng.gen_bool(0.4))
            })
            .collect();
        let k = few_shot_threshold(&samples, &grid).map_err(|e| e.to_string())?;
        let (bk, (num, den)) = brute_force(&samples, &grid);
        ensure(k == bk, || format!("table {i}: calibrated {k}, brute force {bk}"))?;
        let f = charet::engine::f1_at(&samples, k);
        ensure(f == num as f64 / den as f64, || {
            format!("table {i}: F1 {f} vs {num}/{den}")
        })?;
    }
    Ok("100 tables".into())
}

fn synthetic_closure() -> Outcome {
    let b = bundle();
    let out = pipeline(&b, &b.oracle, 0);
    ensure(out.roles == b.truth, || {
        "roles differ from the generator's truth".into()
    })?;
    let f1 = out.report.overall.metrics.f1;
    ensure(f1 >= 0.95, || format!("micro F1 {f1:.4}"))?;
    Ok(format!("micro F1 {f1:.4} over {} pairs", out.report.pairs_with_role))
}

fn role_conformance() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let graphs = parse_conllu_file(&dir.join("conformance.conllu")).map_err(|e| e.to_string())?;
    let gold_path = dir.join("conformance_roles.tsv");
    let gold = read_role_gold(
        &std::fs::read_to_string(&gold_path).map_err(|e| e.to_string())?,
        &gold_path,
    )
    .map_err(|e| e.to_string())?;
    let roster: Vec<String> = ["Tom", "Mary", "Anna", "People", "Mr. Smith"]
        .map(String::from)
        .to_vec();
    let rosters = BTreeMap::from([("conf".to_string(), roster)]);
    let pred = assign_roles(&graphs, &rosters, &PatternTable::default()).map_err(|e| e.to_string())?;
    let eval = evaluate_roles(&pred, &gold).map_err(|e| e.to_string())?;
    ensure(eval.agreements == eval.total, || {
        format!("disagreements {:?}", eval.disagreements)
    })?;
    Ok(format!(
        "{}/{} labels over {} sentences",
        eval.agreements,
        eval.total,
        graphs.len()
    ))
}

fn determinism_and_replay() -> Outcome {
    let b = bundle();
    let bytes = |o: &PipelineOutput| {
        [
            o.resolved.to_bytes(),
            o.scores.to_bytes(),
            o.thresholds.to_bytes(),
            o.predictions.to_bytes(),
            o.report.to_bytes(),
        ]
    };
    let first = pipeline(&b, &b.oracle, 1);
    let second = pipeline(&b, &b.oracle, 4);
    ensure(bytes(&first) == bytes(&second), || "two runs differ".into())?;

    let recorder = RecordingBackend::new(&b.oracle);
    let recorded = pipeline(&b, &recorder, 4);
    let fixture = recorder.to_fixture();
    let replayed = pipeline(&b, &fixture, 4);
    ensure(recorded.predictions.rows == first.predictions.rows, || {
        "recording changed predictions".into()
    })?;
    ensure(replayed.predictions.rows == first.predictions.rows, || {
        "replay changed predictions".into()
    })?;
    ensure(replayed.scores.pairs == first.scores.pairs, || {
        "replay changed scores".into()
    })?;
    Ok(format!(
        "{} predictions, {} recorded answers",
        first.predictions.rows.len(),
        fixture.len()
    ))
}

fn context_causality() -> Outcome {
    let b = bundle();
    let full = pipeline(&b, &b.oracle, 0);
    let full_map = full.predictions.map();
    let dict = EmotionDictionary::default();
    let mut checked = 0;
    for story in &b.corpus.stories {
        for len in 1..=story.lines.len() {
            let prefix = Corpus {
                aggregation: b.corpus.aggregation,
                stories: vec![story.prefix(len)],
                annotations: Vec::new(),
            };
            let (resolved, _) =
                resolve_corpus(&prefix, &RuleResolver::default(), &b.features).map_err(|e| e.to_string())?;
            let graphs: Vec<_> = b
                .graphs
                .iter()
                .filter(|g| g.story_line().is_some_and(|(s, l)| s == story.story_id && l < len))
                .cloned()
                .collect();
            let roles =
                assign_roles(&graphs, &rosters(&resolved), &PatternTable::default()).map_err(|e| e.to_string())?;
            let scores = score_corpus(&resolved, &roles, &b.oracle, &dict, &ScoringOptions::default(), 1)
                .map_err(|e| e.to_string())?;
            let got = classify_table(&scores, &full.thresholds).map();
            let want: BTreeMap<PairKey, EmotionSet> = full_map
                .iter()
                .filter(|(k, _)| k.story_id == story.story_id && k.line < len)
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            ensure(got == want, || format!("story {} prefix {len} differs", story.story_id))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} prefixes"))
}

fn inference_set_shape() -> Outcome {
    let b = bundle();
    let (resolved, _) = resolve_corpus(&b.corpus, &RuleResolver::default(), &b.features).map_err(|e| e.to_string())?;
    let roles: BTreeMap<PairKey, Role> = b.truth.iter().map(|a| (a.key(), a.role)).collect();
    let options = ScoringOptions::default();
    let (mut first_line, mut with_prev) = (0, 0);
    for a in &b.truth {
        let story = resolved.story(&a.story_id).ok_or("missing story")?;
        let prev = (a.line_index > 0)
            .then(|| {
                roles
                    .get(&PairKey::new(a.story_id.clone(), a.line_index - 1, a.character.clone()))
                    .copied()
            })
            .flatten();
        let set = build_inference_set(story, a.line_index, &a.character, a.role, prev, &b.oracle, &options)
            .map_err(|e| e.to_string())?;
        let provs = set.provenances();
        let effects = provs.iter().filter(|p| p.is_effect()).count();
        let base = match a.role {
            Role::Actor => vec![Provenance::RawEvent, Provenance::XIntent, Provenance::XReactText],
            Role::Object => vec![Provenance::RawEvent, Provenance::OReactText],
        };
        ensure(provs[..base.len()] == base[..], || {
            format!("{}: base elements {provs:?}", a.key())
        })?;
        if a.line_index == 0 {
            ensure(effects == 0, || format!("{}: effect at t=0", a.key()))?;
            if a.role == Role::Actor {
                ensure(set.len() == 3, || {
                    format!("{}: t=0 actor set has {} elements", a.key(), set.len())
                })?;
            }
            first_line += 1;
        } else {
            let expect = usize::from(prev.is_some());
            ensure(effects == expect && set.len() == base.len() + expect, || {
                format!("{}: {provs:?} with previous role {prev:?}", a.key())
            })?;
            if let Some(p) = prev {
                let want = match p {
                    Role::Actor => Provenance::PrevXEffect,
                    Role::Object => Provenance::PrevOEffect,
                };
                ensure(provs.last() == Some(&want), || {
                    format!("{}: last element {provs:?}", a.key())
                })?;
                with_prev += 1;
            }
        }
    }
    Ok(format!(
        "{} sets, {first_line} at t=0, {with_prev} with a previous effect",
        b.truth.len()
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("metrics worked example", metrics_worked_example, Duration::from_secs(1)),
        (
            "geometric-mean properties",
            geometric_mean_properties,
            Duration::from_secs(10),
        ),
        ("zero-shot calibration rate", zero_shot_rate, Duration::from_secs(10)),
        ("few-shot optimality", few_shot_optimality, Duration::from_secs(30)),
        ("synthetic closure", synthetic_closure, Duration::from_secs(120)),
        ("role-labeling conformance", role_conformance, Duration::from_secs(5)),
        (
            "determinism and substitutability",
            determinism_and_replay,
            Duration::from_secs(120),
        ),
        ("context causality", context_causality, Duration::from_secs(60)),
        ("inference-set shape", inference_set_shape, Duration::from_secs(60)),
    ];
    let mut failed = Vec::new();
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({elapsed:.2?})"),
            Err(detail) => {
                println!("FAIL  {name}: {detail} ({elapsed:.2?})");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
