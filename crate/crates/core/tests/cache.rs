use std::sync::Arc;
use std::thread;

use charet::backend::{Answer, CacheKey, Dimension, InferenceCache, Query};

fn key(worker: usize, i: usize) -> CacheKey {
    CacheKey {
        backend: "stress/1".into(),
        event: format!("worker {worker} event {}", i / 2),
        dimension: Dimension::ALL[i % Dimension::ALL.len()],
        query: if i.is_multiple_of(2) {
            Query::Generate
        } else {
            Query::WordProb(format!("w{i}"))
        },
    }
}

fn answer(worker: usize, i: usize) -> Answer {
    if i.is_multiple_of(2) {
        Answer::GeneratedText(format!("text {worker}/{i}"))
    } else {
        Answer::Prob(1.0 / (1 + worker * 1000 + i) as f64)
    }
}

#[test]
fn parallel_workers_on_disjoint_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let cache = Arc::new(InferenceCache::open(&path).unwrap());
    const WORKERS: usize = 8;
    const PER: usize = 200;
    let handles: Vec<_> = (0..WORKERS)
        .map(|w| {
            let cache = cache.clone();
            thread::spawn(move || {
                for i in 0..PER {
                    cache.put(key(w, i), answer(w, i)).unwrap();
                    // read back an earlier key in a fixed schedule
                    let j = (i * 7) % (i + 1);
                    assert_eq!(cache.get(&key(w, j)), Some(answer(w, j)));
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(cache.len(), WORKERS * PER);
    drop(cache);

    let reopened = InferenceCache::open(&path).unwrap();
    assert_eq!(reopened.len(), WORKERS * PER);
    for w in 0..WORKERS {
        for i in 0..PER {
            assert_eq!(reopened.get(&key(w, i)), Some(answer(w, i)));
        }
    }
}
