//! Persistent inference cache.
//!
//! An append-only log of one answered query per line. Each line carries the
//! backend identity and a checksum over its own content, so a damaged store
//! is reported with the offending line instead of silently replayed.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Answer, BackendError, CommonsenseBackend, Dimension, Query};
use crate::records::RecordError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub backend: String,
    pub event: String,
    pub dimension: Dimension,
    pub query: Query,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    backend: String,
    event: String,
    dimension: Dimension,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    word: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generated_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prob: Option<f64>,
}

#[derive(Serialize)]
struct Line<'a> {
    kind: &'static str,
    #[serde(flatten)]
    entry: &'a Entry,
    checksum: String,
}

#[derive(Deserialize)]
struct StoredLine {
    kind: String,
    #[serde(flatten)]
    entry: Entry,
    checksum: String,
}

fn checksum(entry: &Entry) -> String {
    let bytes = serde_json::to_vec(entry).expect("entry serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

impl Entry {
    fn from_parts(key: &CacheKey, answer: &Answer) -> Self {
        let word = match &key.query {
            Query::Generate => None,
            Query::WordProb(w) => Some(w.clone()),
        };
        let (generated_text, prob) = match answer {
            Answer::GeneratedText(t) => (Some(t.clone()), None),
            Answer::Prob(p) => (None, Some(*p)),
        };
        Entry {
            backend: key.backend.clone(),
            event: key.event.clone(),
            dimension: key.dimension,
            word,
            generated_text,
            prob,
        }
    }

    fn into_parts(self) -> Result<(CacheKey, Answer), String> {
        let (query, answer) = match (self.word, self.generated_text, self.prob) {
            (None, Some(t), None) => (Query::Generate, Answer::GeneratedText(t)),
            (Some(w), None, Some(p)) if (0.0..=1.0).contains(&p) => (Query::WordProb(w), Answer::Prob(p)),
            _ => return Err("record is neither a generation nor a word probability".into()),
        };
        Ok((
            CacheKey {
                backend: self.backend,
                event: self.event,
                dimension: self.dimension,
                query,
            },
            answer,
        ))
    }
}

struct State {
    entries: HashMap<CacheKey, Answer>,
    log: Option<File>,
}

/// Thread-safe cache; writes are serialized behind one lock.
pub struct InferenceCache {
    path: Option<PathBuf>,
    state: Mutex<State>,
}

impl InferenceCache {
    /// A cache that lives only as long as the process.
    pub fn in_memory() -> Self {
        InferenceCache {
            path: None,
            state: Mutex::new(State {
                entries: HashMap::new(),
                log: None,
            }),
        }
    }

    /// Opens (or creates) the store at `path` and loads every record.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let io_err = |source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io_err)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let integrity = |m: String| BackendError::Integrity(format!("{}:{}: {m}", path.display(), idx + 1));
                let stored: StoredLine = serde_json::from_str(&line).map_err(|e| integrity(e.to_string()))?;
                if stored.kind != "inference" {
                    return Err(integrity(format!("unexpected record kind `{}`", stored.kind)));
                }
                if checksum(&stored.entry) != stored.checksum {
                    return Err(integrity("checksum mismatch".into()));
                }
                let (key, answer) = stored.entry.into_parts().map_err(integrity)?;
                entries.insert(key, answer);
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?;
        Ok(InferenceCache {
            path: Some(path.to_path_buf()),
            state: Mutex::new(State {
                entries,
                log: Some(log),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `None` on a miss.
    pub fn get(&self, key: &CacheKey) -> Option<Answer> {
        self.state.lock().expect("cache lock").entries.get(key).cloned()
    }

    /// Stores `answer` and appends it to the log. Re-storing an identical
    /// answer writes nothing.
    pub fn put(&self, key: CacheKey, answer: Answer) -> Result<(), BackendError> {
        let mut state = self.state.lock().expect("cache lock");
        if state.entries.get(&key) == Some(&answer) {
            return Ok(());
        }
        if let Some(log) = state.log.as_mut() {
            let entry = Entry::from_parts(&key, &answer);
            let line = Line {
                kind: "inference",
                checksum: checksum(&entry),
                entry: &entry,
            };
            let mut bytes = serde_json::to_vec(&line).expect("cache line serializes");
            bytes.push(b'\n');
            log.write_all(&bytes)
                .and_then(|_| log.flush())
                .map_err(|source| RecordError::Io {
                    path: self.path.clone().unwrap_or_default(),
                    source,
                })?;
        }
        state.entries.insert(key, answer);
        Ok(())
    }
}

/// Answers from the cache when it can, otherwise asks the inner backend and
/// stores the answer.
pub struct CachedBackend<B> {
    inner: B,
    identity: String,
    cache: Arc<InferenceCache>,
}

impl<B: CommonsenseBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: Arc<InferenceCache>) -> Self {
        let identity = inner.identity();
        CachedBackend { inner, identity, cache }
    }

    pub fn cache(&self) -> &InferenceCache {
        &self.cache
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn lookup(&self, event: &str, dimension: Dimension, query: Query) -> Result<Answer, BackendError> {
        let key = CacheKey {
            backend: self.identity.clone(),
            event: event.to_string(),
            dimension,
            query,
        };
        if let Some(answer) = self.cache.get(&key) {
            return Ok(answer);
        }
        let answer = self.inner.answer(event, dimension, &key.query)?;
        self.cache.put(key, answer.clone())?;
        Ok(answer)
    }
}

impl<B: CommonsenseBackend> CommonsenseBackend for CachedBackend<B> {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn generate(&self, event: &str, dimension: Dimension) -> Result<String, BackendError> {
        match self.lookup(event, dimension, Query::Generate)? {
            Answer::GeneratedText(t) => Ok(t),
            Answer::Prob(_) => Err(BackendError::Integrity("cached generation holds a probability".into())),
        }
    }

    fn word_prob(&self, event: &str, dimension: Dimension, word: &str) -> Result<f64, BackendError> {
        match self.lookup(event, dimension, Query::WordProb(word.to_string()))? {
            Answer::Prob(p) => Ok(p),
            Answer::GeneratedText(_) => Err(BackendError::Integrity("cached probability holds text".into())),
        }
    }
}
