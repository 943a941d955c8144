//! Replayable answers from a file, and a recorder that produces such files.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;
use std::sync::Mutex;

use super::{check_event, BackendError, CommonsenseBackend, Dimension, InferenceRecord, Query};
use crate::records::{self, ArtifactHeader, RecordError, RecordWriter};

/// Serves stored [`InferenceRecord`]s; anything not stored is a miss.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    identity: String,
    records: HashMap<(String, Dimension), InferenceRecord>,
}

impl FixtureBackend {
    pub fn new(identity: impl Into<String>) -> Self {
        FixtureBackend {
            identity: identity.into(),
            records: HashMap::new(),
        }
    }

    /// Merges `record` into the store. Conflicting values for the same
    /// query are rejected.
    pub fn insert(&mut self, record: InferenceRecord) -> Result<(), String> {
        record.check()?;
        let key = (record.event.clone(), record.dimension);
        let Some(slot) = self.records.get_mut(&key) else {
            self.records.insert(key, record);
            return Ok(());
        };
        if let Some(text) = record.generated_text {
            match &slot.generated_text {
                Some(old) if *old != text => {
                    return Err(format!(
                        "conflicting generations for ({:?}, {})",
                        record.event, record.dimension
                    ))
                }
                _ => slot.generated_text = Some(text),
            }
        }
        for (word, p) in record.word_probs {
            match slot.word_probs.get(&word) {
                Some(old) if old.to_bits() != p.to_bits() => {
                    return Err(format!(
                        "conflicting probabilities for `{word}` on ({:?}, {})",
                        record.event, record.dimension
                    ))
                }
                _ => {
                    slot.word_probs.insert(word, p);
                }
            }
        }
        slot.check()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Stored records in (event, dimension) order.
    pub fn records(&self) -> Vec<&InferenceRecord> {
        let mut out: Vec<&InferenceRecord> = self.records.values().collect();
        out.sort_by(|a, b| (&a.event, a.dimension).cmp(&(&b.event, b.dimension)));
        out
    }

    /// Reads `inference` records. A leading header may name the identity
    /// under `settings.identity`; otherwise `fixture:<file name>` is used.
    pub fn read<R: BufRead>(reader: R, path: &Path) -> Result<Self, BackendError> {
        let (header, body) = records::split_header(records::read_records(reader, path)?, path)?;
        let identity = header
            .and_then(|h| h.settings.get("identity").and_then(|v| v.as_str()).map(str::to_string))
            .unwrap_or_else(|| {
                format!(
                    "fixture:{}",
                    path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
                )
            });
        let mut fixture = FixtureBackend::new(identity);
        for raw in body {
            if raw.kind != "inference" {
                return Err(
                    RecordError::malformed(path, raw.line, format!("unexpected record kind `{}`", raw.kind)).into(),
                );
            }
            let record: InferenceRecord = raw.decode(path)?;
            fixture
                .insert(record)
                .map_err(|m| RecordError::malformed(path, raw.line, m))?;
        }
        Ok(fixture)
    }

    pub fn read_file(path: &Path) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path).map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read(std::io::BufReader::new(file), path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = RecordWriter::new(Vec::new());
        let header = ArtifactHeader::new("fixture", serde_json::json!({ "identity": self.identity }));
        w.header(&header).expect("write to memory");
        for r in self.records() {
            w.record("inference", r).expect("write to memory");
        }
        w.finish().expect("write to memory")
    }

    pub fn write(&self, path: &Path) -> Result<(), BackendError> {
        Ok(records::write_file(path, &self.to_bytes())?)
    }

    fn miss(event: &str, dimension: Dimension, query: Query) -> BackendError {
        BackendError::Miss {
            event: event.to_string(),
            dimension,
            query,
        }
    }
}

impl CommonsenseBackend for FixtureBackend {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn generate(&self, event: &str, dimension: Dimension) -> Result<String, BackendError> {
        check_event(event)?;
        self.records
            .get(&(event.to_string(), dimension))
            .and_then(|r| r.generated_text.clone())
            .ok_or_else(|| Self::miss(event, dimension, Query::Generate))
    }

    fn word_prob(&self, event: &str, dimension: Dimension, word: &str) -> Result<f64, BackendError> {
        check_event(event)?;
        self.records
            .get(&(event.to_string(), dimension))
            .and_then(|r| r.word_probs.get(word).copied())
            .ok_or_else(|| Self::miss(event, dimension, Query::WordProb(word.to_string())))
    }
}

/// Passes queries through and keeps every answer, so a run against any
/// backend can be replayed from a fixture.
pub struct RecordingBackend<B> {
    inner: B,
    seen: Mutex<BTreeMap<(String, Dimension), InferenceRecord>>,
}

impl<B: CommonsenseBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend {
            inner,
            seen: Mutex::new(BTreeMap::new()),
        }
    }

    fn slot<F: FnOnce(&mut InferenceRecord)>(&self, event: &str, dimension: Dimension, f: F) {
        let mut seen = self.seen.lock().expect("recorder lock");
        let rec = seen
            .entry((event.to_string(), dimension))
            .or_insert_with(|| InferenceRecord::new(event, dimension));
        f(rec);
    }

    /// A fixture holding every answer seen so far.
    pub fn to_fixture(&self) -> FixtureBackend {
        let seen = self.seen.lock().expect("recorder lock");
        let mut fixture = FixtureBackend::new(format!("replay:{}", self.inner.identity()));
        for r in seen.values() {
            fixture.insert(r.clone()).expect("recorded answers are consistent");
        }
        fixture
    }
}

impl<B: CommonsenseBackend> CommonsenseBackend for RecordingBackend<B> {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn generate(&self, event: &str, dimension: Dimension) -> Result<String, BackendError> {
        let text = self.inner.generate(event, dimension)?;
        self.slot(event, dimension, |r| r.generated_text = Some(text.clone()));
        Ok(text)
    }

    fn word_prob(&self, event: &str, dimension: Dimension, word: &str) -> Result<f64, BackendError> {
        let p = self.inner.word_prob(event, dimension, word)?;
        self.slot(event, dimension, |r| {
            r.word_probs.insert(word.to_string(), p);
        });
        Ok(p)
    }
}
