//! Line-record files: one flat JSON object per line, tagged by `kind`.
//!
//! Every artifact the pipeline persists (corpus, roles, scores, thresholds,
//! predictions, reports) uses this layout. An optional first record of kind
//! `header` echoes the settings that produced the file together with a hash
//! of those settings.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl RecordError {
    pub fn malformed(path: &Path, line: usize, message: impl Into<String>) -> Self {
        RecordError::Malformed {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

/// First record of every persisted artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub artifact: String,
    pub tool_version: String,
    pub settings: serde_json::Value,
    pub settings_hash: String,
}

impl ArtifactHeader {
    pub fn new(artifact: &str, settings: serde_json::Value) -> Self {
        let settings_hash = settings_hash(&settings);
        ArtifactHeader {
            artifact: artifact.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            settings,
            settings_hash,
        }
    }
}

/// Hex SHA-256 of the canonical JSON encoding of `settings`.
pub fn settings_hash(settings: &serde_json::Value) -> String {
    // serde_json's default map is ordered, so the encoding is canonical.
    let bytes = serde_json::to_vec(settings).expect("json value always serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Adds `config` under the header's settings and rehashes them. Bytes
/// without a header line are returned unchanged.
pub fn stamp_config(bytes: &[u8], config: &serde_json::Value) -> Vec<u8> {
    let end = bytes.iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| i + 1);
    let Ok(mut first) = serde_json::from_slice::<serde_json::Value>(&bytes[..end]) else {
        return bytes.to_vec();
    };
    if first.get("kind").and_then(|k| k.as_str()) != Some("header") {
        return bytes.to_vec();
    }
    first.as_object_mut().expect("header is an object").remove("kind");
    let Ok(mut header) = serde_json::from_value::<ArtifactHeader>(first) else {
        return bytes.to_vec();
    };
    if !header.settings.is_object() {
        header.settings = serde_json::json!({ "stage": header.settings });
    }
    header.settings["config"] = config.clone();
    header.settings_hash = settings_hash(&header.settings);
    let mut w = RecordWriter::new(Vec::new());
    w.header(&header).expect("writing to memory");
    let mut out = w.finish().expect("writing to memory");
    out.extend_from_slice(&bytes[end..]);
    out
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Buffered writer producing one tagged record per line.
pub struct RecordWriter<W: Write> {
    out: W,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> Self {
        RecordWriter { out }
    }

    pub fn header(&mut self, header: &ArtifactHeader) -> io::Result<()> {
        self.record("header", header)
    }

    pub fn record<T: Serialize>(&mut self, kind: &str, body: &T) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, &Tagged { kind, body })?;
        self.out.write_all(b"\n")
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// A parsed line: its 1-based line number, kind tag, and remaining fields.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub line: usize,
    pub kind: String,
    pub body: serde_json::Value,
}

impl RawRecord {
    pub fn decode<T: DeserializeOwned>(&self, path: &Path) -> Result<T, RecordError> {
        serde_json::from_value(self.body.clone())
            .map_err(|e| RecordError::malformed(path, self.line, format!("{} record: {e}", self.kind)))
    }
}

/// Reads every non-blank line of `reader` as a tagged record.
pub fn read_records<R: BufRead>(reader: R, path: &Path) -> Result<Vec<RawRecord>, RecordError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| RecordError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| RecordError::malformed(path, line_no, e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| RecordError::malformed(path, line_no, "record is not an object"))?;
        let kind = match obj.remove("kind") {
            Some(serde_json::Value::String(k)) => k,
            _ => return Err(RecordError::malformed(path, line_no, "missing `kind` field")),
        };
        out.push(RawRecord {
            line: line_no,
            kind,
            body: value,
        });
    }
    Ok(out)
}

/// Writes `bytes` to `path`, creating parent directories as needed.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RecordError> {
    let io_err = |source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    std::fs::write(path, bytes).map_err(io_err)
}

pub fn read_record_file(path: &Path) -> Result<Vec<RawRecord>, RecordError> {
    let file = File::open(path).map_err(|source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_records(BufReader::new(file), path)
}

/// Splits off a leading header record, if any.
pub fn split_header(
    records: Vec<RawRecord>,
    path: &Path,
) -> Result<(Option<ArtifactHeader>, Vec<RawRecord>), RecordError> {
    let mut iter = records.into_iter().peekable();
    let header = match iter.peek() {
        Some(r) if r.kind == "header" => {
            let r = iter.next().expect("peeked");
            Some(r.decode(path)?)
        }
        _ => None,
    };
    Ok((header, iter.collect()))
}

#[cfg(test)]
mod tests {
    #[test]
    fn stamping_adds_config_and_rehashes() {
        let mut w = RecordWriter::new(Vec::new());
        w.header(&ArtifactHeader::new("x", serde_json::json!({"a": 1})))
            .unwrap();
        w.record("row", &serde_json::json!({"v": 2})).unwrap();
        let bytes = w.finish().unwrap();
        let stamped = stamp_config(&bytes, &serde_json::json!({"mode": "few-shot"}));
        let (header, rest) = split_header(read_records(&stamped[..], Path::new("x")).unwrap(), Path::new("x")).unwrap();
        let header = header.unwrap();
        assert_eq!(
            header.settings,
            serde_json::json!({"a": 1, "config": {"mode": "few-shot"}})
        );
        assert_eq!(header.settings_hash, settings_hash(&header.settings));
        assert_eq!(rest.len(), 1);
        assert_eq!(
            stamp_config(b"{\"kind\":\"row\"}\n", &serde_json::json!(1)),
            b"{\"kind\":\"row\"}\n"
        );
    }

    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Point {
        x: f64,
        label: String,
    }

    #[test]
    fn write_then_read() {
        let mut w = RecordWriter::new(Vec::new());
        let header = ArtifactHeader::new("points", serde_json::json!({"b": 1, "a": 2}));
        w.header(&header).unwrap();
        let p = Point {
            x: 0.1 + 0.2,
            label: "q".into(),
        };
        w.record("point", &p).unwrap();
        let bytes = w.finish().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with(r#"{"kind":"header","artifact":"points""#));

        let path = Path::new("mem");
        let records = read_records(&bytes[..], path).unwrap();
        let (h, rest) = split_header(records, path).unwrap();
        assert_eq!(h.unwrap(), header);
        assert_eq!(rest[0].kind, "point");
        assert_eq!(rest[0].decode::<Point>(path).unwrap(), p);
    }

    #[test]
    fn malformed_lines_carry_their_locus() {
        let input = b"{\"kind\":\"a\"}\n\n{not json}\n";
        let err = read_records(&input[..], Path::new("f.jsonl")).unwrap_err();
        assert!(err.to_string().starts_with("f.jsonl:3:"), "{err}");
    }

    #[test]
    fn hash_ignores_insertion_order() {
        let a = serde_json::json!({"x": 1, "y": [1, 2]});
        let b: serde_json::Value = serde_json::from_str(r#"{"y":[1,2],"x":1}"#).unwrap();
        assert_eq!(settings_hash(&a), settings_hash(&b));
    }
}
