//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use charet::engine::{CalibrationMode, QuantileMode, ScoringOptions};
use charet::pipeline::CalibrationSettings;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Only stories of this split are scored; `None` evaluates everything.
    pub split: Option<String>,
    pub include_absent: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteSection {
    pub timeout_ms: Option<u64>,
    pub retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub identity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Release CSV files for `ingest`.
    pub release: Vec<PathBuf>,
    /// Importer settings (aggregation rule, column mapping).
    pub importer: Option<PathBuf>,
    /// A canonical corpus file, used by `ingest` when no release is given.
    pub corpus: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub conllu: Option<PathBuf>,
    /// Relation-to-role table; the built-in table when unset.
    pub patterns: Option<PathBuf>,
    /// Emotion word overrides.
    pub dictionary: Option<PathBuf>,
    /// Pronouns the resolver substitutes; the built-in list when unset.
    pub targets: Option<Vec<String>>,
    /// `fixture:<path>`, `synthetic:<path>` or an http(s) endpoint.
    pub backend: Option<String>,
    pub cache: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: usize,
    pub scoring: ScoringOptions,
    pub calibration: CalibrationSettings,
    pub evaluation: EvaluationConfig,
    pub remote: RemoteSection,
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub backend: Option<String>,
    pub cache: Option<PathBuf>,
    pub mode: Option<CalibrationMode>,
    pub quantile: Option<QuantileMode>,
    pub workers: Option<usize>,
    pub corpus: Option<PathBuf>,
    pub conllu: Option<PathBuf>,
    pub release: Vec<PathBuf>,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads `path`; relative paths inside the file are taken from the
    /// file's directory.
    pub fn from_file(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in cfg.release.iter_mut() {
            rebase(base, p);
        }
        for p in [
            &mut cfg.importer,
            &mut cfg.corpus,
            &mut cfg.features,
            &mut cfg.conllu,
            &mut cfg.patterns,
            &mut cfg.dictionary,
            &mut cfg.cache,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            rebase(base, p);
        }
        if let Some(spec) = cfg.backend.clone() {
            for prefix in ["fixture:", "synthetic:"] {
                if let Some(rest) = spec.strip_prefix(prefix) {
                    let mut p = PathBuf::from(rest);
                    rebase(base, &mut p);
                    cfg.backend = Some(format!("{prefix}{}", p.display()));
                }
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: Overrides) {
        if o.out.is_some() {
            self.out = o.out;
        }
        if o.backend.is_some() {
            self.backend = o.backend;
        }
        if o.cache.is_some() {
            self.cache = o.cache;
        }
        if let Some(m) = o.mode {
            self.calibration.mode = m;
        }
        if let Some(q) = o.quantile {
            self.calibration.quantile = q;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if o.corpus.is_some() {
            self.corpus = o.corpus;
        }
        if o.conllu.is_some() {
            self.conllu = o.conllu;
        }
        if !o.release.is_empty() {
            self.release = o.release;
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("charet-out"))
    }

    /// The settings echoed into artifact headers. Where outputs go, the
    /// cache location and the worker count do not change any result and
    /// are left out.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is a table");
        for k in ["out", "cache", "workers"] {
            obj.remove(k);
        }
        v
    }
}
