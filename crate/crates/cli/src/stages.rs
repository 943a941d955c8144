//! One function per command. Each reads its predecessor's artifact from
//! the output directory and writes its own.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};

use charet::backend::{
    BackendError, CachedBackend, CommonsenseBackend, FixtureBackend, InferenceCache, RemoteBackend, RemoteConfig,
    SyntheticOracle,
};
use charet::coref::{resolve_corpus, CorefFlag, FeatureTable, RuleResolver};
use charet::corpus::{import_corpus, validate_corpus, Corpus, ImportConfig};
use charet::engine::{classify_table, score_corpus, EmotionDictionary, Predictions, ScoreTable, ThresholdSet};
use charet::evalkit::{evaluate, Report};
use charet::pipeline::{self, PipelineSettings};
use charet::records::{self, stamp_config, ArtifactHeader, RecordWriter};
use charet::rolelab::{assign_roles, parse_conllu_file, read_roles, roles_to_bytes, rosters, PatternTable};
use charet::synth::{generate, SynthConfig};

use crate::config::RunConfig;

pub const CORPUS: &str = "corpus.jsonl";
pub const RESOLVED: &str = "resolved.jsonl";
pub const COREF_FLAGS: &str = "coref_flags.jsonl";
pub const ROLES: &str = "roles.jsonl";
pub const SCORES: &str = "scores.jsonl";
pub const THRESHOLDS: &str = "thresholds.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const REPORT: &str = "report.jsonl";
pub const REPORT_TEXT: &str = "report.txt";

/// A command failure together with its exit status.
#[derive(Debug)]
pub enum Failure {
    /// A required input or predecessor artifact does not exist.
    Missing(PathBuf),
    /// The backend could not be reached.
    Transport(String),
    /// An input broke a format rule or invariant.
    Invalid(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Missing(_) => 2,
            Failure::Transport(_) => 3,
            Failure::Invalid(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
        Failure::Invalid(e.into())
    }

    fn other<E: Into<anyhow::Error>>(e: E) -> Failure {
        Failure::Other(e.into())
    }

    fn backend(e: BackendError) -> Failure {
        if e.is_transport() {
            Failure::Transport(e.to_string())
        } else {
            Failure::Invalid(e.into())
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Missing(p) => write!(f, "missing artifact: {}", p.display()),
            Failure::Transport(m) => write!(f, "backend unreachable: {m}"),
            Failure::Invalid(e) => write!(f, "invalid input: {e:#}"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

pub type StageResult<T = ()> = Result<T, Failure>;

fn require(path: &Path) -> StageResult<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::Missing(path.to_path_buf()))
    }
}

fn configured<'a>(value: &'a Option<PathBuf>, key: &str) -> StageResult<&'a Path> {
    let p = value
        .as_deref()
        .ok_or_else(|| Failure::Invalid(anyhow::anyhow!("`{key}` is not set in the config or flags")))?;
    require(p)
}

/// Writes an artifact with the effective config stamped into its header.
fn emit(cfg: &RunConfig, name: &str, bytes: &[u8]) -> StageResult {
    let path = cfg.out_dir().join(name);
    records::write_file(&path, &stamp_config(bytes, &cfg.echo())).map_err(Failure::other)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn artifact(cfg: &RunConfig, name: &str) -> StageResult<PathBuf> {
    let p = cfg.out_dir().join(name);
    require(&p)?;
    Ok(p)
}

fn read_corpus(path: &Path) -> StageResult<Corpus> {
    Corpus::read(require(path)?).map_err(Failure::invalid)
}

fn resolver(cfg: &RunConfig) -> StageResult<RuleResolver> {
    match &cfg.targets {
        Some(t) => RuleResolver::new(t).map_err(Failure::invalid),
        None => Ok(RuleResolver::default()),
    }
}

fn features(cfg: &RunConfig) -> StageResult<FeatureTable> {
    match &cfg.features {
        Some(p) => FeatureTable::read_file(require(p)?).map_err(Failure::invalid),
        None => Ok(FeatureTable::default()),
    }
}

fn patterns(cfg: &RunConfig) -> StageResult<PatternTable> {
    match &cfg.patterns {
        Some(p) => {
            let text = std::fs::read_to_string(require(p)?).map_err(Failure::other)?;
            PatternTable::parse(&text).map_err(Failure::invalid)
        }
        None => Ok(PatternTable::default()),
    }
}

fn dictionary(cfg: &RunConfig) -> StageResult<EmotionDictionary> {
    match &cfg.dictionary {
        Some(p) => EmotionDictionary::read_file(require(p)?).map_err(Failure::invalid),
        None => Ok(EmotionDictionary::default()),
    }
}

/// Opens the configured backend, wrapped in the cache when one is set.
pub fn backend(cfg: &RunConfig) -> StageResult<Box<dyn CommonsenseBackend>> {
    let spec = cfg
        .backend
        .as_deref()
        .ok_or_else(|| Failure::Invalid(anyhow::anyhow!("no backend configured; use --backend")))?;
    let inner: Box<dyn CommonsenseBackend> = if let Some(p) = spec.strip_prefix("fixture:") {
        Box::new(FixtureBackend::read_file(require(Path::new(p))?).map_err(Failure::backend)?)
    } else if let Some(p) = spec.strip_prefix("synthetic:") {
        Box::new(SyntheticOracle::read_file(require(Path::new(p))?).map_err(Failure::backend)?)
    } else if spec.starts_with("http://") || spec.starts_with("https://") || spec.starts_with("remote:") {
        let endpoint = spec.strip_prefix("remote:").unwrap_or(spec);
        let mut rc = RemoteConfig::new(endpoint);
        let r = &cfg.remote;
        rc.timeout_ms = r.timeout_ms.unwrap_or(rc.timeout_ms);
        rc.retries = r.retries.unwrap_or(rc.retries);
        rc.backoff_ms = r.backoff_ms.unwrap_or(rc.backoff_ms);
        rc.identity = r.identity.clone();
        Box::new(RemoteBackend::connect(rc).map_err(Failure::backend)?)
    } else {
        return Err(Failure::Invalid(anyhow::anyhow!(
            "backend `{spec}` is not fixture:<path>, synthetic:<path> or an http(s) endpoint"
        )));
    };
    info!("backend {}", inner.identity());
    match &cfg.cache {
        Some(p) => {
            let cache = InferenceCache::open(p).map_err(Failure::backend)?;
            Ok(Box::new(CachedBackend::new(inner, Arc::new(cache))))
        }
        None => Ok(inner),
    }
}

pub fn ingest(cfg: &RunConfig) -> StageResult<Corpus> {
    let corpus = if !cfg.release.is_empty() {
        for f in &cfg.release {
            require(f)?;
        }
        let import = match &cfg.importer {
            Some(p) => {
                let text = std::fs::read_to_string(require(p)?).map_err(Failure::other)?;
                ImportConfig::from_toml(&text).map_err(Failure::invalid)?
            }
            None => ImportConfig::default(),
        };
        let outcome = import_corpus(&cfg.release, &import).map_err(Failure::invalid)?;
        if !outcome.rejected.is_empty() {
            warn!("{} records rejected during import", outcome.rejected.len());
        }
        outcome.corpus
    } else {
        read_corpus(configured(&cfg.corpus, "corpus")?)?
    };
    let report = validate_corpus(&corpus);
    if !report.is_clean() {
        for v in &report.violations {
            eprintln!("{v}");
        }
        return Err(Failure::Invalid(anyhow::anyhow!(
            "{} corpus violations",
            report.violations.len()
        )));
    }
    emit(cfg, CORPUS, &corpus.to_bytes())?;
    Ok(corpus)
}

fn flags_to_bytes(flags: &[CorefFlag], resolver: &RuleResolver) -> Vec<u8> {
    let targets: Vec<&str> = resolver.targets().collect();
    let mut w = RecordWriter::new(Vec::new());
    w.header(&ArtifactHeader::new(
        "coref-flags",
        serde_json::json!({ "targets": targets }),
    ))
    .expect("writing to memory");
    for f in flags {
        w.record("flag", f).expect("writing to memory");
    }
    w.finish().expect("writing to memory")
}

pub fn coref(cfg: &RunConfig) -> StageResult<Corpus> {
    let corpus = read_corpus(&artifact(cfg, CORPUS)?)?;
    let resolver = resolver(cfg)?;
    let (resolved, flags) = resolve_corpus(&corpus, &resolver, &features(cfg)?).map_err(Failure::invalid)?;
    if !flags.is_empty() {
        info!("{} pronouns flagged", flags.len());
    }
    emit(cfg, RESOLVED, &resolved.to_bytes())?;
    emit(cfg, COREF_FLAGS, &flags_to_bytes(&flags, &resolver))?;
    Ok(resolved)
}

pub fn roles(cfg: &RunConfig) -> StageResult {
    let resolved = read_corpus(&artifact(cfg, RESOLVED)?)?;
    let graphs = parse_conllu_file(configured(&cfg.conllu, "conllu")?).map_err(Failure::invalid)?;
    let table = patterns(cfg)?;
    let assignments = assign_roles(&graphs, &rosters(&resolved), &table).map_err(Failure::invalid)?;
    emit(cfg, ROLES, &roles_to_bytes(&assignments, &table))
}

/// Fails with a transport error when any pair could not reach the backend.
fn check_transport(table: &ScoreTable) -> StageResult {
    for f in &table.failures {
        warn!("{}:{}/{}: {}", f.story_id, f.line_index, f.character, f.error);
    }
    match table.failures.iter().filter(|f| f.transport).count() {
        0 => Ok(()),
        n => Err(Failure::Transport(format!("{n} pairs failed to reach the backend"))),
    }
}

pub fn infer(cfg: &RunConfig) -> StageResult {
    let resolved = read_corpus(&artifact(cfg, RESOLVED)?)?;
    let assignments = read_roles(&artifact(cfg, ROLES)?).map_err(Failure::invalid)?;
    let dict = dictionary(cfg)?;
    let backend = backend(cfg)?;
    let table =
        score_corpus(&resolved, &assignments, &*backend, &dict, &cfg.scoring, cfg.workers).map_err(Failure::invalid)?;
    emit(cfg, SCORES, &table.to_bytes())?;
    check_transport(&table)
}

pub fn calibrate(cfg: &RunConfig) -> StageResult {
    let resolved = read_corpus(&artifact(cfg, RESOLVED)?)?;
    let scores = ScoreTable::read(&artifact(cfg, SCORES)?).map_err(Failure::invalid)?;
    let thresholds = pipeline::calibrate(&scores, &resolved, &cfg.calibration).map_err(Failure::invalid)?;
    emit(cfg, THRESHOLDS, &thresholds.to_bytes())
}

pub fn classify(cfg: &RunConfig) -> StageResult {
    let thresholds = ThresholdSet::read(&artifact(cfg, THRESHOLDS)?).map_err(Failure::invalid)?;
    let scores = ScoreTable::read(&artifact(cfg, SCORES)?).map_err(Failure::invalid)?;
    emit(cfg, PREDICTIONS, &classify_table(&scores, &thresholds).to_bytes())
}

fn emit_report(cfg: &RunConfig, report: &Report) -> StageResult {
    emit(cfg, REPORT, &report.to_bytes())?;
    let text = report.to_text();
    records::write_file(&cfg.out_dir().join(REPORT_TEXT), text.as_bytes()).map_err(Failure::other)?;
    print!("{text}");
    Ok(())
}

pub fn evaluate_stage(cfg: &RunConfig) -> StageResult {
    let resolved = read_corpus(&artifact(cfg, RESOLVED)?)?;
    let predictions = Predictions::read(&artifact(cfg, PREDICTIONS)?).map_err(Failure::invalid)?;
    let options = pipeline::eval_options(
        &resolved,
        cfg.evaluation.split.as_deref(),
        cfg.evaluation.include_absent,
    );
    emit_report(cfg, &evaluate(&predictions, &resolved.gold_map(), &options))
}

/// Every stage in one process, writing the same artifacts as the chain.
pub fn run_all(cfg: &RunConfig) -> StageResult {
    let corpus = ingest(cfg)?;
    let graphs = parse_conllu_file(configured(&cfg.conllu, "conllu")?).map_err(Failure::invalid)?;
    let resolver = resolver(cfg)?;
    let table = patterns(cfg)?;
    let backend = backend(cfg)?;
    let settings = PipelineSettings {
        dictionary: Some(dictionary(cfg)?),
        scoring: cfg.scoring,
        calibration: cfg.calibration.clone(),
        eval_split: cfg.evaluation.split.clone(),
        include_absent: cfg.evaluation.include_absent,
        workers: cfg.workers,
    };
    let out = pipeline::run(
        &corpus,
        &features(cfg)?,
        &resolver,
        &graphs,
        &table,
        &*backend,
        &settings,
    )
    .map_err(Failure::invalid)?;
    emit(cfg, RESOLVED, &out.resolved.to_bytes())?;
    emit(cfg, COREF_FLAGS, &flags_to_bytes(&out.coref_flags, &resolver))?;
    emit(cfg, ROLES, &roles_to_bytes(&out.roles, &table))?;
    emit(cfg, SCORES, &out.scores.to_bytes())?;
    emit(cfg, THRESHOLDS, &out.thresholds.to_bytes())?;
    emit(cfg, PREDICTIONS, &out.predictions.to_bytes())?;
    emit_report(cfg, &out.report)?;
    check_transport(&out.scores)
}

/// Writes a synthetic corpus with its oracle and a config that runs it.
pub fn synth(dir: &Path, config: &SynthConfig) -> StageResult {
    let bundle = generate(config).map_err(|m| Failure::Invalid(anyhow::anyhow!(m)))?;
    bundle.write_dir(dir).map_err(Failure::other)?;
    let run = r#"# Generated by `charet synth`.
corpus = "corpus.jsonl"
features = "features.jsonl"
conllu = "parses.conllu"
backend = "synthetic:oracle.jsonl"
out = "out"

[calibration]
mode = "few-shot"
train_split = "train"

[evaluation]
split = "test"
"#;
    records::write_file(&dir.join("charet.toml"), run.as_bytes()).map_err(Failure::other)?;
    info!("wrote synthetic corpus to {}", dir.display());
    Ok(())
}
