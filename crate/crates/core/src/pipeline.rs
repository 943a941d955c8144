//! The whole chain in one call: coreference, roles, scoring, calibration,
//! classification and evaluation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::CommonsenseBackend;
use crate::coref::{resolve_corpus, CorefError, CorefFlag, CorefResolver, FeatureTable};
use crate::corpus::Corpus;
use crate::engine::{
    calibrate_few_shot, calibrate_zero_shot, classify_table, default_grid, score_corpus, CalibrationMode,
    EmotionDictionary, EngineError, FrequencyTable, Predictions, QuantileMode, ScoreTable, ScoringOptions,
    ThresholdSet,
};
use crate::evalkit::{evaluate, EvalOptions, Report};
use crate::rolelab::{assign_roles, rosters, DepGraph, PatternTable, RoleAssignment, RoleError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrequencySource {
    /// The published StoryCommonsense table.
    #[default]
    Published,
    /// Measured on the training split's gold labels.
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub mode: CalibrationMode,
    pub quantile: QuantileMode,
    pub frequencies: FrequencySource,
    pub grid: Vec<f64>,
    /// Stories of this split form the training set; `None` uses all.
    pub train_split: Option<String>,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            mode: CalibrationMode::FewShot,
            quantile: QuantileMode::Complement,
            frequencies: FrequencySource::Published,
            grid: default_grid(),
            train_split: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Coref(#[from] CorefError),
    #[error(transparent)]
    Roles(#[from] RoleError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn split_filter(corpus: &Corpus, split: Option<&str>) -> Option<BTreeSet<String>> {
    split.map(|s| corpus.split_ids(s))
}

/// Fits thresholds on the training part of `table`.
pub fn calibrate(
    table: &ScoreTable,
    corpus: &Corpus,
    settings: &CalibrationSettings,
) -> Result<ThresholdSet, EngineError> {
    let stories = split_filter(corpus, settings.train_split.as_deref());
    let training = match &stories {
        Some(ids) => table.restrict(|s| ids.contains(s)),
        None => table.clone(),
    };
    let training_id = settings.train_split.clone().unwrap_or_else(|| "all".into());
    let gold = corpus.gold_map();
    match settings.mode {
        CalibrationMode::ZeroShot => {
            let frequencies = match settings.frequencies {
                FrequencySource::Published => FrequencyTable::story_commonsense(),
                FrequencySource::Training => FrequencyTable::from_gold(
                    training
                        .pairs
                        .iter()
                        .filter_map(|p| gold.get(&p.key()).map(|g| (p.role, g))),
                ),
            };
            calibrate_zero_shot(&training, &frequencies, settings.quantile, &training_id)
        }
        CalibrationMode::FewShot => calibrate_few_shot(&training, &gold, &settings.grid, &training_id),
        CalibrationMode::Fixed => Err(EngineError::Config(
            "fixed thresholds are supplied, not calibrated".into(),
        )),
    }
}

/// Evaluation options for a split name.
pub fn eval_options(corpus: &Corpus, split: Option<&str>, include_absent: bool) -> EvalOptions {
    EvalOptions {
        include_absent,
        stories: split_filter(corpus, split),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub dictionary: Option<EmotionDictionary>,
    pub scoring: ScoringOptions,
    pub calibration: CalibrationSettings,
    pub eval_split: Option<String>,
    pub include_absent: bool,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub resolved: Corpus,
    pub coref_flags: Vec<CorefFlag>,
    pub roles: Vec<RoleAssignment>,
    pub scores: ScoreTable,
    pub thresholds: ThresholdSet,
    pub predictions: Predictions,
    pub report: Report,
}

pub fn run<R: CorefResolver + ?Sized, B: CommonsenseBackend + ?Sized>(
    corpus: &Corpus,
    features: &FeatureTable,
    resolver: &R,
    graphs: &[DepGraph],
    patterns: &PatternTable,
    backend: &B,
    settings: &PipelineSettings,
) -> Result<PipelineOutput, PipelineError> {
    let (resolved, coref_flags) = resolve_corpus(corpus, resolver, features)?;
    let roles = assign_roles(graphs, &rosters(&resolved), patterns)?;
    let dictionary = settings.dictionary.clone().unwrap_or_default();
    let scores = score_corpus(
        &resolved,
        &roles,
        backend,
        &dictionary,
        &settings.scoring,
        settings.workers,
    )?;
    let thresholds = calibrate(&scores, &resolved, &settings.calibration)?;
    let predictions = classify_table(&scores, &thresholds);
    let options = eval_options(&resolved, settings.eval_split.as_deref(), settings.include_absent);
    let report = evaluate(&predictions, &resolved.gold_map(), &options);
    Ok(PipelineOutput {
        resolved,
        coref_flags,
        roles,
        scores,
        thresholds,
        predictions,
        report,
    })
}
