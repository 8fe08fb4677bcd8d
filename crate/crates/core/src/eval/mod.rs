//! Scoring predictions against expert ground truth.
//!
//! Each prediction is a TP (same canonical id as a still-unmatched truth), an
//! ambiguous call (partially overlaps an unmatched truth according to the
//! taxonomy), or an FP. Truths left unmatched are FNs. Ambiguous calls are
//! counted but take no part in precision, recall or F1. Case results are
//! micro-aggregated: counts are summed, then rates computed once.

mod metrics;
mod report;

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::Finding;
use crate::taxonomy::{PatternTaxonomy, Term};

pub use metrics::{
    compute_metrics, compute_metrics_with_ambiguous, format_percent, format_tenths, harmonic_mean,
    tenths_of_percent, to_f64, MetricsReport, Rate, UNDEFINED,
};
pub use report::{
    emit_per_image_csv, emit_report, parse_delimited_report, ReportFormat, ReportRow, SystemReport,
    REPORT_COLUMNS,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthCase {
    pub case_id: String,
    /// Image path, relative to the corpus file.
    pub image: PathBuf,
    pub expected: Vec<String>,
    #[serde(default)]
    pub notes: String,
}

impl GroundTruthCase {
    pub fn validate(&self, taxonomy: &PatternTaxonomy) -> Result<(), EvalError> {
        let mut seen = HashSet::new();
        for id in &self.expected {
            if !taxonomy.contains(id) {
                return Err(EvalError::Config(format!(
                    "case {}: ground-truth id {id} is not in the taxonomy",
                    self.case_id
                )));
            }
            if !seen.insert(id) {
                return Err(EvalError::Config(format!(
                    "case {}: ground-truth id {id} listed twice",
                    self.case_id
                )));
            }
        }
        Ok(())
    }
}

/// Parses a JSON Lines corpus and checks it against the taxonomy.
pub fn parse_corpus(
    source: &str,
    taxonomy: &PatternTaxonomy,
) -> Result<Vec<GroundTruthCase>, EvalError> {
    let mut cases = Vec::new();
    let mut ids = HashSet::new();
    for (index, line) in source.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case: GroundTruthCase = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: index + 1,
            message: e.to_string(),
        })?;
        case.validate(taxonomy)?;
        if !ids.insert(case.case_id.clone()) {
            return Err(EvalError::Config(format!(
                "duplicate case id {}",
                case.case_id
            )));
        }
        cases.push(case);
    }
    Ok(cases)
}

/// Loads a corpus; image paths come back resolved against the file's directory.
pub fn load_corpus(
    path: &Path,
    taxonomy: &PatternTaxonomy,
) -> Result<Vec<GroundTruthCase>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut cases = parse_corpus(&text, taxonomy)?;
    for case in &mut cases {
        case.image = base.join(&case.image);
    }
    Ok(cases)
}

/// One system's findings for one case, as written by `diagnose` and
/// `baseline`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub case_id: String,
    pub system: String,
    pub findings: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub case_id: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub ambiguous: u64,
    /// (prediction index, truth id) for every TP.
    pub pairs: Vec<(usize, String)>,
    /// Indices of predictions scored FP.
    pub unmatched_predictions: Vec<usize>,
    pub ambiguous_predictions: Vec<usize>,
    pub unmatched_truths: Vec<String>,
}

impl MatchOutcome {
    /// An outcome carrying only counts, for scoring externally tallied results.
    pub fn from_counts(case_id: &str, tp: u64, fp: u64, fn_: u64, ambiguous: u64) -> Self {
        Self {
            case_id: case_id.to_string(),
            tp,
            fp,
            fn_,
            ambiguous,
            pairs: Vec::new(),
            unmatched_predictions: Vec::new(),
            ambiguous_predictions: Vec::new(),
            unmatched_truths: Vec::new(),
        }
    }

    pub fn metrics(&self) -> MetricsReport {
        compute_metrics_with_ambiguous(self.tp, self.fp, self.fn_, self.ambiguous)
    }
}

/// Scores one case.
///
/// Exact matches are taken first, in prediction order; each truth is matched
/// at most once. Remaining predictions are then ambiguous if they partially
/// overlap a truth nobody matched exactly, otherwise FP. Unknown terms are
/// always FP. Counts do not depend on the order of either list.
pub fn match_findings(
    predictions: &[Finding],
    truth: &GroundTruthCase,
    taxonomy: &PatternTaxonomy,
) -> Result<MatchOutcome, EvalError> {
    truth.validate(taxonomy)?;
    let mut consumed = vec![false; truth.expected.len()];
    let mut pairs = Vec::new();
    let mut matched = vec![false; predictions.len()];

    for (index, prediction) in predictions.iter().enumerate() {
        let Term::Canonical(id) = &prediction.pattern else {
            continue;
        };
        if let Some(slot) = truth
            .expected
            .iter()
            .enumerate()
            .position(|(t, expected)| !consumed[t] && expected == id)
        {
            consumed[slot] = true;
            matched[index] = true;
            pairs.push((index, id.clone()));
        }
    }

    let mut ambiguous_predictions = Vec::new();
    let mut unmatched_predictions = Vec::new();
    for (index, prediction) in predictions.iter().enumerate() {
        if matched[index] {
            continue;
        }
        let overlaps = match &prediction.pattern {
            Term::Canonical(id) => truth
                .expected
                .iter()
                .enumerate()
                .any(|(t, expected)| !consumed[t] && taxonomy.partially_overlaps(id, expected)),
            Term::Unknown(_) => false,
        };
        if overlaps {
            ambiguous_predictions.push(index);
        } else {
            unmatched_predictions.push(index);
        }
    }

    let unmatched_truths: Vec<String> = truth
        .expected
        .iter()
        .zip(&consumed)
        .filter(|(_, &c)| !c)
        .map(|(id, _)| id.clone())
        .collect();

    Ok(MatchOutcome {
        case_id: truth.case_id.clone(),
        tp: pairs.len() as u64,
        fp: unmatched_predictions.len() as u64,
        fn_: unmatched_truths.len() as u64,
        ambiguous: ambiguous_predictions.len() as u64,
        pairs,
        unmatched_predictions,
        ambiguous_predictions,
        unmatched_truths,
    })
}

/// Micro-aggregation over distinct cases.
pub fn aggregate(outcomes: &[MatchOutcome]) -> Result<MetricsReport, EvalError> {
    let mut seen = BTreeSet::new();
    for outcome in outcomes {
        if !seen.insert(outcome.case_id.as_str()) {
            return Err(EvalError::Config(format!(
                "case {} scored twice",
                outcome.case_id
            )));
        }
    }
    let sum = |f: fn(&MatchOutcome) -> u64| outcomes.iter().map(f).sum::<u64>();
    Ok(compute_metrics_with_ambiguous(
        sum(|o| o.tp),
        sum(|o| o.fp),
        sum(|o| o.fn_),
        sum(|o| o.ambiguous),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerImageRecall {
    pub case_id: String,
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub recall: Option<Rate>,
    /// Recall defined and at least one half.
    pub met_half: bool,
}

/// Per-case recall, sorted by case id.
pub fn per_image_summary(outcomes: &[MatchOutcome]) -> Vec<PerImageRecall> {
    let mut rows: Vec<PerImageRecall> = outcomes
        .iter()
        .map(|o| {
            let recall = o.metrics().recall;
            PerImageRecall {
                case_id: o.case_id.clone(),
                tp: o.tp,
                fn_: o.fn_,
                met_half: recall.is_some_and(|r| r >= Rate::new(1, 2)),
                recall,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    rows
}
