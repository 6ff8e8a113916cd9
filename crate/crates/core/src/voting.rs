//! Voting inference: each voter picks an option with its direction's operator
//! on its own head norm, and the ensemble answers with the mode (or the
//! weighted sum) of those picks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::capture::{CaptureSet, SampleRecord};
use crate::error::{Error, Result};
use crate::par;
use crate::selection::{pick_option, VoterSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VoteMode {
    /// Unweighted majority vote.
    #[default]
    Vote,
    /// Weighted sum of voter picks.
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub sample_id: String,
    pub gold_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub predicted_index: usize,
    pub vote_counts: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_voter_votes: Option<Vec<usize>>,
}

impl PredictionResult {
    pub fn is_correct(&self) -> bool {
        self.predicted_index == self.gold_index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAccuracy {
    pub n_samples: usize,
    pub n_correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub accuracy: f64,
    pub n_samples: usize,
    pub n_correct: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_category: Option<BTreeMap<String, CategoryAccuracy>>,
    pub predictions: Vec<PredictionResult>,
}

impl EvaluationReport {
    pub fn from_predictions(predictions: Vec<PredictionResult>) -> Self {
        let n_samples = predictions.len();
        let n_correct = predictions.iter().filter(|p| p.is_correct()).count();
        let per_category = if predictions.iter().any(|p| p.category.is_some()) {
            let mut map: BTreeMap<String, (usize, usize)> = BTreeMap::new();
            for p in &predictions {
                let key = p.category.clone().unwrap_or_else(|| "(none)".to_string());
                let e = map.entry(key).or_default();
                e.0 += 1;
                e.1 += usize::from(p.is_correct());
            }
            Some(
                map.into_iter()
                    .map(|(k, (n, c))| {
                        (
                            k,
                            CategoryAccuracy {
                                n_samples: n,
                                n_correct: c,
                                accuracy: c as f64 / n as f64,
                            },
                        )
                    })
                    .collect(),
            )
        } else {
            None
        };
        Self {
            accuracy: if n_samples == 0 { 0.0 } else { n_correct as f64 / n_samples as f64 },
            n_samples,
            n_correct,
            per_category,
            predictions,
        }
    }

    /// Per-sample miss indicators in record order.
    pub fn error_bits(&self) -> Vec<bool> {
        self.predictions.iter().map(|p| !p.is_correct()).collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_sample(voters: &VoterSet, sample: &SampleRecord) -> Result<()> {
    let expected = voters.geometry.n_heads();
    for opt in &sample.options {
        if opt.norms.len() != expected {
            return Err(Error::GeometryMismatch {
                expected,
                found: opt.norms.len(),
            });
        }
    }
    if sample.options.is_empty() {
        return Err(Error::Empty("sample has no options"));
    }
    Ok(())
}

fn tally(
    voters: &VoterSet,
    sample: &SampleRecord,
    weighted: bool,
    keep_votes: bool,
) -> Result<PredictionResult> {
    if voters.is_empty() {
        return Err(Error::Empty("voter set"));
    }
    check_sample(voters, sample)?;
    let weights = match (weighted, &voters.weights) {
        (true, Some(w)) => Some(w.as_slice()),
        (true, None) => return Err(Error::Missing("voter weights required for weighted voting".into())),
        (false, _) => None,
    };
    let mut counts = vec![0.0f64; sample.n_options()];
    let mut votes = keep_votes.then(|| Vec::with_capacity(voters.len()));
    for (i, (&head, &dir)) in voters.indices.iter().zip(&voters.indicators).enumerate() {
        let pick = pick_option(sample, head, dir);
        counts[pick] += weights.map_or(1.0, |w| w[i]);
        if let Some(v) = votes.as_mut() {
            v.push(pick);
        }
    }
    Ok(PredictionResult {
        sample_id: sample.sample_id.clone(),
        gold_index: sample.correct_index,
        category: sample.category.clone(),
        predicted_index: argmax_low(&counts),
        vote_counts: counts,
        per_voter_votes: votes,
    })
}

/// Majority vote of all voters; ties resolve to the lowest option index.
pub fn vote(voters: &VoterSet, sample: &SampleRecord) -> Result<PredictionResult> {
    tally(voters, sample, false, false)
}

/// Like [`vote`], but keeps each voter's pick in `per_voter_votes`.
pub fn vote_detailed(voters: &VoterSet, sample: &SampleRecord) -> Result<PredictionResult> {
    tally(voters, sample, false, true)
}

pub fn vote_weighted(voters: &VoterSet, sample: &SampleRecord) -> Result<PredictionResult> {
    tally(voters, sample, true, false)
}

pub fn evaluate(voters: &VoterSet, capture: &CaptureSet, mode: VoteMode) -> Result<EvaluationReport> {
    if !voters.geometry.same_shape(&capture.geometry) {
        return Err(Error::GeometryMismatch {
            expected: voters.geometry.n_heads(),
            found: capture.n_heads(),
        });
    }
    evaluate_records(voters, &capture.records, mode, false)
}

/// Evaluates a slice of records; report order follows input order.
pub fn evaluate_records(
    voters: &VoterSet,
    records: &[SampleRecord],
    mode: VoteMode,
    keep_votes: bool,
) -> Result<EvaluationReport> {
    if mode == VoteMode::Weighted && voters.weights.is_none() {
        return Err(Error::Missing("voter weights required for weighted voting".into()));
    }
    let weighted = mode == VoteMode::Weighted;
    let predictions = par::map(records, |r| tally(voters, r, weighted, keep_votes))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::from_predictions(predictions))
}

/// Answers each sample with the option of highest `lm_score`.
pub fn lm_baseline_evaluate(capture: &CaptureSet) -> Result<EvaluationReport> {
    let predictions = capture
        .records
        .iter()
        .map(|rec| {
            let scores = rec
                .options
                .iter()
                .enumerate()
                .map(|(k, o)| {
                    o.lm_score.ok_or_else(|| {
                        Error::Missing(format!("lm_score for sample {:?} option {k}", rec.sample_id))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(PredictionResult {
                sample_id: rec.sample_id.clone(),
                gold_index: rec.correct_index,
                category: rec.category.clone(),
                predicted_index: argmax_low(&scores),
                vote_counts: scores,
                per_voter_votes: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport::from_predictions(predictions))
}

/// Fraction of voter norm readings (all samples, all options) inside `[lo, hi]`.
/// Diagnostic only.
pub fn norm_band_fraction(voters: &VoterSet, capture: &CaptureSet, lo: f32, hi: f32) -> f64 {
    let mut inside = 0usize;
    let mut total = 0usize;
    for rec in &capture.records {
        for opt in &rec.options {
            for &h in &voters.indices {
                total += 1;
                let v = opt.norms.get(h);
                inside += usize::from(v >= lo && v <= hi);
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    }
}
