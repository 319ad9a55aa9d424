//! Causal reward for scoring policy rollouts.
//!
//! `total = λr·Recall + λp·Precision + λf·Format`, where recall and precision
//! come from the same matching pipeline used for evaluation. Text that fails
//! the output grammar defines an empty graph, so it earns nothing beyond the
//! format term (which is also zero in the default binary mode).

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{match_entities_with, Gating};
use crate::graph::CausalGraph;
use crate::metrics::{score_graph, MetricsError};
use crate::parser::{format_compliance, graded_compliance, graph_from_pairs, parse_causal_pairs, Grammar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("ground-truth graph has no edges")]
    EmptyGroundTruth,
    #[error("unknown ground-truth reference {0}")]
    UnknownGroundTruthRef(u64),
    #[error("weights must be finite, non-negative and not all zero")]
    InvalidWeights,
}

impl From<MetricsError> for RewardError {
    fn from(_: MetricsError) -> Self {
        // score_graph only fails on an empty ground truth
        RewardError::EmptyGroundTruth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda_r: f64,
    pub lambda_p: f64,
    pub lambda_f: f64,
}

impl RewardWeights {
    pub fn new(lambda_r: f64, lambda_p: f64, lambda_f: f64) -> Result<Self, RewardError> {
        let w = [lambda_r, lambda_p, lambda_f];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().all(|x| *x == 0.0) {
            return Err(RewardError::InvalidWeights);
        }
        Ok(Self { lambda_r, lambda_p, lambda_f })
    }

    pub fn sum(&self) -> f64 {
        self.lambda_r + self.lambda_p + self.lambda_f
    }
}

impl Default for RewardWeights {
    /// Recall-led, precision second, a small format term.
    fn default() -> Self {
        Self { lambda_r: 0.5, lambda_p: 0.4, lambda_f: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub recall_term: f64,
    pub precision_term: f64,
    pub format_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    /// GIoU threshold for entity matching.
    pub threshold: f64,
    pub grammar: Grammar,
    /// Score the format term as the fraction of well-formed records.
    pub graded_format: bool,
    pub gating: Gating,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            threshold: 0.5,
            grammar: Grammar::E2e,
            graded_format: false,
            gating: Gating::PostAssignment,
        }
    }
}

impl RewardConfig {
    pub fn with_weights(weights: RewardWeights, threshold: f64) -> Self {
        Self { weights, threshold, ..Self::default() }
    }
}

pub fn causal_reward(prediction_text: &str, gt: &CausalGraph, config: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    if gt.edges().is_empty() {
        return Err(RewardError::EmptyGroundTruth);
    }
    let format_term = if config.graded_format {
        graded_compliance(prediction_text, config.grammar)
    } else {
        format_compliance(prediction_text, config.grammar)
    };
    let (recall_term, precision_term) = match parse_causal_pairs(prediction_text) {
        Ok(pairs) if format_term > 0.0 => {
            let pred = graph_from_pairs(&pairs);
            let matching = match_entities_with(pred.entities(), gt.entities(), config.threshold, config.gating);
            let score = score_graph(&pred, gt, &matching)?;
            (score.recall, score.precision)
        }
        _ => (0.0, 0.0),
    };
    let w = &config.weights;
    Ok(RewardBreakdown {
        recall_term,
        precision_term,
        format_term,
        total: w.lambda_r * recall_term + w.lambda_p * precision_term + w.lambda_f * format_term,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreItem<'a> {
    pub gt_ref: u64,
    pub prediction_text: &'a str,
}

/// Score each item independently; failures stay in their own slot.
pub fn score_batch<'g, F>(items: &[ScoreItem<'_>], lookup: F, config: &RewardConfig) -> Vec<Result<RewardBreakdown, RewardError>>
where
    F: Fn(u64) -> Option<&'g CausalGraph>,
{
    items
        .iter()
        .map(|item| {
            let gt = lookup(item.gt_ref).ok_or(RewardError::UnknownGroundTruthRef(item.gt_ref))?;
            causal_reward(item.prediction_text, gt, config)
        })
        .collect()
}
