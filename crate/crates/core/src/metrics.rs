//! Structural graph metrics.
//!
//! A predicted edge is correct when both endpoints are matched entities and
//! the mapped `cause -> effect` pair is a ground-truth edge with the same
//! direction. Labels and predicates never enter the comparison.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{match_entities_with, EntityMatching, Gating};
use crate::graph::CausalGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("ground-truth graph has no edges")]
    EmptyGroundTruth,
    #[error("reachable recall is zero")]
    ZeroReachableRecall,
    #[error("recall curve has zero mean")]
    ZeroMeanRecall,
    #[error("recall curve is empty")]
    EmptyCurve,
    #[error("no scores to aggregate")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub matched_edges: usize,
    pub pred_edges: usize,
    pub gt_edges: usize,
}

pub fn f1_score(recall: f64, precision: f64) -> f64 {
    if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    }
}

impl GraphScore {
    fn from_counts(matched: usize, pred: usize, gt: usize) -> Self {
        let recall = if gt == 0 { 0.0 } else { matched as f64 / gt as f64 };
        // An empty prediction scores precision 0.
        let precision = if pred == 0 { 0.0 } else { matched as f64 / pred as f64 };
        Self {
            recall,
            precision,
            f1: f1_score(recall, precision),
            matched_edges: matched,
            pred_edges: pred,
            gt_edges: gt,
        }
    }
}

/// Count predicted edges that land on a same-direction ground-truth edge.
pub fn score_graph(pred: &CausalGraph, gt: &CausalGraph, matching: &EntityMatching) -> Result<GraphScore, MetricsError> {
    if gt.edges().is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let map = matching.pred_to_gt();
    let gt_edges = gt.edge_set();
    // edge_set deduplicates repeated predictions
    let pred_edges = pred.edge_set();
    let matched = pred_edges
        .iter()
        .filter(|(c, e)| match (map.get(c), map.get(e)) {
            (Some(gc), Some(ge)) => gt_edges.contains(&(*gc, *ge)),
            _ => false,
        })
        .count();
    Ok(GraphScore::from_counts(matched, pred_edges.len(), gt_edges.len()))
}

/// Recall an oracle reasoner would reach over exactly the matched entities.
pub fn reachable_recall(gt: &CausalGraph, matching: &EntityMatching) -> Result<f64, MetricsError> {
    if gt.edges().is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let covered = matching.matched_gt();
    let reachable = gt
        .edges()
        .iter()
        .filter(|e| covered.contains(&e.cause) && covered.contains(&e.effect))
        .count();
    Ok(reachable as f64 / gt.edges().len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReasoningLossReport {
    pub recall: f64,
    pub reachable_recall: f64,
    pub loss: f64,
    /// Set when `recall > reachable_recall` and the loss was clamped to 0.
    pub clamped: bool,
}

/// Relative gap between reachable and achieved recall. Units cancel, so
/// fractions and percentages give the same result.
pub fn reasoning_loss(recall: f64, reachable_recall: f64) -> Result<f64, MetricsError> {
    reasoning_loss_report(recall, reachable_recall).map(|r| r.loss)
}

pub fn reasoning_loss_report(recall: f64, reachable_recall: f64) -> Result<ReasoningLossReport, MetricsError> {
    if reachable_recall <= 0.0 {
        return Err(MetricsError::ZeroReachableRecall);
    }
    let clamped = recall > reachable_recall;
    let loss = if clamped { 0.0 } else { ((reachable_recall - recall) / reachable_recall).min(1.0) };
    Ok(ReasoningLossReport { recall, reachable_recall, loss, clamped })
}

/// Recall stability index, `max(0, 1 - std / mean)` with population std.
pub fn rsi(recalls: &[f64]) -> Result<f64, MetricsError> {
    if recalls.is_empty() {
        return Err(MetricsError::EmptyCurve);
    }
    let n = recalls.len() as f64;
    let mean = recalls.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return Err(MetricsError::ZeroMeanRecall);
    }
    let var = recalls.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let value = 1.0 - libm::sqrt(var) / mean;
    Ok(value.clamp(0.0, 1.0))
}

/// GIoU thresholds 0.3, 0.4, ..., 0.7.
pub fn default_thresholds() -> Vec<f64> {
    (3..=7).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub thresholds: Vec<f64>,
    pub recalls: Vec<f64>,
    /// `None` when every recall is zero.
    pub rsi: Option<f64>,
}

pub fn threshold_sweep(pred: &CausalGraph, gt: &CausalGraph, thresholds: &[f64]) -> Result<SweepReport, MetricsError> {
    threshold_sweep_with(pred, gt, thresholds, Gating::PostAssignment)
}

pub fn threshold_sweep_with(
    pred: &CausalGraph,
    gt: &CausalGraph,
    thresholds: &[f64],
    gating: Gating,
) -> Result<SweepReport, MetricsError> {
    let mut recalls = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let matching = match_entities_with(pred.entities(), gt.entities(), t, gating);
        recalls.push(score_graph(pred, gt, &matching)?.recall);
    }
    let rsi = match rsi(&recalls) {
        Ok(v) => Some(v),
        Err(MetricsError::ZeroMeanRecall) | Err(MetricsError::EmptyCurve) => None,
        Err(e) => return Err(e),
    };
    Ok(SweepReport { thresholds: thresholds.to_vec(), recalls, rsi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    /// Unweighted mean of per-image ratios.
    #[default]
    Macro,
    /// Ratios recomputed from summed edge counts.
    Micro,
}

pub fn aggregate(per_image: &[GraphScore], mode: AggregationMode) -> Result<GraphScore, MetricsError> {
    if per_image.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let matched = per_image.iter().map(|s| s.matched_edges).sum();
    let pred = per_image.iter().map(|s| s.pred_edges).sum();
    let gt = per_image.iter().map(|s| s.gt_edges).sum();
    Ok(match mode {
        AggregationMode::Micro => GraphScore::from_counts(matched, pred, gt),
        AggregationMode::Macro => {
            let n = per_image.len() as f64;
            let recall = per_image.iter().map(|s| s.recall).sum::<f64>() / n;
            let precision = per_image.iter().map(|s| s.precision).sum::<f64>() / n;
            GraphScore {
                recall,
                precision,
                f1: f1_score(recall, precision),
                matched_edges: matched,
                pred_edges: pred,
                gt_edges: gt,
            }
        }
    })
}
