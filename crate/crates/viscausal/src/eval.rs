//! Scoring prediction files against a ground-truth dataset.
//!
//! Predictions are records in the dataset schema, or `{"img_id", "text"}`
//! objects holding raw model output in the causal-pairs grammar. A missing
//! or unparseable prediction is scored as an empty graph and flagged.
//! Images whose ground truth has no edges cannot be scored and are listed
//! separately.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;
use viscausal_core::assignment::{match_entities_with, Gating};
use viscausal_core::graph::CausalGraph;
use viscausal_core::metrics::{aggregate, reachable_recall, reasoning_loss, rsi, score_graph, AggregationMode, GraphScore};
use viscausal_core::parser::{graph_from_pairs, parse_causal_pairs};

use crate::dataset::{split_records, validate_record, DatasetError, DatasetRecord, Severity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Flag {
    MissingPrediction,
    UnparseablePrediction,
}

impl Flag {
    pub fn name(self) -> &'static str {
        match self {
            Flag::MissingPrediction => "missing_prediction",
            Flag::UnparseablePrediction => "unparseable_prediction",
        }
    }
}

/// Predicted graphs keyed by image; `Err` holds why a prediction was unusable.
#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    pub graphs: BTreeMap<u64, Result<CausalGraph, String>>,
    /// Entries that could not be tied to an image, and repeated img_ids.
    pub problems: Vec<String>,
}

impl PredictionSet {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| DatasetError::UnreadableFile { path: path.display().to_string(), source })?;
        Ok(Self::parse(&bytes))
    }

    pub fn parse(bytes: &[u8]) -> Self {
        let mut set = Self::default();
        let raw = match split_records(bytes) {
            Ok(raw) => raw,
            Err(e) => {
                set.problems.push(e);
                return set;
            }
        };
        for (index, item) in raw.into_iter().enumerate() {
            let value = match item {
                Ok(v) => v,
                Err(e) => {
                    set.problems.push(format!("prediction {index}: {e}"));
                    continue;
                }
            };
            let Some(img_id) = value.get("img_id").and_then(Value::as_u64) else {
                set.problems.push(format!("prediction {index}: no usable img_id"));
                continue;
            };
            let graph = match value.get("text") {
                Some(Value::String(text)) => parse_causal_pairs(text).map(|p| graph_from_pairs(&p)).map_err(|e| e.to_string()),
                Some(_) => Err("text must be a string".into()),
                None => {
                    let (record, violations) = validate_record(index, &value);
                    record.map(|r| r.graph()).ok_or_else(|| {
                        let first = violations.iter().find(|v| v.severity == Severity::Error);
                        first.map_or_else(|| "invalid record".into(), |v| format!("{}: {}", v.rule, v.message))
                    })
                }
            };
            match set.graphs.entry(img_id) {
                Entry::Occupied(_) => set.problems.push(format!("prediction {index}: img_id {img_id} repeats; first kept")),
                Entry::Vacant(slot) => {
                    slot.insert(graph);
                }
            }
        }
        set
    }

    pub fn from_graphs(graphs: impl IntoIterator<Item = (u64, CausalGraph)>) -> Self {
        Self { graphs: graphs.into_iter().map(|(k, g)| (k, Ok(g))).collect(), problems: Vec::new() }
    }

    fn resolve(&self, img_id: u64) -> (CausalGraph, Option<Flag>) {
        match self.graphs.get(&img_id) {
            Some(Ok(g)) => (g.clone(), None),
            Some(Err(_)) => (CausalGraph::empty(), Some(Flag::UnparseablePrediction)),
            None => (CausalGraph::empty(), Some(Flag::MissingPrediction)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    pub mode: AggregationMode,
    pub gating: Gating,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { threshold: 0.5, mode: AggregationMode::Macro, gating: Gating::PostAssignment }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScore {
    pub img_id: u64,
    pub score: GraphScore,
    pub reachable_recall: f64,
    pub flag: Option<Flag>,
}

/// Images that were not scored normally.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Coverage {
    pub missing: Vec<u64>,
    pub unparseable: Vec<u64>,
    /// Predicted img_ids absent from the ground truth.
    pub extra: Vec<u64>,
    /// Ground-truth images without edges, excluded from scoring.
    pub empty_gt: Vec<u64>,
}

fn coverage(preds: &PredictionSet, gt: &[DatasetRecord], flags: impl Iterator<Item = (u64, Option<Flag>)>) -> Coverage {
    let gt_ids: BTreeSet<u64> = gt.iter().map(|r| r.img_id).collect();
    let mut c = Coverage {
        extra: preds.graphs.keys().filter(|k| !gt_ids.contains(k)).copied().collect(),
        empty_gt: gt.iter().filter(|r| r.relationship_count() == 0).map(|r| r.img_id).collect(),
        ..Coverage::default()
    };
    c.empty_gt.sort_unstable();
    for (id, flag) in flags {
        match flag {
            Some(Flag::MissingPrediction) => c.missing.push(id),
            Some(Flag::UnparseablePrediction) => c.unparseable.push(id),
            None => {}
        }
    }
    c
}

/// Ground-truth records with edges, sorted by img_id.
fn scorable(gt: &[DatasetRecord]) -> Vec<(u64, CausalGraph)> {
    let mut v: Vec<(u64, CausalGraph)> =
        gt.iter().map(|r| (r.img_id, r.graph())).filter(|(_, g)| !g.edges().is_empty()).collect();
    v.sort_by_key(|(id, _)| *id);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub options: EvalOptions,
    pub per_image: Vec<ImageScore>,
    /// `None` when no image could be scored.
    pub aggregate: Option<GraphScore>,
    pub reachable_recall: Option<f64>,
    /// Reasoning loss of the aggregate; `None` when reachable recall is 0.
    pub loss: Option<f64>,
    pub coverage: Coverage,
}

pub fn evaluate(preds: &PredictionSet, gt: &[DatasetRecord], options: EvalOptions) -> EvalReport {
    let per_image: Vec<ImageScore> = scorable(gt)
        .into_par_iter()
        .map(|(img_id, gt_graph)| {
            let (pred, flag) = preds.resolve(img_id);
            let matching = match_entities_with(pred.entities(), gt_graph.entities(), options.threshold, options.gating);
            let score = score_graph(&pred, &gt_graph, &matching).expect("scorable images have edges");
            let reachable = reachable_recall(&gt_graph, &matching).expect("scorable images have edges");
            ImageScore { img_id, score, reachable_recall: reachable, flag }
        })
        .collect();
    let scores: Vec<GraphScore> = per_image.iter().map(|s| s.score).collect();
    let aggregate = aggregate(&scores, options.mode).ok();
    let reachable = (!per_image.is_empty()).then(|| match options.mode {
        AggregationMode::Macro => per_image.iter().map(|s| s.reachable_recall).sum::<f64>() / per_image.len() as f64,
        AggregationMode::Micro => {
            let reach: f64 = per_image.iter().map(|s| (s.reachable_recall * s.score.gt_edges as f64).round()).sum();
            reach / per_image.iter().map(|s| s.score.gt_edges).sum::<usize>() as f64
        }
    });
    let loss = match (aggregate, reachable) {
        (Some(a), Some(r)) => reasoning_loss(a.recall, r).ok(),
        _ => None,
    };
    let coverage = coverage(preds, gt, per_image.iter().map(|s| (s.img_id, s.flag)));
    EvalReport { options, per_image, aggregate, reachable_recall: reachable, loss, coverage }
}

/// Minimal JSON object writer with fixed field order and 6-decimal floats.
#[derive(Default)]
struct Obj(String);

impl Obj {
    fn key(&mut self, k: &str) {
        self.0.push(if self.0.is_empty() { '{' } else { ',' });
        self.0.push_str(&serde_json::to_string(k).expect("string"));
        self.0.push(':');
    }
    fn num(mut self, k: &str, v: f64) -> Self {
        self.key(k);
        write!(self.0, "{v:.6}").expect("string write");
        self
    }
    fn opt_num(mut self, k: &str, v: Option<f64>) -> Self {
        match v {
            Some(v) => self.num(k, v),
            None => {
                self.key(k);
                self.0.push_str("null");
                self
            }
        }
    }
    fn int(mut self, k: &str, v: impl fmt::Display) -> Self {
        self.key(k);
        write!(self.0, "{v}").expect("string write");
        self
    }
    fn str(mut self, k: &str, v: Option<&str>) -> Self {
        self.key(k);
        self.0.push_str(&v.map_or_else(|| "null".into(), |s| serde_json::to_string(s).expect("string")));
        self
    }
    fn raw(mut self, k: &str, v: &str) -> Self {
        self.key(k);
        self.0.push_str(v);
        self
    }
    fn finish(mut self) -> String {
        if self.0.is_empty() {
            self.0.push('{');
        }
        self.0.push('}');
        self.0
    }
}

fn id_list(ids: &[u64]) -> String {
    format!("[{}]", ids.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
}

fn num_list(values: &[f64]) -> String {
    format!("[{}]", values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(","))
}

fn mode_name(mode: AggregationMode) -> &'static str {
    match mode {
        AggregationMode::Macro => "macro",
        AggregationMode::Micro => "micro",
    }
}

fn coverage_fields(o: Obj, c: &Coverage) -> Obj {
    o.raw("missing", &id_list(&c.missing))
        .raw("unparseable", &id_list(&c.unparseable))
        .raw("extra", &id_list(&c.extra))
        .raw("empty_gt", &id_list(&c.empty_gt))
}

impl EvalReport {
    /// One JSON line per scored image, ordered by img_id.
    pub fn per_image_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.per_image {
            let line = Obj::default()
                .int("img_id", s.img_id)
                .num("recall", s.score.recall)
                .num("precision", s.score.precision)
                .num("f1", s.score.f1)
                .num("reachable_recall", s.reachable_recall)
                .int("matched_edges", s.score.matched_edges)
                .int("pred_edges", s.score.pred_edges)
                .int("gt_edges", s.score.gt_edges)
                .str("flag", s.flag.map(Flag::name))
                .finish();
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let a = self.aggregate;
        let o = Obj::default()
            .num("threshold", self.options.threshold)
            .str("mode", Some(mode_name(self.options.mode)))
            .int("images", self.per_image.len())
            .opt_num("recall", a.map(|a| a.recall))
            .opt_num("precision", a.map(|a| a.precision))
            .opt_num("f1", a.map(|a| a.f1))
            .opt_num("reachable_recall", self.reachable_recall)
            .opt_num("loss", self.loss)
            .int("matched_edges", a.map_or(0, |a| a.matched_edges))
            .int("pred_edges", a.map_or(0, |a| a.pred_edges))
            .int("gt_edges", a.map_or(0, |a| a.gt_edges));
        coverage_fields(o, &self.coverage).finish()
    }

    pub fn table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", v * 100.0));
        let a = self.aggregate;
        let mut s = String::new();
        let _ = writeln!(s, "images scored      {}", self.per_image.len());
        let _ = writeln!(s, "GIoU threshold     {:.2} ({})", self.options.threshold, mode_name(self.options.mode));
        let _ = writeln!(s, "recall %           {}", pct(a.map(|a| a.recall)));
        let _ = writeln!(s, "precision %        {}", pct(a.map(|a| a.precision)));
        let _ = writeln!(s, "F1 %               {}", pct(a.map(|a| a.f1)));
        let _ = writeln!(s, "reachable recall % {}", pct(self.reachable_recall));
        let _ = writeln!(s, "reasoning loss %   {}", pct(self.loss));
        write_coverage(&mut s, &self.coverage);
        s
    }
}

fn write_coverage(s: &mut String, c: &Coverage) {
    for (label, ids) in [
        ("missing predictions", &c.missing),
        ("unparseable predictions", &c.unparseable),
        ("predictions without ground truth", &c.extra),
        ("ground truth without edges (skipped)", &c.empty_gt),
    ] {
        if !ids.is_empty() {
            let _ = writeln!(s, "{label}: {}", ids.len());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepImage {
    pub img_id: u64,
    pub recalls: Vec<f64>,
    /// `None` when every recall is zero.
    pub rsi: Option<f64>,
    pub flag: Option<Flag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub thresholds: Vec<f64>,
    pub mode: AggregationMode,
    pub per_image: Vec<SweepImage>,
    /// Aggregate recall at each threshold.
    pub curve: Vec<f64>,
    pub rsi: Option<f64>,
    pub coverage: Coverage,
}

pub fn sweep(preds: &PredictionSet, gt: &[DatasetRecord], thresholds: &[f64], mode: AggregationMode, gating: Gating) -> SweepResult {
    let rows: Vec<(u64, Vec<GraphScore>, Option<Flag>)> = scorable(gt)
        .into_par_iter()
        .map(|(img_id, gt_graph)| {
            let (pred, flag) = preds.resolve(img_id);
            let scores = thresholds
                .iter()
                .map(|&t| {
                    let m = match_entities_with(pred.entities(), gt_graph.entities(), t, gating);
                    score_graph(&pred, &gt_graph, &m).expect("scorable images have edges")
                })
                .collect();
            (img_id, scores, flag)
        })
        .collect();
    let curve: Vec<f64> = (0..thresholds.len())
        .map(|k| {
            let at: Vec<GraphScore> = rows.iter().map(|r| r.1[k]).collect();
            aggregate(&at, mode).map_or(0.0, |a| a.recall)
        })
        .collect();
    let per_image: Vec<SweepImage> = rows
        .into_iter()
        .map(|(img_id, scores, flag)| {
            let recalls: Vec<f64> = scores.iter().map(|s| s.recall).collect();
            SweepImage { img_id, rsi: rsi(&recalls).ok(), recalls, flag }
        })
        .collect();
    let coverage = coverage(preds, gt, per_image.iter().map(|s| (s.img_id, s.flag)));
    SweepResult { thresholds: thresholds.to_vec(), mode, rsi: rsi(&curve).ok(), curve, per_image, coverage }
}

impl SweepResult {
    pub fn per_image_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.per_image {
            let line = Obj::default()
                .int("img_id", s.img_id)
                .raw("recalls", &num_list(&s.recalls))
                .opt_num("rsi", s.rsi)
                .str("flag", s.flag.map(Flag::name))
                .finish();
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let o = Obj::default()
            .raw("thresholds", &num_list(&self.thresholds))
            .str("mode", Some(mode_name(self.mode)))
            .int("images", self.per_image.len())
            .raw("recalls", &num_list(&self.curve))
            .opt_num("rsi", self.rsi);
        coverage_fields(o, &self.coverage).finish()
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images scored  {} ({})", self.per_image.len(), mode_name(self.mode));
        let _ = writeln!(s, "threshold  recall %");
        for (t, r) in self.thresholds.iter().zip(&self.curve) {
            let _ = writeln!(s, "{t:>9.2}  {:>8.2}", r * 100.0);
        }
        let _ = writeln!(s, "RSI        {}", self.rsi.map_or_else(|| "n/a".into(), |v| format!("{v:.4}")));
        write_coverage(&mut s, &self.coverage);
        s
    }
}
