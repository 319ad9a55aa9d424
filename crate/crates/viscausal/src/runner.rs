//! Batch trajectory synthesis over a dataset.
//!
//! For every image with ground-truth edges the runner performs the tree
//! search and the one-step baseline, writes `images/<img_id>.json` followed
//! by an `images/<img_id>.done` marker, and finally assembles the filter
//! statistics and the SFT corpus of kept trajectories. Images with a marker
//! are loaded instead of recomputed, so an interrupted run can be resumed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use viscausal_core::backend::{Backend, ImageRef};
use viscausal_core::filter::{filter_stats, FilterStats, RecallPair};
use viscausal_core::search::{run_search, vanilla_baseline, SearchContext, SearchParams, Trajectory};

use crate::dataset::DatasetRecord;
use crate::export::{export_sft, SftRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: SearchParams,
    pub out_dir: PathBuf,
    /// Worker threads for per-image work; 0 uses rayon's default.
    pub jobs: usize,
    /// Images resolve to `<image_dir>/<img_id>.<image_ext>`.
    pub image_dir: Option<PathBuf>,
    pub image_ext: String,
    pub dump_trees: bool,
}

impl RunConfig {
    pub fn new(out_dir: impl Into<PathBuf>, params: SearchParams) -> Self {
        Self { params, out_dir: out_dir.into(), jobs: 0, image_dir: None, image_ext: "jpg".into(), dump_trees: false }
    }

    fn image_for(&self, img_id: u64) -> Option<String> {
        self.image_dir.as_ref().map(|d| d.join(format!("{img_id}.{}", self.image_ext)).display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageOutcome {
    pub img_id: u64,
    pub image: Option<String>,
    pub searched: Trajectory,
    pub vanilla: Trajectory,
    pub kept: bool,
    pub iterations: u32,
    pub backend_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Completed images, ordered by img_id.
    pub outcomes: Vec<ImageOutcome>,
    pub stats: FilterStats,
    /// Images that failed and were skipped, with the reason.
    pub skipped: Vec<(u64, String)>,
    /// Images loaded from an earlier run.
    pub resumed: usize,
    pub exported: usize,
}

fn image_paths(out: &Path, img_id: u64) -> (PathBuf, PathBuf) {
    let dir = out.join("images");
    (dir.join(format!("{img_id}.json")), dir.join(format!("{img_id}.done")))
}

fn load_done(out: &Path, img_id: u64) -> Option<ImageOutcome> {
    let (json, done) = image_paths(out, img_id);
    if !done.exists() {
        return None;
    }
    let text = fs::read_to_string(&json).ok()?;
    match serde_json::from_str(&text) {
        Ok(o) => Some(o),
        Err(e) => {
            log::warn!("image {img_id}: stored result unreadable ({e}); recomputing");
            None
        }
    }
}

fn process<B: Backend + Sync + ?Sized>(backend: &B, record: &DatasetRecord, config: &RunConfig) -> anyhow::Result<ImageOutcome> {
    let gt = record.graph();
    let image = config.image_for(record.img_id);
    let params = SearchParams { seed: config.params.seed.wrapping_add(record.img_id), ..config.params };
    let ctx = SearchContext::new(backend, &gt, image.clone().map(|path| ImageRef::Path { path }), params);
    let outcome = run_search(&ctx)?;
    let vanilla = vanilla_baseline(&ctx)?;
    for f in &outcome.backend_failures {
        log::warn!("image {}: backend failure during search: {f}", record.img_id);
    }
    if config.dump_trees {
        let path = config.out_dir.join("trees").join(format!("{}.json", record.img_id));
        fs::write(path, serde_json::to_string(&outcome.tree.dump())?)?;
    }
    let kept = RecallPair::new(vanilla.value, outcome.trajectory.value).keep();
    let result = ImageOutcome {
        img_id: record.img_id,
        image,
        searched: outcome.trajectory,
        vanilla,
        kept,
        iterations: outcome.iterations_completed,
        backend_failures: outcome.backend_failures.len(),
    };
    let (json, done) = image_paths(&config.out_dir, record.img_id);
    fs::write(&json, serde_json::to_string(&result)?)?;
    fs::write(&done, b"")?;
    Ok(result)
}

/// Search every record with edges, resuming finished images.
type ImageResult = Result<(ImageOutcome, bool), String>;

pub fn run<B: Backend + Sync + ?Sized>(backend: &B, records: &[DatasetRecord], config: &RunConfig) -> anyhow::Result<RunSummary> {
    config.params.validate()?;
    fs::create_dir_all(config.out_dir.join("images"))?;
    if config.dump_trees {
        fs::create_dir_all(config.out_dir.join("trees"))?;
    }
    let mut todo: Vec<&DatasetRecord> = records.iter().filter(|r| r.relationship_count() > 0).collect();
    todo.sort_by_key(|r| r.img_id);
    for r in records.iter().filter(|r| r.relationship_count() == 0) {
        log::info!("image {}: no ground-truth edges; skipped", r.img_id);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.jobs).build()?;
    let results: Vec<(u64, ImageResult)> = pool.install(|| {
        todo.par_iter()
            .map(|r| {
                if let Some(done) = load_done(&config.out_dir, r.img_id) {
                    return (r.img_id, Ok((done, true)));
                }
                let result = process(backend, r, config).map(|o| (o, false)).map_err(|e| format!("{e:#}"));
                if let Err(e) = &result {
                    log::error!("image {}: {e}; skipped", r.img_id);
                }
                (r.img_id, result)
            })
            .collect()
    });
    let mut outcomes = Vec::new();
    let mut skipped = Vec::new();
    let mut resumed = 0;
    for (img_id, r) in results {
        match r {
            Ok((o, was_done)) => {
                resumed += usize::from(was_done);
                outcomes.push(o);
            }
            Err(e) => skipped.push((img_id, e)),
        }
    }
    let pairs: Vec<RecallPair> = outcomes.iter().map(|o| RecallPair::new(o.vanilla.value, o.searched.value)).collect();
    let stats = filter_stats(&pairs);
    fs::write(config.out_dir.join("filter_stats.json"), serde_json::to_string_pretty(&stats)?)?;
    let sft: Vec<SftRecord> =
        outcomes.iter().filter(|o| o.kept).map(|o| SftRecord::from_trajectory(o.img_id, o.image.clone(), &o.searched)).collect();
    let exported = export_sft(config.out_dir.join("sft.jsonl"), &sft)?;
    Ok(RunSummary { outcomes, stats, skipped, resumed, exported })
}

impl RunSummary {
    /// Mean/median recall table, with and without both-zero pairs.
    pub fn table(&self) -> String {
        let s = &self.stats;
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} {:>6} {:>14} {:>14}", "", "images", "vanilla", "searched");
        for (label, c) in [("with ZERO", &s.with_zero), ("without ZERO", &s.without_zero)] {
            let _ = writeln!(out, "{label:<14} {:>6} {:>6.2} / {:<5.2} {:>6.2} / {:<5.2}  (mean / median)", c.count, c.vanilla_mean, c.vanilla_median, c.searched_mean, c.searched_median);
        }
        let _ = writeln!(out, "ZERO pairs     {}", s.zero_count);
        let _ = writeln!(out, "kept           {} (vanilla mean {:.2}, searched mean {:.2})", s.kept, s.kept_vanilla_mean, s.kept_searched_mean);
        let _ = writeln!(out, "exported       {}", self.exported);
        if self.resumed > 0 {
            let _ = writeln!(out, "resumed        {}", self.resumed);
        }
        if !self.skipped.is_empty() {
            let _ = writeln!(out, "skipped        {}", self.skipped.len());
        }
        out
    }
}
