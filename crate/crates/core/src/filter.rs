//! Selecting searched trajectories worth training on.
//!
//! A pair (vanilla recall, searched recall) is kept when search strictly
//! improved on the one-step baseline. Pairs where both recalls are zero
//! dominate real runs, so summary statistics are reported with and without
//! them.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallPair {
    pub vanilla: f64,
    pub searched: f64,
}

impl RecallPair {
    pub fn new(vanilla: f64, searched: f64) -> Self {
        Self { vanilla, searched }
    }

    pub fn keep(&self) -> bool {
        self.searched > self.vanilla
    }

    pub fn is_zero(&self) -> bool {
        self.vanilla == 0.0 && self.searched == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CenterStats {
    pub count: usize,
    pub vanilla_mean: f64,
    pub vanilla_median: f64,
    pub searched_mean: f64,
    pub searched_median: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterStats {
    pub with_zero: CenterStats,
    pub without_zero: CenterStats,
    pub zero_count: usize,
    pub kept: usize,
    pub kept_vanilla_mean: f64,
    pub kept_searched_mean: f64,
}

/// Mean; 0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median, averaging the two middle values for even counts; 0 when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn center(pairs: &[&RecallPair]) -> CenterStats {
    let vanilla: Vec<f64> = pairs.iter().map(|p| p.vanilla).collect();
    let searched: Vec<f64> = pairs.iter().map(|p| p.searched).collect();
    CenterStats {
        count: pairs.len(),
        vanilla_mean: mean(&vanilla),
        vanilla_median: median(&vanilla),
        searched_mean: mean(&searched),
        searched_median: median(&searched),
    }
}

pub fn filter_stats(pairs: &[RecallPair]) -> FilterStats {
    let all: Vec<&RecallPair> = pairs.iter().collect();
    let nonzero: Vec<&RecallPair> = pairs.iter().filter(|p| !p.is_zero()).collect();
    let kept: Vec<&RecallPair> = pairs.iter().filter(|p| p.keep()).collect();
    let kept_stats = center(&kept);
    FilterStats {
        with_zero: center(&all),
        without_zero: center(&nonzero),
        zero_count: pairs.len() - nonzero.len(),
        kept: kept.len(),
        kept_vanilla_mean: kept_stats.vanilla_mean,
        kept_searched_mean: kept_stats.searched_mean,
    }
}

/// Indices of the pairs that pass the filter.
pub fn kept_indices(pairs: &[RecallPair]) -> Vec<usize> {
    pairs.iter().enumerate().filter(|(_, p)| p.keep()).map(|(i, _)| i).collect()
}
