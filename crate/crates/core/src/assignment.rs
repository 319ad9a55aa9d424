//! Minimum-cost bipartite assignment and GIoU-gated entity matching.
//!
//! [`hungarian`] is the shortest-augmenting-path form of the Hungarian method
//! with row/column potentials, O(n^3) on the padded square matrix. Among all
//! optimal assignments it returns the lexicographically smallest `(row, col)`
//! sequence: every optimal assignment uses only edges that are tight under the
//! optimal potentials, so the tie-break is a greedy walk over the tight graph.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::giou;
use crate::graph::{Entity, EntityId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignmentError {
    #[error("cost at ({row}, {col}) is not finite")]
    NonFiniteCost { row: usize, col: usize },
    #[error("expected {expected} cells for the declared shape, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
}

/// Dense row-major cost matrix. Rows are predictions, columns ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, cells: Vec<f64>) -> Result<Self, AssignmentError> {
        if cells.len() != rows * cols {
            return Err(AssignmentError::ShapeMismatch { expected: rows * cols, actual: cells.len() });
        }
        if let Some(i) = cells.iter().position(|c| !c.is_finite()) {
            return Err(AssignmentError::NonFiniteCost { row: i / cols, col: i % cols });
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut cells = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AssignmentError::ShapeMismatch { expected: rows.len() * cols, actual: cells.len() + r.len() });
            }
            cells.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, cells)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.cols + col]
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row; `min(rows, cols)` entries.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

/// Solve the rectangular assignment problem exactly.
///
/// The matrix is padded to square with a constant, which shifts every
/// assignment's cost equally; padded pairs are dropped from the result.
pub fn hungarian(costs: &CostMatrix) -> Assignment {
    if costs.is_empty() {
        return Assignment { pairs: Vec::new(), cost: 0.0 };
    }
    let n = costs.rows.max(costs.cols);
    let cell = |i: usize, j: usize| -> f64 {
        if i < costs.rows && j < costs.cols {
            costs.get(i, j)
        } else {
            0.0
        }
    };

    // 1-based potentials and matching; index 0 is the virtual start column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cell(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let scale = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| cell(i, j).abs())
        .fold(1.0f64, f64::max);
    let eps = 1e-9 * scale;
    let tight = |i: usize, j: usize| (cell(i, j) - u[i + 1] - v[j + 1]).abs() <= eps;

    let mut col_of: Vec<usize> = vec![0; n];
    let mut row_of: Vec<usize> = vec![0; n];
    for j in 1..=n {
        row_of[j - 1] = row_of_col[j] - 1;
        col_of[row_of_col[j] - 1] = j - 1;
    }
    lexicographic_refine(n, &tight, &mut col_of, &mut row_of);

    let mut pairs = Vec::with_capacity(costs.rows.min(costs.cols));
    let mut cost = 0.0;
    for (i, &j) in col_of.iter().enumerate().take(costs.rows) {
        if j < costs.cols {
            pairs.push((i, j));
            cost += costs.get(i, j);
        }
    }
    Assignment { pairs, cost }
}

/// Rewrite a perfect matching on the tight graph into the lexicographically
/// smallest one, fixing rows in order and re-routing displaced rows along
/// alternating paths.
fn lexicographic_refine(
    n: usize,
    tight: &dyn Fn(usize, usize) -> bool,
    col_of: &mut [usize],
    row_of: &mut [usize],
) {
    let mut fixed = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if !tight(i, j) {
                continue;
            }
            if col_of[i] == j {
                break;
            }
            let holder = row_of[j];
            if fixed[holder] {
                continue;
            }
            // Displace `holder` from `j`; it must reach the column `i` gives up.
            let target = col_of[i];
            let mut visited = vec![false; n];
            visited[i] = true;
            let mut path = Vec::new();
            if reroute(holder, j, target, tight, row_of, &fixed, &mut visited, &mut path) {
                // path holds (row, new_col) steps ending at `target`
                for &(r, c) in &path {
                    col_of[r] = c;
                    row_of[c] = r;
                }
                col_of[i] = j;
                row_of[j] = i;
                break;
            }
        }
        fixed[i] = true;
    }
}

#[allow(clippy::too_many_arguments)]
fn reroute(
    row: usize,
    forbidden: usize,
    target: usize,
    tight: &dyn Fn(usize, usize) -> bool,
    row_of: &[usize],
    fixed: &[bool],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    visited[row] = true;
    for c in 0..row_of.len() {
        if c == forbidden || !tight(row, c) {
            continue;
        }
        if c == target {
            path.push((row, c));
            return true;
        }
        let next = row_of[c];
        if fixed[next] || visited[next] {
            continue;
        }
        path.push((row, c));
        if reroute(next, forbidden, target, tight, row_of, fixed, visited, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// When the GIoU threshold is applied relative to the global assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gating {
    /// Assign on `1 - GIoU` over all cells, then drop pairs under threshold.
    #[default]
    PostAssignment,
    /// Price sub-threshold cells above any feasible total before assigning.
    PreMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: EntityId,
    pub gt: EntityId,
    pub giou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EntityMatching {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_pred: BTreeSet<EntityId>,
    pub unmatched_gt: BTreeSet<EntityId>,
}

impl EntityMatching {
    pub fn pred_to_gt(&self) -> BTreeMap<EntityId, EntityId> {
        self.pairs.iter().map(|p| (p.pred, p.gt)).collect()
    }

    pub fn matched_gt(&self) -> BTreeSet<EntityId> {
        self.pairs.iter().map(|p| p.gt).collect()
    }
}

/// Match predicted to ground-truth entities on box geometry alone.
pub fn match_entities(pred: &[Entity], gt: &[Entity], threshold: f64) -> EntityMatching {
    match_entities_with(pred, gt, threshold, Gating::PostAssignment)
}

pub fn match_entities_with(pred: &[Entity], gt: &[Entity], threshold: f64, gating: Gating) -> EntityMatching {
    let overlaps: Vec<f64> = pred
        .iter()
        .flat_map(|p| gt.iter().map(move |g| giou(&p.bbox, &g.bbox)))
        .collect();
    let masked_cost = 2.0 * pred.len().min(gt.len()) as f64 + 1.0;
    let cells = overlaps
        .iter()
        .map(|&o| match gating {
            Gating::PreMask if o < threshold => masked_cost,
            _ => 1.0 - o,
        })
        .collect();
    // GIoU is always finite for valid boxes.
    let costs = CostMatrix::new(pred.len(), gt.len(), cells).expect("finite costs");
    let assignment = hungarian(&costs);

    let mut matching = EntityMatching {
        pairs: Vec::new(),
        unmatched_pred: pred.iter().map(|e| e.id).collect(),
        unmatched_gt: gt.iter().map(|e| e.id).collect(),
    };
    for (r, c) in assignment.pairs {
        let overlap = overlaps[r * gt.len() + c];
        if overlap >= threshold {
            matching.unmatched_pred.remove(&pred[r].id);
            matching.unmatched_gt.remove(&gt[c].id);
            matching.pairs.push(MatchedPair { pred: pred[r].id, gt: gt[c].id, giou: overlap });
        }
    }
    matching
}
