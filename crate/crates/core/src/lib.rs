//! Causal-graph evaluation and tree-of-thought search for visual causal
//! discovery.
//!
//! - [`geometry`]: boxes, IoU and GIoU.
//! - [`graph`]: entities, directed causal edges, removal effects.
//! - [`assignment`]: Hungarian matching of predicted to ground-truth entities.
//! - [`metrics`]: recall/precision/F1, reachable recall, reasoning loss, RSI.
//! - [`parser`]: tagged model-output grammars.
//! - [`reward`]: the composite causal reward.
//! - [`backend`], [`prompt`], [`search`]: the action loop and its MCTS driver.
//! - [`filter`]: keeping trajectories that beat the baseline.

#![no_std]

extern crate alloc;

pub mod assignment;
pub mod backend;
pub mod filter;
pub mod geometry;
pub mod graph;
pub mod json;
pub mod metrics;
pub mod parser;
pub mod prompt;
pub mod reward;
pub mod search;

pub use assignment::{hungarian, match_entities, match_entities_with, CostMatrix, EntityMatching, Gating};
pub use backend::{Backend, BackendError, ChatRequest, ChatResponse, DecodeParams, ImageRef};
pub use geometry::{giou, iou, BoundingBox, BoxError};
pub use graph::{build_graph, CausalEdge, CausalGraph, Entity, EntityId, GraphError};
pub use metrics::{reasoning_loss, rsi, score_graph, threshold_sweep, GraphScore, MetricsError};
pub use parser::{parse_causal_pairs, Grammar, NamedBoxPair, ParseError, RegionChoice};
pub use reward::{causal_reward, RewardConfig, RewardWeights};
pub use search::{run_search, vanilla_baseline, Action, ReasoningState, SearchContext, SearchParams, Trajectory};
