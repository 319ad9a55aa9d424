//! Monte Carlo tree search over the region → entity → causality action loop.
//!
//! Each tree node holds a [`ReasoningState`]; its children are the distinct
//! parsed outcomes of sampling the next action from a [`Backend`]. One
//! iteration runs selection (unvisited children first, then UCT), expansion,
//! a greedy simulated rollout scored against the ground-truth graph, and
//! backpropagation. An evaluated node keeps a running mean of its own leaf
//! values; every ancestor's Q is the visit-weighted mean of its children's Q.
//!
//! The tree is an arena owned by one search; only the backend calls inside an
//! expansion may run concurrently.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::match_entities;
use crate::backend::{Backend, BackendError, ChatRequest, DecodeParams, ImageRef};
use crate::geometry::BoundingBox;
use crate::graph::CausalGraph;
use crate::metrics::score_graph;
use crate::parser::{
    graph_from_pairs, parse_causal_pairs, parse_entity_pairs, parse_region_choice, Grammar, NamedBoxPair, ParseError,
    RegionChoice,
};
use crate::prompt::{render_e2e_prompt, render_prompt, Prompt, PromptError};
use crate::reward::RewardWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    RegionSelection,
    EntityRecognition,
    CausalityOrientation,
}

impl Action {
    pub fn successor(self) -> Self {
        match self {
            Action::RegionSelection => Action::EntityRecognition,
            Action::EntityRecognition => Action::CausalityOrientation,
            Action::CausalityOrientation => Action::RegionSelection,
        }
    }

    pub fn grammar(self) -> Grammar {
        match self {
            Action::RegionSelection => Grammar::Region,
            Action::EntityRecognition => Grammar::Entity,
            Action::CausalityOrientation => Grammar::Causality,
        }
    }
}

/// True when `actions` follows region → entity → causality → region …
/// from the start, possibly truncated.
pub fn is_legal_action_sequence(actions: &[Action]) -> bool {
    let mut expected = Action::RegionSelection;
    for &a in actions {
        if a != expected {
            return false;
        }
        expected = a.successor();
    }
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReasoningState {
    pub explored_regions: Vec<(String, BoundingBox)>,
    /// Confirmed cause → effect pairs, deduplicated, in discovery order.
    pub discovered_causality: Vec<NamedBoxPair>,
    /// Pairs from the latest entity recognition, in full-image coordinates,
    /// awaiting causality orientation.
    pub candidate_pairs: Vec<NamedBoxPair>,
    pub last_action: Option<Action>,
    pub step_index: u32,
}

impl ReasoningState {
    pub fn next_action(&self) -> Action {
        self.last_action.map_or(Action::RegionSelection, Action::successor)
    }

    /// Window sent for entity recognition: the focused region, padded.
    pub fn focus_window(&self, padding: f64) -> Option<BoundingBox> {
        self.explored_regions.last().map(|(_, b)| b.padded(padding))
    }

    pub fn graph(&self) -> CausalGraph {
        graph_from_pairs(&self.discovered_causality)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepResult {
    Region { choice: RegionChoice },
    EntityPairs { pairs: Vec<NamedBoxPair> },
    CausalPairs { pairs: Vec<NamedBoxPair> },
    Malformed { error: String },
}

/// One model call on a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: Option<Action>,
    pub system_text: String,
    pub user_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<BoundingBox>,
    pub model_text: String,
    pub result: StepResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeafValue {
    /// Graph recall of the discovered causality.
    Recall,
    /// Causal reward of the discovered causality divided by the weight sum,
    /// with full format credit.
    Reward { weights: RewardWeights },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Maximum number of actions on any path, tree and rollout combined.
    pub step_limit: u32,
    /// Samples drawn per expansion.
    pub branching: u32,
    pub iterations: u32,
    pub exploration_weight: f64,
    /// GIoU threshold used when valuing states.
    pub threshold: f64,
    pub crop_padding: f64,
    /// Send only the focused window for entity recognition. When false the
    /// full image is sent and boxes are taken as full-image coordinates.
    pub crop_entities: bool,
    pub leaf_value: LeafValue,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            step_limit: 12,
            branching: 10,
            iterations: 20,
            exploration_weight: core::f64::consts::SQRT_2,
            threshold: 0.5,
            crop_padding: 0.1,
            crop_entities: true,
            leaf_value: LeafValue::Recall,
            seed: 0,
            max_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("node has not been visited")]
    UnvisitedNode,
    #[error("ground-truth graph has no edges")]
    EmptyGroundTruth,
    #[error("invalid search parameters: {0}")]
    InvalidParams(&'static str),
    #[error("node is terminal")]
    TerminalNode,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl SearchParams {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.step_limit == 0 {
            return Err(SearchError::InvalidParams("step limit must be positive"));
        }
        if self.branching == 0 {
            return Err(SearchError::InvalidParams("branching must be positive"));
        }
        if self.iterations == 0 {
            return Err(SearchError::InvalidParams("iterations must be positive"));
        }
        if !(self.exploration_weight.is_finite() && self.exploration_weight >= 0.0) {
            return Err(SearchError::InvalidParams("exploration weight must be finite and non-negative"));
        }
        Ok(())
    }
}

/// `Q + w * sqrt(ln(N_parent) / N)`.
pub fn uct_score(node_q: f64, node_visits: u32, parent_visits: u32, w: f64) -> Result<f64, SearchError> {
    if node_visits == 0 || parent_visits == 0 {
        return Err(SearchError::UnvisitedNode);
    }
    Ok(node_q + w * libm::sqrt(libm::log(parent_visits as f64) / node_visits as f64))
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub state: ReasoningState,
    /// The model call that produced this state; `None` at the root.
    pub incoming: Option<Step>,
    pub q_value: f64,
    pub visit_count: u32,
    pub children: Vec<NodeId>,
    pub terminal: bool,
    pub expanded: bool,
    /// Greedy continuation recorded when this node was first simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<Rollout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub steps: Vec<Step>,
    pub final_state: ReasoningState,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn new(root_state: ReasoningState) -> Self {
        Self {
            nodes: vec![SearchNode {
                id: 0,
                parent: None,
                state: root_state,
                incoming: None,
                q_value: 0.0,
                visit_count: 0,
                children: Vec::new(),
                terminal: false,
                expanded: false,
                rollout: None,
            }],
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn root(&self) -> &SearchNode {
        &self.nodes[Self::ROOT]
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Attach a child and return its id.
    pub fn add_child(&mut self, parent: NodeId, state: ReasoningState, incoming: Step, terminal: bool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(SearchNode {
            id,
            parent: Some(parent),
            state,
            incoming: Some(incoming),
            q_value: 0.0,
            visit_count: 0,
            children: Vec::new(),
            terminal,
            expanded: false,
            rollout: None,
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Nested `{action, q, n, terminal, text, children}` view for debugging.
    pub fn dump(&self) -> TreeDump {
        self.dump_from(Self::ROOT)
    }

    fn dump_from(&self, id: NodeId) -> TreeDump {
        let n = &self.nodes[id];
        TreeDump {
            id,
            action: n.incoming.as_ref().and_then(|s| s.action),
            q: n.q_value,
            n: n.visit_count,
            terminal: n.terminal,
            text: n.incoming.as_ref().map(|s| s.model_text.clone()).unwrap_or_default(),
            children: n.children.iter().map(|&c| self.dump_from(c)).collect(),
        }
    }

    /// Check the backpropagation invariants over the whole tree: each node
    /// with visited children carries their visit-weighted mean Q, and no
    /// node has fewer visits than its children combined.
    pub fn check_invariants(&self) -> Result<(), String> {
        for n in &self.nodes {
            let visited: Vec<&SearchNode> =
                n.children.iter().map(|&c| &self.nodes[c]).filter(|c| c.visit_count > 0).collect();
            let child_visits: u32 = visited.iter().map(|c| c.visit_count).sum();
            if child_visits > n.visit_count {
                return Err(alloc::format!(
                    "node {} has {} visits but its children have {}",
                    n.id,
                    n.visit_count,
                    child_visits
                ));
            }
            if child_visits > 0 {
                let weighted: f64 = visited.iter().map(|c| c.q_value * c.visit_count as f64).sum();
                let expected = weighted / child_visits as f64;
                if (expected - n.q_value).abs() > 1e-12 {
                    return Err(alloc::format!("node {} has Q {} but children give {}", n.id, n.q_value, expected));
                }
            }
            if !(0.0..=1.0).contains(&n.q_value) {
                return Err(alloc::format!("node {} has Q {} outside [0, 1]", n.id, n.q_value));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub id: NodeId,
    pub action: Option<Action>,
    pub q: f64,
    pub n: u32,
    pub terminal: bool,
    pub text: String,
    pub children: Vec<TreeDump>,
}

/// Everything a search needs besides the tree itself.
pub struct SearchContext<'a, B: Backend + ?Sized> {
    pub backend: &'a B,
    pub gt: &'a CausalGraph,
    pub image: Option<ImageRef>,
    pub params: SearchParams,
}

impl<'a, B: Backend + ?Sized> SearchContext<'a, B> {
    pub fn new(backend: &'a B, gt: &'a CausalGraph, image: Option<ImageRef>, params: SearchParams) -> Self {
        Self { backend, gt, image, params }
    }

    /// Value of a state against the ground truth, in `[0, 1]`.
    pub fn state_value(&self, state: &ReasoningState) -> f64 {
        let pred = state.graph();
        let matching = match_entities(pred.entities(), self.gt.entities(), self.params.threshold);
        let Ok(score) = score_graph(&pred, self.gt, &matching) else {
            return 0.0;
        };
        match self.params.leaf_value {
            LeafValue::Recall => score.recall,
            LeafValue::Reward { weights } => {
                (weights.lambda_r * score.recall + weights.lambda_p * score.precision + weights.lambda_f) / weights.sum()
            }
        }
    }

    pub fn state_recall(&self, state: &ReasoningState) -> f64 {
        let pred = state.graph();
        let matching = match_entities(pred.entities(), self.gt.entities(), self.params.threshold);
        score_graph(&pred, self.gt, &matching).map_or(0.0, |s| s.recall)
    }

    fn request(&self, action: Action, state: &ReasoningState, decode: DecodeParams) -> Result<(ChatRequest, Prompt), PromptError> {
        let prompt = render_prompt(action, state)?;
        let crop = match action {
            Action::EntityRecognition if self.params.crop_entities => state.focus_window(self.params.crop_padding),
            _ => None,
        };
        let request = ChatRequest {
            system_text: prompt.system_text.clone(),
            user_text: prompt.user_text.clone(),
            image: self.image.clone(),
            crop,
            action: Some(action),
            decode,
        };
        Ok((request, prompt))
    }
}

/// Apply one model output to `state`. Returns the new state, the parsed
/// result and whether the new state is terminal.
pub fn advance(
    state: &ReasoningState,
    action: Action,
    model_text: &str,
    crop: Option<BoundingBox>,
    step_limit: u32,
) -> Result<(ReasoningState, StepResult, bool), ParseError> {
    let mut next = state.clone();
    next.last_action = Some(action);
    next.step_index += 1;
    let mut terminal = next.step_index >= step_limit;
    let result = match action {
        Action::RegionSelection => {
            let choice = parse_region_choice(model_text)?;
            match &choice {
                RegionChoice::EndTrace => terminal = true,
                RegionChoice::Region { name, bbox } => next.explored_regions.push((name.clone(), *bbox)),
            }
            StepResult::Region { choice }
        }
        Action::EntityRecognition => {
            let mut pairs = parse_entity_pairs(model_text)?;
            if let Some(window) = crop {
                // boxes come back in the window's frame
                for p in &mut pairs {
                    *p = p.translate(window.x1(), window.y1()).expect("shift by a non-negative offset");
                }
            }
            next.candidate_pairs = pairs.clone();
            StepResult::EntityPairs { pairs }
        }
        Action::CausalityOrientation => {
            let pairs = parse_causal_pairs(model_text)?;
            for p in &pairs {
                if !next.discovered_causality.iter().any(|q| q.same_content(p)) {
                    next.discovered_causality.push(p.clone());
                }
            }
            next.candidate_pairs.clear();
            StepResult::CausalPairs { pairs }
        }
    };
    Ok((next, result, terminal))
}

/// Root-to-leaf path chosen by selection.
pub fn select(tree: &SearchTree, w: f64) -> Vec<NodeId> {
    let mut path = vec![SearchTree::ROOT];
    let mut id = SearchTree::ROOT;
    loop {
        let node = tree.node(id);
        if node.terminal || !node.expanded || node.children.is_empty() {
            return path;
        }
        let next = node
            .children
            .iter()
            .copied()
            .find(|&c| tree.node(c).visit_count == 0)
            .unwrap_or_else(|| {
                let mut best = node.children[0];
                let mut best_score = f64::NEG_INFINITY;
                for &c in &node.children {
                    let child = tree.node(c);
                    let score = uct_score(child.q_value, child.visit_count, node.visit_count, w).unwrap_or(f64::NEG_INFINITY);
                    if score > best_score {
                        best = c;
                        best_score = score;
                    }
                }
                best
            });
        path.push(next);
        id = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadEnd {
    AllChildrenMalformed,
    BackendFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub children: Vec<NodeId>,
    /// Completions merged into an existing sibling.
    pub duplicates: usize,
    pub malformed: usize,
    pub failures: Vec<BackendError>,
    /// Set when no child could be created and the node became terminal.
    pub dead_end: Option<DeadEnd>,
}

/// Sample the successor action at `node` and attach one child per distinct
/// parsed outcome.
pub fn expand<B: Backend + ?Sized>(tree: &mut SearchTree, node: NodeId, ctx: &SearchContext<'_, B>) -> Result<Expansion, SearchError> {
    let parent = tree.node(node);
    if parent.terminal {
        return Err(SearchError::TerminalNode);
    }
    let state = parent.state.clone();
    let action = state.next_action();
    let decode = DecodeParams {
        seed: Some(ctx.params.seed.wrapping_add((node as u64) << 20)),
        max_tokens: ctx.params.max_tokens,
        ..DecodeParams::sampling()
    };
    let (request, prompt) = ctx.request(action, &state, decode)?;
    let results = ctx.backend.sample(&request, ctx.params.branching as usize);

    let mut expansion =
        Expansion { children: Vec::new(), duplicates: 0, malformed: 0, failures: Vec::new(), dead_end: None };
    let mut seen: Vec<StepResult> = Vec::new();
    for result in results {
        let response = match result {
            Ok(r) => r,
            Err(BackendError::ScriptExhausted) => continue,
            Err(e) => {
                expansion.failures.push(e);
                continue;
            }
        };
        let Ok((next, parsed, terminal)) = advance(&state, action, &response.text, request.crop, ctx.params.step_limit)
        else {
            expansion.malformed += 1;
            continue;
        };
        if seen.contains(&parsed) {
            expansion.duplicates += 1;
            continue;
        }
        seen.push(parsed.clone());
        let step = Step {
            action: Some(action),
            system_text: prompt.system_text.clone(),
            user_text: prompt.user_text.clone(),
            crop: request.crop,
            model_text: response.text,
            result: parsed,
        };
        expansion.children.push(tree.add_child(node, next, step, terminal));
    }
    let parent = tree.node_mut(node);
    parent.expanded = true;
    if expansion.children.is_empty() {
        parent.terminal = true;
        expansion.dead_end =
            Some(if expansion.failures.is_empty() { DeadEnd::AllChildrenMalformed } else { DeadEnd::BackendFailure });
    }
    Ok(expansion)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub rollout: Rollout,
    pub failure: Option<BackendError>,
}

/// Greedy continuation from `node` until END TRACE, an unparseable output,
/// or the step limit. The value is that of the deepest state reached.
pub fn simulate<B: Backend + ?Sized>(tree: &SearchTree, node: NodeId, ctx: &SearchContext<'_, B>) -> Simulation {
    let start = tree.node(node);
    let mut state = start.state.clone();
    let mut steps = Vec::new();
    let mut failure = None;
    let mut terminal = start.terminal || state.step_index >= ctx.params.step_limit;
    while !terminal {
        let action = state.next_action();
        let decode = DecodeParams { max_tokens: ctx.params.max_tokens, seed: Some(ctx.params.seed), ..DecodeParams::greedy() };
        let Ok((request, prompt)) = ctx.request(action, &state, decode) else {
            break;
        };
        let response = match ctx.backend.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let Ok((next, parsed, done)) = advance(&state, action, &response.text, request.crop, ctx.params.step_limit) else {
            break;
        };
        steps.push(Step {
            action: Some(action),
            system_text: prompt.system_text,
            user_text: prompt.user_text,
            crop: request.crop,
            model_text: response.text,
            result: parsed,
        });
        state = next;
        terminal = done;
    }
    let value = ctx.state_value(&state);
    Simulation { rollout: Rollout { steps, final_state: state, value }, failure }
}

/// Push `leaf_value` up `path`. The last node takes a running mean; every
/// ancestor recomputes Q from its visited children.
pub fn backpropagate(tree: &mut SearchTree, path: &[NodeId], leaf_value: f64) {
    let Some((&leaf, ancestors)) = path.split_last() else {
        return;
    };
    let node = tree.node_mut(leaf);
    node.visit_count += 1;
    node.q_value += (leaf_value - node.q_value) / node.visit_count as f64;
    for &id in ancestors.iter().rev() {
        let (weighted, visits) = tree
            .node(id)
            .children
            .iter()
            .map(|&c| tree.node(c))
            .filter(|c| c.visit_count > 0)
            .fold((0.0, 0u32), |(w, n), c| (w + c.q_value * c.visit_count as f64, n + c.visit_count));
        let node = tree.node_mut(id);
        node.visit_count += 1;
        if visits > 0 {
            node.q_value = weighted / visits as f64;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Discovered causality of the final state.
    pub final_pairs: Vec<NamedBoxPair>,
    /// Graph recall of `final_pairs` against the ground truth.
    pub value: f64,
    /// A backend failure cut the search or rollout short.
    pub degraded: bool,
}

impl Trajectory {
    pub fn final_graph(&self) -> CausalGraph {
        graph_from_pairs(&self.final_pairs)
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().filter_map(|s| s.action).collect()
    }

    /// The model outputs concatenated in order.
    pub fn concatenated(&self) -> String {
        let texts: Vec<&str> = self.steps.iter().map(|s| s.model_text.as_str()).collect();
        texts.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub trajectory: Trajectory,
    pub tree: SearchTree,
    pub iterations_completed: u32,
    pub backend_failures: Vec<BackendError>,
}

/// Descend from the root through the highest-Q visited child (first created
/// on ties), then finish with the stored rollout of the last node.
pub fn extract_trajectory<B: Backend + ?Sized>(tree: &SearchTree, ctx: &SearchContext<'_, B>) -> Trajectory {
    let mut steps = Vec::new();
    let mut id = SearchTree::ROOT;
    loop {
        let node = tree.node(id);
        let mut best: Option<&SearchNode> = None;
        for &c in &node.children {
            let child = tree.node(c);
            if child.visit_count > 0 && best.is_none_or(|b| child.q_value > b.q_value) {
                best = Some(child);
            }
        }
        let Some(child) = best else { break };
        steps.extend(child.incoming.clone());
        id = child.id;
    }
    let node = tree.node(id);
    let mut final_state = node.state.clone();
    if !node.terminal {
        if let Some(r) = &node.rollout {
            steps.extend(r.steps.iter().cloned());
            final_state = r.final_state.clone();
        }
    }
    Trajectory {
        steps,
        value: ctx.state_recall(&final_state),
        final_pairs: final_state.discovered_causality,
        degraded: false,
    }
}

/// Run the configured number of search iterations and extract the best
/// trajectory. Backend failures never abort the search; they mark the
/// result as degraded.
pub fn run_search<B: Backend + ?Sized>(ctx: &SearchContext<'_, B>) -> Result<SearchOutcome, SearchError> {
    ctx.params.validate()?;
    if ctx.gt.edges().is_empty() {
        return Err(SearchError::EmptyGroundTruth);
    }
    let mut tree = SearchTree::new(ReasoningState::default());
    let mut failures = Vec::new();
    for _ in 0..ctx.params.iterations {
        let mut path = select(&tree, ctx.params.exploration_weight);
        let leaf = *path.last().expect("path starts at root");
        if !tree.node(leaf).terminal && !tree.node(leaf).expanded {
            let expansion = expand(&mut tree, leaf, ctx)?;
            failures.extend(expansion.failures);
            if let Some(&first) = expansion.children.first() {
                path.push(first);
            }
        }
        let target = *path.last().expect("non-empty path");
        let value = if tree.node(target).terminal {
            ctx.state_value(&tree.node(target).state)
        } else {
            let sim = simulate(&tree, target, ctx);
            failures.extend(sim.failure);
            let value = sim.rollout.value;
            let node = tree.node_mut(target);
            if node.rollout.is_none() {
                node.rollout = Some(sim.rollout);
            }
            value
        };
        backpropagate(&mut tree, &path, value);
        debug_assert_eq!(tree.check_invariants(), Ok(()));
    }
    let mut trajectory = extract_trajectory(&tree, ctx);
    trajectory.degraded = !failures.is_empty();
    Ok(SearchOutcome { trajectory, tree, iterations_completed: ctx.params.iterations, backend_failures: failures })
}

/// Single end-to-end call at temperature 0.
pub fn vanilla_baseline<B: Backend + ?Sized>(ctx: &SearchContext<'_, B>) -> Result<Trajectory, SearchError> {
    if ctx.gt.edges().is_empty() {
        return Err(SearchError::EmptyGroundTruth);
    }
    let prompt = render_e2e_prompt();
    let request = ChatRequest {
        system_text: prompt.system_text.clone(),
        user_text: prompt.user_text.clone(),
        image: ctx.image.clone(),
        crop: None,
        action: None,
        decode: DecodeParams { max_tokens: ctx.params.max_tokens, seed: Some(ctx.params.seed), ..DecodeParams::greedy() },
    };
    let response = ctx.backend.complete(&request)?;
    let (pairs, result) = match parse_causal_pairs(&response.text) {
        Ok(pairs) => (pairs.clone(), StepResult::CausalPairs { pairs }),
        Err(e) => (Vec::new(), StepResult::Malformed { error: e.to_string() }),
    };
    let state = ReasoningState { discovered_causality: pairs, ..ReasoningState::default() };
    let value = ctx.state_recall(&state);
    Ok(Trajectory {
        steps: vec![Step {
            action: None,
            system_text: prompt.system_text,
            user_text: prompt.user_text,
            crop: None,
            model_text: response.text,
            result,
        }],
        final_pairs: state.discovered_causality,
        value,
        degraded: false,
    })
}
