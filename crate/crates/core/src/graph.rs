//! Visually grounded causal graphs and removal interventions.
//!
//! Entities are identified by integer id; labels are metadata only and play
//! no part in structural comparison. An edge `cause -> effect` states that
//! removing `cause` changes the state of `effect`.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u64);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub label: String,
    pub bbox: BoundingBox,
}

impl Entity {
    pub fn new(id: u64, label: impl Into<String>, bbox: BoundingBox) -> Self {
        Self { id: EntityId(id), label: label.into(), bbox }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalEdge {
    pub cause: EntityId,
    pub effect: EntityId,
    /// Mechanism label such as `support`; absent on model predictions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
}

impl CausalEdge {
    pub fn new(cause: u64, effect: u64) -> Self {
        Self { cause: EntityId(cause), effect: EntityId(effect), predicate: None }
    }

    pub fn with_predicate(mut self, predicate: impl Into<String>) -> Self {
        self.predicate = Some(predicate.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("duplicate entity id {0}")]
    DuplicateEntityId(EntityId),
    #[error("entity {0} has an empty label")]
    EmptyLabel(EntityId),
    #[error("edge {cause} -> {effect} references unknown entity {missing}")]
    DanglingEdgeEndpoint { cause: EntityId, effect: EntityId, missing: EntityId },
    #[error("self-loop on entity {0}")]
    SelfLoopEdge(EntityId),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(EntityId, EntityId),
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
}

/// A validated causal graph. Cycles are allowed; self-loops and duplicate
/// `(cause, effect)` pairs are not.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CausalGraph {
    entities: Vec<Entity>,
    edges: Vec<CausalEdge>,
    #[serde(skip)]
    index: BTreeMap<EntityId, usize>,
}

impl CausalGraph {
    pub fn new(entities: Vec<Entity>, edges: Vec<CausalEdge>) -> Result<Self, GraphError> {
        build_graph(entities, edges)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn edges(&self) -> &[CausalEdge] {
        &self.edges
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.index.get(&id).map(|&i| &self.entities[i])
    }

    pub fn contains_edge(&self, cause: EntityId, effect: EntityId) -> bool {
        self.edges.iter().any(|e| e.cause == cause && e.effect == effect)
    }

    pub fn edge_set(&self) -> BTreeSet<(EntityId, EntityId)> {
        self.edges.iter().map(|e| (e.cause, e.effect)).collect()
    }

    /// Entities whose state changes when `id` is removed from the scene:
    /// everything reachable from `id` along directed edges, excluding `id`.
    pub fn removal_effects(&self, id: EntityId) -> Result<BTreeSet<EntityId>, GraphError> {
        if !self.index.contains_key(&id) {
            return Err(GraphError::UnknownEntity(id));
        }
        let mut adjacency: BTreeMap<EntityId, Vec<EntityId>> = BTreeMap::new();
        for e in &self.edges {
            adjacency.entry(e.cause).or_default().push(e.effect);
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([id]);
        while let Some(node) = queue.pop_front() {
            for &next in adjacency.get(&node).map(Vec::as_slice).unwrap_or(&[]) {
                if next != id && seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        Ok(seen)
    }
}

impl<'de> Deserialize<'de> for CausalGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            entities: Vec<Entity>,
            #[serde(default)]
            edges: Vec<CausalEdge>,
        }
        let raw = Raw::deserialize(deserializer)?;
        build_graph(raw.entities, raw.edges).map_err(serde::de::Error::custom)
    }
}

/// Validate entities and edges into a [`CausalGraph`].
pub fn build_graph(entities: Vec<Entity>, edges: Vec<CausalEdge>) -> Result<CausalGraph, GraphError> {
    let mut index = BTreeMap::new();
    for (i, entity) in entities.iter().enumerate() {
        if entity.label.is_empty() {
            return Err(GraphError::EmptyLabel(entity.id));
        }
        if index.insert(entity.id, i).is_some() {
            return Err(GraphError::DuplicateEntityId(entity.id));
        }
    }
    let mut seen = BTreeSet::new();
    for e in &edges {
        if e.cause == e.effect {
            return Err(GraphError::SelfLoopEdge(e.cause));
        }
        for endpoint in [e.cause, e.effect] {
            if !index.contains_key(&endpoint) {
                return Err(GraphError::DanglingEdgeEndpoint {
                    cause: e.cause,
                    effect: e.effect,
                    missing: endpoint,
                });
            }
        }
        if !seen.insert((e.cause, e.effect)) {
            return Err(GraphError::DuplicateEdge(e.cause, e.effect));
        }
    }
    Ok(CausalGraph { entities, edges, index })
}

/// Free-function form of [`CausalGraph::removal_effects`].
pub fn removal_effects(graph: &CausalGraph, id: EntityId) -> Result<BTreeSet<EntityId>, GraphError> {
    graph.removal_effects(id)
}
