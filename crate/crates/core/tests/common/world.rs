//! Scripted search worlds whose trees can be enumerated independently of
//! the search.

use std::cell::Cell;
use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use super::{bx, fmt_box, rng};
use viscausal_core::backend::{Backend, BackendError, ChatRequest, ChatResponse};
use viscausal_core::geometry::BoundingBox;
use viscausal_core::graph::{build_graph, CausalEdge, CausalGraph, Entity};
use viscausal_core::search::Action;


/// What a world node's incoming model output says.
#[derive(Debug, Clone)]
pub enum Incoming {
    Root,
    Region { bbox: BoundingBox },
    EndTrace,
    Entities,
    /// Indices into the ground-truth edge list confirmed by this output.
    Causal { confirmed: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct WorldNode {
    pub id: usize,
    pub depth: u32,
    pub incoming: Incoming,
    pub children: Vec<usize>,
    pub next: Action,
}

/// An explicit tree of model outputs over the region/entity/causality loop.
/// Every output carries a token naming the node it leads to, so the
/// scripted backend can tell which node a prompt comes from without
/// consulting the search state.
#[derive(Debug, Clone)]
pub struct World {
    pub gt: CausalGraph,
    pub nodes: Vec<WorldNode>,
    pub step_limit: u32,
    pub padding: f64,
}

const GT_X: f64 = 1000.0;

impl World {
    pub fn random(seed: u64, max_depth: u32, max_branching: usize) -> World {
        let mut r = rng(seed);
        let n_ent = r.random_range(3..=5usize);
        let entities: Vec<Entity> = (0..n_ent)
            .map(|i| Entity::new(i as u64, format!("g{i}"), bx(GT_X + 40.0 * i as f64, 100.0, GT_X + 40.0 * i as f64 + 30.0, 130.0)))
            .collect();
        let mut all: Vec<(u64, u64)> = Vec::new();
        for a in 0..n_ent as u64 {
            for b in a + 1..n_ent as u64 {
                all.push(if r.random_bool(0.5) { (a, b) } else { (b, a) });
            }
        }
        let n_edges = r.random_range(2..=all.len().min(5));
        let mut edges = Vec::new();
        while edges.len() < n_edges {
            let (a, b) = all.swap_remove(r.random_range(0..all.len()));
            edges.push(CausalEdge::new(a, b));
        }
        let gt = build_graph(entities, edges).unwrap();
        let step_limit = r.random_range(3..=max_depth);
        let mut world = World { gt, nodes: Vec::new(), step_limit, padding: 0.1 };
        world.nodes.push(WorldNode { id: 0, depth: 0, incoming: Incoming::Root, children: vec![], next: Action::RegionSelection });
        let mut frontier = vec![0usize];
        while let Some(id) = frontier.pop() {
            let (depth, next) = (world.nodes[id].depth, world.nodes[id].next);
            if depth >= step_limit || matches!(world.nodes[id].incoming, Incoming::EndTrace) {
                continue;
            }
            let k = r.random_range(1..=max_branching);
            let mut end_used = false;
            for _ in 0..k {
                let cid = world.nodes.len();
                let incoming = match next {
                    Action::RegionSelection => {
                        if depth > 0 && !end_used && r.random_bool(0.3) {
                            end_used = true;
                            Incoming::EndTrace
                        } else {
                            let x = 10.0 * cid as f64;
                            Incoming::Region { bbox: bx(x, 10.0, x + 5.0, 15.0) }
                        }
                    }
                    Action::EntityRecognition => Incoming::Entities,
                    Action::CausalityOrientation => {
                        let m = world.gt.edges().len();
                        Incoming::Causal { confirmed: (0..m).filter(|_| r.random_bool(0.35)).collect() }
                    }
                };
                world.nodes.push(WorldNode { id: cid, depth: depth + 1, incoming, children: vec![], next: next.successor() });
                world.nodes[id].children.push(cid);
                frontier.push(cid);
            }
        }
        world
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    fn parent_of(&self) -> Vec<Option<usize>> {
        let mut p = vec![None; self.nodes.len()];
        for n in &self.nodes {
            for &c in &n.children {
                p[c] = Some(n.id);
            }
        }
        p
    }

    /// Recall of the state at `id`: confirmed ground-truth edges along the
    /// root path over all ground-truth edges.
    pub fn value(&self, id: usize) -> f64 {
        let parents = self.parent_of();
        let mut confirmed = BTreeSet::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            if let Incoming::Causal { confirmed: e } = &self.nodes[c].incoming {
                confirmed.extend(e.iter().copied());
            }
            cur = parents[c];
        }
        confirmed.len() as f64 / self.gt.edges().len() as f64
    }

    /// Leaf values sorted best first.
    pub fn leaf_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.nodes.iter().filter(|n| n.children.is_empty()).map(|n| self.value(n.id)).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    pub fn response(&self, child: usize) -> String {
        let n = &self.nodes[child];
        match &n.incoming {
            Incoming::Root => unreachable!(),
            Incoming::EndTrace => "END TRACE".into(),
            Incoming::Region { bbox } => {
                format!("<think>look</think>\n<region name>R{child}</region name>\n<bounding box>{}</bounding box>", fmt_box(bbox))
            }
            Incoming::Entities => format!(
                "<think>pairs</think>\n<entity pairs>[{{\"E{child}_a\": [1, 1, 2, 2], \"E{child}_b\": [3, 3, 4, 4]}}]</entity pairs>"
            ),
            Incoming::Causal { confirmed } => {
                let mut items: Vec<String> = confirmed
                    .iter()
                    .map(|&i| {
                        let e = &self.gt.edges()[i];
                        let c = self.gt.entity(e.cause).unwrap();
                        let f = self.gt.entity(e.effect).unwrap();
                        format!("{{\"{}\": {}, \"{}\": {}}}", c.label, fmt_box(&c.bbox), f.label, fmt_box(&f.bbox))
                    })
                    .collect();
                items.push(format!("{{\"M{child}\": [5000, 5000, 5010, 5010], \"N{child}\": [5020, 5000, 5030, 5010]}}"));
                format!("<think>orient</think>\n<causal pairs>[{}]</causal pairs>", items.join(", "))
            }
        }
    }

    pub fn backend(&self) -> WorldBackend<'_> {
        let crops = self
            .nodes
            .iter()
            .filter_map(|n| match n.incoming {
                Incoming::Region { bbox } => Some((key(&bbox.padded(self.padding)), n.id)),
                _ => None,
            })
            .collect();
        WorldBackend { world: self, crops, calls: Cell::new(0) }
    }
}

fn key(b: &BoundingBox) -> [u64; 4] {
    [b.x1().to_bits(), b.y1().to_bits(), b.x2().to_bits(), b.y2().to_bits()]
}

/// Last `"<prefix><digits>` token in `text`.
fn last_token(text: &str, prefix: &str) -> Option<usize> {
    let pat = format!("\"{prefix}");
    let mut found = None;
    let mut rest = text;
    while let Some(pos) = rest.find(&pat) {
        let tail = &rest[pos + pat.len()..];
        let digits: String = tail.chars().take_while(|c| c.is_ascii_digit()).collect();
        if !digits.is_empty() {
            found = Some(digits.parse().unwrap());
        }
        rest = &tail[digits.len()..];
    }
    found
}

pub struct WorldBackend<'w> {
    world: &'w World,
    crops: HashMap<[u64; 4], usize>,
    pub calls: Cell<usize>,
}

impl WorldBackend<'_> {
    fn node_for(&self, req: &ChatRequest) -> Option<usize> {
        match req.action? {
            Action::RegionSelection => Some(last_token(&req.user_text, "M").unwrap_or(0)),
            Action::EntityRecognition => self.crops.get(&key(&req.crop?)).copied(),
            Action::CausalityOrientation => last_token(&req.user_text, "E"),
        }
    }
}

impl Backend for WorldBackend<'_> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.set(self.calls.get() + 1);
        let node = self.node_for(req).ok_or_else(|| BackendError::InvalidRequest("unknown node".into()))?;
        let child = self.world.nodes[node].children.get(req.decode.sample_index as usize).ok_or(BackendError::ScriptExhausted)?;
        Ok(ChatResponse::text(self.world.response(*child)))
    }
}
