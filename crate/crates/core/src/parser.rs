//! Parsers and serializers for the four tagged output grammars.
//!
//! | grammar     | required blocks                         |
//! |-------------|-----------------------------------------|
//! | `e2e`       | `<causal pairs>` list of two-key objects |
//! | `causality` | `<causal pairs>` list of two-key objects |
//! | `entity`    | `<entity pairs>` list of two-key objects |
//! | `region`    | `<region name>` + `<bounding box>`, or the bare `END TRACE` sentinel |
//!
//! Each list record is `{"<name>": [x1, y1, x2, y2], "<name>": [...]}`; in
//! causal lists the first member is the cause. Tags are case-sensitive, text
//! outside the blocks is ignored, and block bodies must be strict JSON.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, BoxError};
use crate::graph::{build_graph, CausalEdge, CausalGraph, Entity, EntityId};
use crate::json::{self, is_ws, Json};

pub const THINK_TAG: &str = "think";
pub const CAUSAL_PAIRS_TAG: &str = "causal pairs";
pub const ENTITY_PAIRS_TAG: &str = "entity pairs";
pub const REGION_NAME_TAG: &str = "region name";
pub const BOUNDING_BOX_TAG: &str = "bounding box";
pub const END_TRACE: &str = "END TRACE";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("missing <{0}> block")]
    MissingTag(&'static str),
    #[error("block is not a valid list: {0}")]
    MalformedList(String),
    #[error("record {index} has {found} entries, expected 2")]
    WrongKeyCount { index: usize, found: usize },
    #[error("record {index}: bad box for {name:?}: {reason}")]
    BadBox { index: usize, name: String, reason: String },
    #[error("record {index} has an empty entity name")]
    EmptyName { index: usize },
    #[error("empty region name")]
    EmptyRegionName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grammar {
    E2e,
    Region,
    Entity,
    Causality,
}

impl Grammar {
    pub const ALL: [Grammar; 4] = [Grammar::E2e, Grammar::Region, Grammar::Entity, Grammar::Causality];

    pub fn name(self) -> &'static str {
        match self {
            Grammar::E2e => "e2e",
            Grammar::Region => "region",
            Grammar::Entity => "entity",
            Grammar::Causality => "causality",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }
}

/// Two named boxes; when `ordered`, `first` is the cause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedBoxPair {
    pub first_name: String,
    pub first_box: BoundingBox,
    pub second_name: String,
    pub second_box: BoundingBox,
    pub ordered: bool,
}

impl NamedBoxPair {
    pub fn causal(cause: impl Into<String>, cause_box: BoundingBox, effect: impl Into<String>, effect_box: BoundingBox) -> Self {
        Self {
            first_name: cause.into(),
            first_box: cause_box,
            second_name: effect.into(),
            second_box: effect_box,
            ordered: true,
        }
    }

    /// Same content, ignoring the `ordered` flag.
    pub fn same_content(&self, other: &Self) -> bool {
        self.first_name == other.first_name
            && self.first_box == other.first_box
            && self.second_name == other.second_name
            && self.second_box == other.second_box
    }

    pub fn reversed(&self) -> Self {
        Self {
            first_name: self.second_name.clone(),
            first_box: self.second_box,
            second_name: self.first_name.clone(),
            second_box: self.first_box,
            ordered: self.ordered,
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self, BoxError> {
        Ok(Self {
            first_box: self.first_box.translate(dx, dy)?,
            second_box: self.second_box.translate(dx, dy)?,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionChoice {
    EndTrace,
    Region { name: String, bbox: BoundingBox },
}

impl RegionChoice {
    pub fn is_end_trace(&self) -> bool {
        matches!(self, RegionChoice::EndTrace)
    }
}

/// Body of the first `<tag>...</tag>` block, trimmed of JSON whitespace.
pub fn extract_block<'a>(text: &'a str, tag: &'static str) -> Result<&'a str, ParseError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open).ok_or(ParseError::MissingTag(tag))? + open.len();
    let len = text[start..].find(&close).ok_or(ParseError::MissingTag(tag))?;
    Ok(trim_json_ws(&text[start..start + len]))
}

fn trim_json_ws(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_ascii() && is_ws(c as u8))
}

fn parse_box(value: &Json) -> Result<BoundingBox, String> {
    let Json::Array(items) = value else {
        return Err("not a list".to_string());
    };
    if items.len() != 4 {
        return Err(format!("expected 4 numbers, got {}", items.len()));
    }
    let mut c = [0.0; 4];
    for (slot, item) in c.iter_mut().zip(items) {
        match item {
            Json::Number(n) => *slot = *n,
            _ => return Err("non-numeric coordinate".to_string()),
        }
    }
    BoundingBox::try_from(c).map_err(|e| e.to_string())
}

fn parse_record(index: usize, record: &Json, ordered: bool) -> Result<NamedBoxPair, ParseError> {
    let Json::Object(members) = record else {
        return Err(ParseError::MalformedList(format!("record {index} is not an object")));
    };
    if members.len() != 2 {
        return Err(ParseError::WrongKeyCount { index, found: members.len() });
    }
    let mut named = Vec::with_capacity(2);
    for (name, value) in members {
        if name.trim().is_empty() {
            return Err(ParseError::EmptyName { index });
        }
        let bbox = parse_box(value).map_err(|reason| ParseError::BadBox { index, name: name.clone(), reason })?;
        named.push((name.clone(), bbox));
    }
    let (second_name, second_box) = named.pop().expect("two members");
    let (first_name, first_box) = named.pop().expect("two members");
    Ok(NamedBoxPair { first_name, first_box, second_name, second_box, ordered })
}

fn parse_list_body(body: &str) -> Result<Vec<Json>, ParseError> {
    match json::parse(body) {
        Ok(Json::Array(items)) => Ok(items),
        Ok(_) => Err(ParseError::MalformedList("block is not a list".to_string())),
        Err(e) => Err(ParseError::MalformedList(format!("{} at offset {}", e.message, e.offset))),
    }
}

fn parse_pairs(text: &str, tag: &'static str, ordered: bool) -> Result<Vec<NamedBoxPair>, ParseError> {
    let body = extract_block(text, tag)?;
    parse_list_body(body)?
        .iter()
        .enumerate()
        .map(|(i, r)| parse_record(i, r, ordered))
        .collect()
}

/// Parse `<causal pairs>`; member order gives `cause -> effect`.
pub fn parse_causal_pairs(text: &str) -> Result<Vec<NamedBoxPair>, ParseError> {
    parse_pairs(text, CAUSAL_PAIRS_TAG, true)
}

/// Parse `<entity pairs>`; direction is not meaningful.
pub fn parse_entity_pairs(text: &str) -> Result<Vec<NamedBoxPair>, ParseError> {
    parse_pairs(text, ENTITY_PAIRS_TAG, false)
}

pub fn parse_region_choice(text: &str) -> Result<RegionChoice, ParseError> {
    if trim_json_ws(text) == END_TRACE {
        return Ok(RegionChoice::EndTrace);
    }
    let name = extract_block(text, REGION_NAME_TAG)?;
    let body = extract_block(text, BOUNDING_BOX_TAG)?;
    if name.trim().is_empty() {
        return Err(ParseError::EmptyRegionName);
    }
    let value = json::parse(body).map_err(|e| ParseError::BadBox {
        index: 0,
        name: name.to_string(),
        reason: e.message.to_string(),
    })?;
    let bbox = parse_box(&value).map_err(|reason| ParseError::BadBox { index: 0, name: name.to_string(), reason })?;
    Ok(RegionChoice::Region { name: name.to_string(), bbox })
}

/// 1.0 when `text` parses cleanly under `grammar`, else 0.0. Never fails.
pub fn format_compliance(text: &str, grammar: Grammar) -> f64 {
    let ok = match grammar {
        Grammar::E2e | Grammar::Causality => parse_causal_pairs(text).is_ok(),
        Grammar::Entity => parse_entity_pairs(text).is_ok(),
        Grammar::Region => parse_region_choice(text).is_ok(),
    };
    if ok {
        1.0
    } else {
        0.0
    }
}

/// Fraction of well-formed records in the list block. A missing block or an
/// unparseable list scores 0; an empty list scores 1. The region grammar has
/// no records and falls back to [`format_compliance`].
pub fn graded_compliance(text: &str, grammar: Grammar) -> f64 {
    let (tag, ordered) = match grammar {
        Grammar::E2e | Grammar::Causality => (CAUSAL_PAIRS_TAG, true),
        Grammar::Entity => (ENTITY_PAIRS_TAG, false),
        Grammar::Region => return format_compliance(text, grammar),
    };
    let Ok(body) = extract_block(text, tag) else {
        return 0.0;
    };
    let Ok(records) = parse_list_body(body) else {
        return 0.0;
    };
    if records.is_empty() {
        return 1.0;
    }
    let good = records.iter().enumerate().filter(|(i, r)| parse_record(*i, r, ordered).is_ok()).count();
    good as f64 / records.len() as f64
}

/// JSON list body for a set of pairs, e.g. `[{"table": [0, 0, 9, 9], "cup": [1, 1, 2, 2]}]`.
pub fn pairs_to_json(pairs: &[NamedBoxPair]) -> String {
    let mut out = String::from("[");
    for (i, p) in pairs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('{');
        json::write_string(&mut out, &p.first_name);
        let _ = write!(out, ": {}, ", p.first_box);
        json::write_string(&mut out, &p.second_name);
        let _ = write!(out, ": {}", p.second_box);
        out.push('}');
    }
    out.push(']');
    out
}

/// Explored regions rendered as single-member objects, `[{"name": [x1, y1, x2, y2]}, ...]`.
pub fn regions_to_json(regions: &[(String, BoundingBox)]) -> String {
    let mut out = String::from("[");
    for (i, (name, bbox)) in regions.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('{');
        json::write_string(&mut out, name);
        let _ = write!(out, ": {bbox}");
        out.push('}');
    }
    out.push(']');
    out
}

fn block(tag: &str, body: &str) -> String {
    format!("<{tag}>\n{body}\n</{tag}>")
}

pub fn format_causal_pairs(think: &str, pairs: &[NamedBoxPair]) -> String {
    format!("{}\n{}", block(THINK_TAG, think), block(CAUSAL_PAIRS_TAG, &pairs_to_json(pairs)))
}

pub fn format_entity_pairs(think: &str, pairs: &[NamedBoxPair]) -> String {
    format!("{}\n{}", block(THINK_TAG, think), block(ENTITY_PAIRS_TAG, &pairs_to_json(pairs)))
}

pub fn format_region_choice(think: &str, choice: &RegionChoice) -> String {
    match choice {
        RegionChoice::EndTrace => END_TRACE.to_string(),
        RegionChoice::Region { name, bbox } => format!(
            "{}\n{}\n{}",
            block(THINK_TAG, think),
            block(REGION_NAME_TAG, name),
            block(BOUNDING_BOX_TAG, &bbox.to_string())
        ),
    }
}

/// Turn ordered pairs into graph parts. Entities are deduplicated on exact
/// `(name, box)`; ids follow first appearance. Duplicate edges collapse;
/// pairs naming the same entity twice or carrying an empty name are dropped.
pub fn entities_from_pairs(pairs: &[NamedBoxPair]) -> (Vec<Entity>, Vec<CausalEdge>) {
    let mut entities: Vec<Entity> = Vec::new();
    let mut ids: BTreeMap<(String, [u64; 4]), EntityId> = BTreeMap::new();
    let mut intern = |name: &str, bbox: BoundingBox| -> EntityId {
        let key = (name.to_string(), bbox.corners().map(f64::to_bits));
        *ids.entry(key).or_insert_with(|| {
            let id = EntityId(entities.len() as u64);
            entities.push(Entity { id, label: name.to_string(), bbox });
            id
        })
    };
    let mut edges: Vec<CausalEdge> = Vec::new();
    for p in pairs.iter().filter(|p| !p.first_name.is_empty() && !p.second_name.is_empty()) {
        let cause = intern(&p.first_name, p.first_box);
        let effect = intern(&p.second_name, p.second_box);
        if cause != effect && !edges.iter().any(|e| e.cause == cause && e.effect == effect) {
            edges.push(CausalEdge { cause, effect, predicate: None });
        }
    }
    (entities, edges)
}

/// [`entities_from_pairs`] assembled into a graph.
pub fn graph_from_pairs(pairs: &[NamedBoxPair]) -> CausalGraph {
    let (entities, edges) = entities_from_pairs(pairs);
    build_graph(entities, edges).expect("pairs always yield a valid graph")
}
