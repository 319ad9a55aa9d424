//! Loading, validation and statistics for annotated causal-graph datasets.
//!
//! A record looks like
//!
//! ```json
//! {"dataset_id": "COCO", "img_id": 0,
//!  "entities": [{"entity_id": 0, "entity_name": "woman", "bbox": [502.6, 105.47, 25.83, 132.38]}],
//!  "causal_relationships": {"carry_on": [[0, 1]], "support": [[2, 3]]}}
//! ```
//!
//! Boxes are `[x, y, w, h]`; relationships list `[cause_id, effect_id]`.
//! Files hold either one JSON array of records or one record per line.
//! Validation never aborts a load: each problem becomes a report entry, and
//! records with errors are skipped while warnings keep the record.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use viscausal_core::geometry::{xywh_to_corners, BoundingBox};
use viscausal_core::graph::{build_graph, CausalEdge, CausalGraph, Entity};

/// Entities below this area (30 x 30 px) are flagged.
pub const MIN_ENTITY_AREA: f64 = 900.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntity {
    pub entity_id: u64,
    pub entity_name: String,
    /// `[x, y, w, h]`.
    pub bbox: [f64; 4],
}

impl RecordEntity {
    pub fn corners(&self) -> BoundingBox {
        let [x, y, w, h] = self.bbox;
        xywh_to_corners(x, y, w, h).expect("validated box")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dataset_id: String,
    pub img_id: u64,
    pub entities: Vec<RecordEntity>,
    /// Predicate -> `[cause_id, effect_id]` list, in file order.
    pub causal_relationships: IndexMap<String, Vec<[u64; 2]>>,
}

impl DatasetRecord {
    /// The record as a graph. The first occurrence of a repeated
    /// relationship wins.
    pub fn graph(&self) -> CausalGraph {
        let entities = self.entities.iter().map(|e| Entity::new(e.entity_id, e.entity_name.clone(), e.corners())).collect();
        let mut seen = BTreeSet::new();
        let mut edges = Vec::new();
        for (predicate, pairs) in &self.causal_relationships {
            for &[c, e] in pairs {
                if seen.insert((c, e)) {
                    edges.push(CausalEdge::new(c, e).with_predicate(predicate.clone()));
                }
            }
        }
        build_graph(entities, edges).expect("validated record")
    }

    pub fn relationship_count(&self) -> usize {
        self.graph().edges().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Not JSON, wrong type or missing field.
    Schema,
    /// A box that is not four numbers.
    BboxShape,
    /// Width or height not positive.
    NonPositiveExtent,
    NegativeCoordinate,
    DuplicateEntityId,
    EmptyEntityName,
    DanglingRelationship,
    SelfLoop,
    EmptyEntitiesWithRelationships,
    SmallEntity,
    DuplicateRelationship,
    DuplicateImgId,
}

impl Rule {
    pub fn severity(self) -> Severity {
        match self {
            Rule::SmallEntity | Rule::DuplicateRelationship => Severity::Warning,
            _ => Severity::Error,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rule::Schema => "schema",
            Rule::BboxShape => "bbox_shape",
            Rule::NonPositiveExtent => "non_positive_extent",
            Rule::NegativeCoordinate => "negative_coordinate",
            Rule::DuplicateEntityId => "duplicate_entity_id",
            Rule::EmptyEntityName => "empty_entity_name",
            Rule::DanglingRelationship => "dangling_relationship",
            Rule::SelfLoop => "self_loop",
            Rule::EmptyEntitiesWithRelationships => "empty_entities_with_relationships",
            Rule::SmallEntity => "small_entity",
            Rule::DuplicateRelationship => "duplicate_relationship",
            Rule::DuplicateImgId => "duplicate_img_id",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One line of the validation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub img_id: Option<u64>,
    pub severity: Severity,
    pub rule: Rule,
    /// Includes the record locator, e.g. `record 3, entity 1: ...`.
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadReport {
    pub records: Vec<DatasetRecord>,
    pub violations: Vec<Violation>,
    /// Records seen in the input, valid or not.
    pub total: usize,
}

impl LoadReport {
    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Error)
    }

    pub fn write_report(&self, mut out: impl Write) -> std::io::Result<()> {
        for v in &self.violations {
            serde_json::to_writer(&mut out, v)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Ground-truth graphs by image id.
    pub fn graphs(&self) -> HashMap<u64, CausalGraph> {
        self.records.iter().map(|r| (r.img_id, r.graph())).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    UnwritablePath { path: String, source: std::io::Error },
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LoadReport, DatasetError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DatasetError::UnreadableFile { path: path.display().to_string(), source })?;
    Ok(parse_dataset(&bytes))
}

/// Split a byte stream into raw records: a JSON array, or JSON lines.
pub(crate) fn split_records(bytes: &[u8]) -> Result<Vec<Result<Value, String>>, String> {
    let text = std::str::from_utf8(bytes).map_err(|e| format!("input is not UTF-8: {e}"))?;
    let trimmed = text.trim_start_matches('\u{feff}').trim();
    if trimmed.starts_with('[') {
        return match serde_json::from_str::<Value>(trimmed) {
            Ok(Value::Array(items)) => Ok(items.into_iter().map(Ok).collect()),
            Ok(_) => Err("top-level value is not an array".into()),
            Err(e) => Err(format!("invalid JSON array: {e}")),
        };
    }
    // Concatenated values (pretty-printed records); fall back to lines so a
    // broken record does not hide the ones after it.
    if let Ok(values) = serde_json::Deserializer::from_str(trimmed).into_iter::<Value>().collect::<Result<Vec<_>, _>>() {
        return Ok(values.into_iter().map(Ok).collect());
    }
    Ok(trimmed
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect())
}

/// Validate every record in `bytes`. Never fails.
pub fn parse_dataset(bytes: &[u8]) -> LoadReport {
    let mut report = LoadReport::default();
    let raw = match split_records(bytes) {
        Ok(raw) => raw,
        Err(message) => {
            report.violations.push(Violation { img_id: None, severity: Severity::Error, rule: Rule::Schema, message });
            return report;
        }
    };
    report.total = raw.len();
    let mut seen_ids = BTreeSet::new();
    for (index, item) in raw.into_iter().enumerate() {
        let (record, mut violations) = match item {
            Ok(value) => validate_record(index, &value),
            Err(message) => (None, vec![Violation {
                img_id: None,
                severity: Severity::Error,
                rule: Rule::Schema,
                message: format!("record {index}: {message}"),
            }]),
        };
        if let Some(record) = record {
            if seen_ids.insert(record.img_id) {
                report.records.push(record);
            } else {
                violations.push(Violation {
                    img_id: Some(record.img_id),
                    severity: Severity::Error,
                    rule: Rule::DuplicateImgId,
                    message: format!("record {index}: img_id {} already loaded", record.img_id),
                });
            }
        }
        report.violations.extend(violations);
    }
    report
}

/// Check one decoded record. The record comes back only when it has no
/// errors; warnings are returned alongside it.
pub fn validate_record(index: usize, value: &Value) -> (Option<DatasetRecord>, Vec<Violation>) {
    let mut v = Validator { index, img_id: None, violations: Vec::new() };
    let record = v.record(value);
    (record, v.violations)
}

struct Validator {
    index: usize,
    img_id: Option<u64>,
    violations: Vec<Violation>,
}

impl Validator {
    fn push(&mut self, rule: Rule, detail: impl fmt::Display) {
        self.violations.push(Violation {
            img_id: self.img_id,
            severity: rule.severity(),
            rule,
            message: format!("record {}: {detail}", self.index),
        });
    }

    fn record(&mut self, value: &Value) -> Option<DatasetRecord> {
        let Value::Object(obj) = value else {
            self.push(Rule::Schema, "record is not an object");
            return None;
        };
        self.img_id = obj.get("img_id").and_then(Value::as_u64);
        let Some(img_id) = self.img_id else {
            self.push(Rule::Schema, "img_id must be a non-negative integer");
            return None;
        };
        let dataset_id = match obj.get("dataset_id") {
            Some(Value::String(s)) => s.clone(),
            None => String::new(),
            Some(_) => {
                self.push(Rule::Schema, "dataset_id must be a string");
                return None;
            }
        };
        let Some(Value::Array(raw_entities)) = obj.get("entities") else {
            self.push(Rule::Schema, "entities must be a list");
            return None;
        };
        let relationships = match obj.get("causal_relationships") {
            Some(Value::Object(map)) => map,
            _ => {
                self.push(Rule::Schema, "causal_relationships must be an object of predicate -> pairs");
                return None;
            }
        };

        let mut entities = Vec::with_capacity(raw_entities.len());
        let mut ids = BTreeMap::new();
        let mut broken = false;
        for (k, e) in raw_entities.iter().enumerate() {
            // An entity with a bad box still exists for relationship checks,
            // so one defect yields one report entry.
            if let Some(id) = e.get("entity_id").and_then(Value::as_u64) {
                if ids.insert(id, k).is_some() {
                    self.push(Rule::DuplicateEntityId, format!("entity {k}: entity_id {id} repeats"));
                    broken = true;
                    continue;
                }
            }
            match self.entity(k, e) {
                Some(entity) => entities.push(entity),
                None => broken = true,
            }
        }

        let mut causal_relationships = IndexMap::new();
        let mut pairs_seen = BTreeSet::new();
        let total_pairs: usize = relationships.values().map(|v| v.as_array().map_or(1, Vec::len)).sum();
        if raw_entities.is_empty() && total_pairs > 0 {
            self.push(Rule::EmptyEntitiesWithRelationships, format!("{total_pairs} relationships but no entities"));
            return None;
        }
        for (predicate, pairs) in relationships {
            let Value::Array(pairs) = pairs else {
                self.push(Rule::Schema, format!("relationships for {predicate:?} must be a list"));
                broken = true;
                continue;
            };
            let mut kept = Vec::with_capacity(pairs.len());
            for (k, pair) in pairs.iter().enumerate() {
                let ends = pair.as_array().filter(|a| a.len() == 2).and_then(|a| Some([a[0].as_u64()?, a[1].as_u64()?]));
                let Some([c, e]) = ends else {
                    self.push(Rule::Schema, format!("{predicate}[{k}] must be [cause_id, effect_id]"));
                    broken = true;
                    continue;
                };
                if c == e {
                    self.push(Rule::SelfLoop, format!("{predicate}[{k}] links entity {c} to itself"));
                    broken = true;
                    continue;
                }
                let missing: Vec<u64> = [c, e].into_iter().filter(|id| !ids.contains_key(id)).collect();
                if !missing.is_empty() {
                    self.push(Rule::DanglingRelationship, format!("{predicate}[{k}] = [{c}, {e}] names unknown entity {missing:?}"));
                    broken = true;
                    continue;
                }
                if !pairs_seen.insert((c, e)) {
                    self.push(Rule::DuplicateRelationship, format!("{predicate}[{k}] repeats [{c}, {e}]; first kept"));
                }
                kept.push([c, e]);
            }
            causal_relationships.insert(predicate.clone(), kept);
        }
        if broken {
            return None;
        }
        Some(DatasetRecord { dataset_id, img_id, entities, causal_relationships })
    }

    fn entity(&mut self, k: usize, value: &Value) -> Option<RecordEntity> {
        let Value::Object(obj) = value else {
            self.push(Rule::Schema, format!("entity {k} is not an object"));
            return None;
        };
        let Some(entity_id) = obj.get("entity_id").and_then(Value::as_u64) else {
            self.push(Rule::Schema, format!("entity {k}: entity_id must be a non-negative integer"));
            return None;
        };
        let Some(name) = obj.get("entity_name").and_then(Value::as_str) else {
            self.push(Rule::Schema, format!("entity {k}: entity_name must be a string"));
            return None;
        };
        let coords = match obj.get("bbox") {
            Some(Value::Array(items)) if items.len() == 4 && items.iter().all(Value::is_number) => {
                let c: Vec<f64> = items.iter().filter_map(Value::as_f64).collect();
                [c[0], c[1], c[2], c[3]]
            }
            _ => {
                self.push(Rule::BboxShape, format!("entity {k}: bbox must be [x, y, w, h]"));
                return None;
            }
        };
        if name.trim().is_empty() {
            self.push(Rule::EmptyEntityName, format!("entity {k}: entity_name is empty"));
            return None;
        }
        let [x, y, w, h] = coords;
        if !(w > 0.0 && h > 0.0) {
            self.push(Rule::NonPositiveExtent, format!("entity {k}: width {w} and height {h} must be positive"));
            return None;
        }
        if x < 0.0 || y < 0.0 {
            self.push(Rule::NegativeCoordinate, format!("entity {k}: origin ({x}, {y}) is negative"));
            return None;
        }
        if w * h < MIN_ENTITY_AREA {
            self.push(Rule::SmallEntity, format!("entity {k}: area {:.2} below {MIN_ENTITY_AREA}", w * h));
        }
        Some(RecordEntity { entity_id, entity_name: name.to_string(), bbox: coords })
    }
}

/// Write records one per line.
pub fn save_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let wrap = |source| DatasetError::UnwritablePath { path: path.display().to_string(), source };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(wrap)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| wrap(e.into()))?;
        out.write_all(b"\n").map_err(wrap)?;
    }
    out.flush().map_err(wrap)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub images: usize,
    pub entities: usize,
    pub entity_categories: usize,
    pub relationships: usize,
    pub relationships_per_image: f64,
    /// Relationship count -> number of images.
    pub histogram: BTreeMap<usize, usize>,
    pub top_entities: Vec<(String, usize)>,
    pub top_predicates: Vec<(String, usize)>,
}

fn top_k(counts: HashMap<String, usize>, k: usize) -> Vec<(String, usize)> {
    let mut v: Vec<(String, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

pub fn dataset_stats(records: &[DatasetRecord], k: usize) -> DatasetStats {
    let mut entity_counts: HashMap<String, usize> = HashMap::new();
    let mut predicate_counts: HashMap<String, usize> = HashMap::new();
    let mut histogram = BTreeMap::new();
    let mut relationships = 0;
    for r in records {
        for e in &r.entities {
            *entity_counts.entry(e.entity_name.clone()).or_default() += 1;
        }
        let graph = r.graph();
        for edge in graph.edges() {
            *predicate_counts.entry(edge.predicate.clone().unwrap_or_default()).or_default() += 1;
        }
        relationships += graph.edges().len();
        *histogram.entry(graph.edges().len()).or_default() += 1;
    }
    DatasetStats {
        images: records.len(),
        entities: records.iter().map(|r| r.entities.len()).sum(),
        entity_categories: entity_counts.len(),
        relationships,
        relationships_per_image: if records.is_empty() { 0.0 } else { relationships as f64 / records.len() as f64 },
        histogram,
        top_entities: top_k(entity_counts, k),
        top_predicates: top_k(predicate_counts, k),
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "images                  {}", self.images)?;
        writeln!(f, "entities                {}", self.entities)?;
        writeln!(f, "entity categories       {}", self.entity_categories)?;
        writeln!(f, "causal relationships    {}", self.relationships)?;
        writeln!(f, "relationships / image   {:.2}", self.relationships_per_image)?;
        writeln!(f, "relationships per image histogram:")?;
        for (n, images) in &self.histogram {
            writeln!(f, "  {n:>4}  {images}")?;
        }
        writeln!(f, "top entity categories:")?;
        for (name, n) in &self.top_entities {
            writeln!(f, "  {n:>8}  {name}")?;
        }
        writeln!(f, "top predicates:")?;
        for (name, n) in &self.top_predicates {
            writeln!(f, "  {n:>8}  {name}")?;
        }
        Ok(())
    }
}
