//! Fixtures and end-to-end checks shared by the integration tests and the
//! acceptance report.

#![allow(dead_code)]

use std::collections::HashMap;
use std::net::SocketAddr;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use viscausal::dataset::{parse_dataset, DatasetRecord, Rule, Severity};
use viscausal::service::{serve, ServiceConfig, ServiceState};
use viscausal_core::geometry::BoundingBox;
use viscausal_core::graph::CausalGraph;
use viscausal_core::parser::{format_causal_pairs, NamedBoxPair};
use viscausal_core::reward::{score_batch, RewardBreakdown, RewardConfig, RewardWeights, ScoreItem};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

/// The appendix record, filled out to four related entities plus one
/// unrelated entity.
pub fn appendix_record() -> Value {
    json!({
        "dataset_id": "COCO",
        "img_id": 0,
        "entities": [
            {"entity_id": 0, "entity_name": "woman", "bbox": [502.6, 105.47, 25.83, 132.38]},
            {"entity_id": 1, "entity_name": "handbag", "bbox": [480.2, 150.0, 40.5, 45.0]},
            {"entity_id": 2, "entity_name": "dining table", "bbox": [100.0, 260.0, 300.0, 120.0]},
            {"entity_id": 3, "entity_name": "cup", "bbox": [180.0, 230.0, 32.0, 34.0]},
            {"entity_id": 4, "entity_name": "floor", "bbox": [0.0, 380.0, 640.0, 100.0]}
        ],
        "causal_relationships": {"carry_on": [[0, 1]], "support": [[2, 3]]}
    })
}

/// Ten-plus single-field corruptions of [`appendix_record`], each with the
/// one rule it must trigger.
pub fn corruptions() -> Vec<(&'static str, Rule, Value)> {
    let mut out = Vec::new();
    let mut add = |label: &'static str, rule: Rule, edit: &dyn Fn(&mut Value)| {
        let mut v = appendix_record();
        edit(&mut v);
        out.push((label, rule, v));
    };
    add("dangling id", Rule::DanglingRelationship, &|v| v["causal_relationships"]["carry_on"][0][1] = json!(9));
    add("negative width", Rule::NonPositiveExtent, &|v| v["entities"][0]["bbox"][2] = json!(-25.83));
    add("zero height", Rule::NonPositiveExtent, &|v| v["entities"][1]["bbox"][3] = json!(0));
    add("duplicate entity_id", Rule::DuplicateEntityId, &|v| v["entities"][4]["entity_id"] = json!(0));
    add("negative coordinate", Rule::NegativeCoordinate, &|v| v["entities"][2]["bbox"][0] = json!(-4.0));
    add("self loop", Rule::SelfLoop, &|v| v["causal_relationships"]["support"][0][1] = json!(2));
    add("empty entity name", Rule::EmptyEntityName, &|v| v["entities"][3]["entity_name"] = json!(""));
    add("three-number bbox", Rule::BboxShape, &|v| v["entities"][0]["bbox"] = json!([502.6, 105.47, 25.83]));
    add("entity below 30x30", Rule::SmallEntity, &|v| v["entities"][3]["bbox"] = json!([180.0, 230.0, 20.0, 20.0]));
    add("string img_id", Rule::Schema, &|v| v["img_id"] = json!("0"));
    add("relationships without entities", Rule::EmptyEntitiesWithRelationships, &|v| v["entities"] = json!([]));
    add("repeated relationship", Rule::DuplicateRelationship, &|v| v["causal_relationships"]["support"][0] = json!([0, 1]));
    out
}

pub fn check_dataset_validator() -> Check {
    let clean = parse_dataset(appendix_record().to_string().as_bytes());
    ensure!(clean.violations.is_empty(), "appendix record reported {:?}", clean.violations);
    ensure!(clean.records.len() == 1, "appendix record not loaded");
    let graph = clean.records[0].graph();
    let woman = graph.entities().iter().find(|e| e.label == "woman").ok_or("no woman entity")?;
    let want = [502.6, 105.47, 528.43, 237.85];
    ensure!(
        woman.bbox.corners().iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-9),
        "woman corners {:?}",
        woman.bbox.corners()
    );
    ensure!(graph.edges().len() == 2, "edges {:?}", graph.edges());
    let cases = corruptions();
    for (label, rule, value) in &cases {
        let report = parse_dataset(value.to_string().as_bytes());
        ensure!(report.violations.len() == 1, "{label}: {} entries {:?}", report.violations.len(), report.violations);
        let v = &report.violations[0];
        ensure!(v.rule == *rule, "{label}: rule {} instead of {rule}", v.rule);
        ensure!(v.message.starts_with("record 0"), "{label}: message lacks locator: {}", v.message);
        let kept = report.records.len() == 1;
        ensure!(kept == (rule.severity() == Severity::Warning), "{label}: record kept = {kept}");
    }
    Ok(format!("appendix record clean; {} single-field corruptions each gave exactly one entry naming its rule", cases.len()))
}

/// Small synthetic ground truth: `n` images with chains of boxes.
pub fn synthetic_records(n: u64, seed: u64) -> Vec<DatasetRecord> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    for img_id in 0..n {
        let k = r.random_range(2..=5u64);
        let entities: Vec<Value> = (0..k)
            .map(|i| {
                let x = 50.0 + 120.0 * i as f64 + r.random_range(0.0..10.0);
                let y = r.random_range(0.0..200.0);
                json!({"entity_id": i, "entity_name": format!("obj{i}"), "bbox": [x, y, r.random_range(40.0..100.0), r.random_range(40.0..100.0)]})
            })
            .collect();
        let edges: Vec<Value> = (0..k - 1).map(|i| json!([i, i + 1])).collect();
        lines.push(json!({"dataset_id": "synthetic", "img_id": img_id, "entities": entities, "causal_relationships": {"support": edges}}).to_string());
    }
    let report = parse_dataset(lines.join("\n").as_bytes());
    assert!(report.errors().next().is_none(), "{:?}", report.violations);
    report.records
}

/// Prediction text derived from a ground-truth graph: correct, reversed,
/// jittered or garbled, chosen at random.
pub fn prediction_text(gt: &CausalGraph, r: &mut ChaCha8Rng) -> String {
    let ent = |id| gt.entity(id).expect("edge endpoint");
    let jitter = |b: &BoundingBox, amount: f64, r: &mut ChaCha8Rng| {
        let dx = (r.random_range(-amount..amount) * b.width()).max(-b.x1());
        let dy = (r.random_range(-amount..amount) * b.height()).max(-b.y1());
        BoundingBox::new(b.x1() + dx, b.y1() + dy, b.x2() + dx, b.y2() + dy).expect("shifted box")
    };
    match r.random_range(0..6) {
        0 => "no structured answer".into(),
        1 => "<causal pairs>[{\"a\": [1, 2, 3]}]</causal pairs>".into(),
        _ => {
            let mut pairs = Vec::new();
            for e in gt.edges() {
                let (c, f) = (ent(e.cause), ent(e.effect));
                let amount = r.random_range(0.0..0.5);
                let (cb, fb) = (jitter(&c.bbox, amount, r), jitter(&f.bbox, amount, r));
                match r.random_range(0..4) {
                    0 => {}
                    1 => pairs.push(NamedBoxPair::causal(f.label.clone(), fb, c.label.clone(), cb)),
                    _ => pairs.push(NamedBoxPair::causal(c.label.clone(), cb, f.label.clone(), fb)),
                }
            }
            format_causal_pairs("reasoning", &pairs)
        }
    }
}

pub struct Server {
    pub addr: SocketAddr,
    pub state: ServiceState,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<JoinHandle<()>>,
}

impl Server {
    pub fn spawn(state: ServiceState) -> Self {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind");
        listener.set_nonblocking(true).expect("nonblocking");
        let addr = listener.local_addr().expect("addr");
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let served = state.clone();
        let handle = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().expect("runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                serve(listener, served, async {
                    let _ = rx.await;
                })
                .await
                .expect("serve");
            });
        });
        Self { addr, state, stop: Some(tx), handle: Some(handle) }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// True while the server thread is alive.
    pub fn running(&self) -> bool {
        self.handle.as_ref().is_some_and(|h| !h.is_finished())
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into()
}

/// `(status, body)` of a POST.
pub fn post(url: &str, body: &[u8], headers: &[(&str, &str)]) -> Result<(u16, String), String> {
    let mut req = agent().post(url).header("Content-Type", "application/json");
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let mut resp = req.send(body).map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    Ok((status, resp.body_mut().read_to_string().map_err(|e| e.to_string())?))
}

pub fn get(url: &str) -> Result<(u16, Value), String> {
    let mut resp = agent().get(url).call().map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
    Ok((status, serde_json::from_str(&text).map_err(|e| format!("{e}: {text}"))?))
}

/// A random score payload and the reward config it implies.
pub fn random_payload(graphs: &HashMap<u64, CausalGraph>, r: &mut ChaCha8Rng, defaults: &RewardConfig) -> (Value, Vec<(u64, String)>, RewardConfig) {
    let mut ids: Vec<u64> = graphs.keys().copied().collect();
    ids.sort_unstable();
    let n = r.random_range(1..=8);
    let mut items = Vec::new();
    for _ in 0..n {
        if r.random_bool(0.1) {
            items.push((9_999, "unknown image".to_string()));
        } else {
            let id = ids[r.random_range(0..ids.len())];
            items.push((id, prediction_text(&graphs[&id], r)));
        }
    }
    let mut config = *defaults;
    let mut body = json!({
        "v": 1,
        "items": items.iter().map(|(id, t)| json!({"img_id": id, "prediction_text": t})).collect::<Vec<_>>(),
    });
    if r.random_bool(0.5) {
        let w = RewardWeights::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.01..1.0)).expect("weights");
        body["weights"] = json!({"lambda_r": w.lambda_r, "lambda_p": w.lambda_p, "lambda_f": w.lambda_f});
        config.weights = w;
    }
    if r.random_bool(0.5) {
        let t = [0.3, 0.5, 0.7][r.random_range(0..3)];
        body["threshold"] = json!(t);
        config.threshold = t;
    }
    (body, items, config)
}

fn library_scores(graphs: &HashMap<u64, CausalGraph>, items: &[(u64, String)], config: &RewardConfig) -> Vec<Option<RewardBreakdown>> {
    let items: Vec<ScoreItem<'_>> = items.iter().map(|(id, t)| ScoreItem { gt_ref: *id, prediction_text: t }).collect();
    score_batch(&items, |id| graphs.get(&id), config).into_iter().map(Result::ok).collect()
}

/// Malformed or oversized bodies with the status they must produce.
pub fn bad_bodies(batch_cap: usize, max_body: usize) -> Vec<(&'static str, Vec<u8>, u16)> {
    let over_cap = json!({"v": 1, "items": vec![json!({"img_id": 0, "prediction_text": ""}); batch_cap + 1]});
    vec![
        ("empty body", Vec::new(), 400),
        ("not json", b"score this please".to_vec(), 400),
        ("invalid utf-8", vec![0xff, 0xfe, 0x7b], 400),
        ("truncated json", br#"{"v": 1, "items": [{"img_id": 0"#.to_vec(), 400),
        ("array body", b"[1, 2, 3]".to_vec(), 400),
        ("missing version", br#"{"items": []}"#.to_vec(), 400),
        ("future version", br#"{"v": 7, "items": []}"#.to_vec(), 400),
        ("items not a list", br#"{"v": 1, "items": {"img_id": 0}}"#.to_vec(), 400),
        ("negative img_id", br#"{"v": 1, "items": [{"img_id": -3, "prediction_text": "x"}]}"#.to_vec(), 400),
        ("numeric text", br#"{"v": 1, "items": [{"img_id": 0, "prediction_text": 5}]}"#.to_vec(), 400),
        ("zero weights", br#"{"v": 1, "items": [], "weights": {"lambda_r": 0, "lambda_p": 0, "lambda_f": 0}}"#.to_vec(), 400),
        ("negative weight", br#"{"v": 1, "items": [], "weights": {"lambda_r": -1, "lambda_p": 0, "lambda_f": 1}}"#.to_vec(), 400),
        ("threshold out of range", br#"{"v": 1, "items": [], "threshold": 1.5}"#.to_vec(), 400),
        ("unknown field", br#"{"v": 1, "items": [], "shard": 2}"#.to_vec(), 400),
        ("deep nesting", format!("{}{}", "[".repeat(5000), "]".repeat(5000)).into_bytes(), 400),
        ("batch over cap", over_cap.to_string().into_bytes(), 413),
        ("body over limit", vec![b' '; max_body + 1], 413),
    ]
}

/// 100 concurrent requests against the library, then malformed bodies,
/// then a final liveness probe.
pub fn check_service_parity() -> Check {
    let records = synthetic_records(12, 5);
    let graphs: HashMap<u64, CausalGraph> = records.iter().map(|r| (r.img_id, r.graph())).collect();
    let config = ServiceConfig { batch_cap: 64, max_body_bytes: 256 * 1024, ..ServiceConfig::default() };
    let defaults = config.defaults;
    let (batch_cap, max_body) = (config.batch_cap, config.max_body_bytes);
    let server = Server::spawn(ServiceState::ready(config, graphs.clone()));
    let url = server.url("/v1/score");

    let mut r = ChaCha8Rng::seed_from_u64(77);
    let payloads: Vec<_> = (0..100).map(|_| random_payload(&graphs, &mut r, &defaults)).collect();
    let start = Instant::now();
    let responses: Vec<Result<(u16, String), String>> = std::thread::scope(|s| {
        let handles: Vec<_> = payloads.iter().map(|(body, _, _)| s.spawn(|| post(&url, body.to_string().as_bytes(), &[]))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("client thread panicked".into()))).collect()
    });
    let elapsed = start.elapsed();
    let mut scored = 0;
    let mut item_errors = 0;
    for (k, (resp, (_, items, cfg))) in responses.iter().zip(&payloads).enumerate() {
        let (status, text) = resp.as_ref().map_err(|e| format!("request {k}: {e}"))?;
        ensure!(*status == 200, "request {k}: status {status}: {text}");
        let v: Value = serde_json::from_str(text).map_err(|e| format!("request {k}: {e}"))?;
        let got: Vec<Option<RewardBreakdown>> = serde_json::from_value(v["scores"].clone()).map_err(|e| format!("request {k}: {e}"))?;
        let want = library_scores(&graphs, items, cfg);
        ensure!(got == want, "request {k}: service {got:?} != library {want:?}");
        let errors = v["errors"].as_array().map_or(0, Vec::len);
        ensure!(errors == want.iter().filter(|s| s.is_none()).count(), "request {k}: {errors} item errors");
        item_errors += errors;
        scored += want.len();
    }
    let (_, first_body) = &responses[0].as_ref().map_err(|e| e.clone())?;
    let again = post(&url, payloads[0].0.to_string().as_bytes(), &[])?;
    ensure!(&again.1 == first_body, "identical payload answered differently");

    let bad = bad_bodies(batch_cap, max_body);
    for (label, body, status) in &bad {
        let (got, text) = post(&url, body, &[])?;
        ensure!(got == *status, "{label}: status {got} (want {status}): {text}");
        let v: Value = serde_json::from_str(&text).map_err(|e| format!("{label}: unstructured error body {text:?}: {e}"))?;
        ensure!(v["error"]["code"].is_string(), "{label}: no error code in {text}");
    }
    ensure!(server.running(), "server thread exited");
    let (status, health) = get(&server.url("/v1/health"))?;
    ensure!(status == 200 && health["status"] == "ready", "health after abuse: {health}");
    ensure!(health["records_loaded"] == 12, "records_loaded {}", health["records_loaded"]);
    let (status, _) = post(&url, payloads[1].0.to_string().as_bytes(), &[])?;
    ensure!(status == 200, "valid request after abuse: {status}");
    Ok(format!(
        "100 concurrent requests ({scored} items, {item_errors} unknown-id items) equal library scoring in {:.2}s; {} malformed bodies answered 4xx, server up",
        elapsed.as_secs_f64(),
        bad.len()
    ))
}
