//! One check per acceptance criterion that the core library can answer on
//! its own. Each returns a short summary on success and the first
//! counterexample on failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;
use viscausal_core::assignment::{hungarian, match_entities, CostMatrix};
use viscausal_core::backend::{Backend, BackendError, ChatRequest, ChatResponse};
use viscausal_core::filter::{filter_stats, RecallPair};
use viscausal_core::geometry::{giou, iou, BoundingBox};
use viscausal_core::graph::{build_graph, CausalEdge, Entity};
use viscausal_core::metrics::{reasoning_loss, rsi, score_graph};
use viscausal_core::parser::{
    format_causal_pairs, format_compliance, format_entity_pairs, format_region_choice, graded_compliance,
    parse_causal_pairs, parse_entity_pairs, parse_region_choice, Grammar, NamedBoxPair,
};
use viscausal_core::reward::{causal_reward, RewardConfig, RewardWeights};
use viscausal_core::search::{is_legal_action_sequence, run_search, SearchContext, SearchParams};

use super::corpus::{self, Expected};
use super::oracles::{min_assignment_cost, ref_counts, ref_match, GraphFixture, TABLE2};
use super::world::World;
use super::{bx, rng};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn table2_closure() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (name, recall, reachable, published) in TABLE2 {
        let loss = 100.0 * reasoning_loss(recall, reachable).map_err(|e| format!("{name}: {e}"))?;
        let gap = (loss - published).abs();
        ensure!(gap <= 0.6, "{name}: computed {loss:.2} vs published {published}");
        worst = worst.max(gap);
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(elapsed < 1.0, "took {elapsed:.3}s");
    Ok(format!("7 rows, max gap {worst:.2} pp"))
}

pub fn hungarian_oracle() -> Check {
    let start = Instant::now();
    let mut r = rng(11);
    let n = 1200;
    for case in 0..n {
        let rows = r.random_range(1..=7usize);
        let cols = r.random_range(1..=7usize);
        // integer-valued costs keep sums exact; a third of cases use a tiny
        // range to force ties
        let hi = if case % 3 == 0 { 3 } else { 1000 };
        let cells: Vec<Vec<f64>> =
            (0..rows).map(|_| (0..cols).map(|_| r.random_range(0..hi) as f64).collect()).collect();
        let a = hungarian(&CostMatrix::from_rows(&cells).unwrap());
        let expected = min_assignment_cost(&cells);
        ensure!(a.cost == expected, "case {case}: {cells:?} gave {} expected {expected}", a.cost);
        ensure!(a.pairs.len() == rows.min(cols), "case {case}: {} pairs", a.pairs.len());
        let recomputed: f64 = a.pairs.iter().map(|&(i, j)| cells[i][j]).sum();
        ensure!(recomputed == a.cost, "case {case}: reported cost disagrees with pairs");
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(elapsed < 30.0, "took {elapsed:.1}s");
    Ok(format!("{n} matrices up to 7x7 exact"))
}

fn random_geom_box(r: &mut impl Rng) -> BoundingBox {
    let x = r.random_range(0.0..500.0);
    let y = r.random_range(0.0..500.0);
    bx(x, y, x + r.random_range(0.5..200.0), y + r.random_range(0.5..200.0))
}

pub fn giou_properties() -> Check {
    let mut r = rng(12);
    let n = 2000;
    for i in 0..n {
        let a = random_geom_box(&mut r);
        let b = if i % 4 == 0 {
            // force overlap on a quarter of the pairs
            let dx = r.random_range(-0.5..0.5) * a.width();
            let dy = r.random_range(-0.5..0.5) * a.height();
            bx((a.x1() + dx).max(0.0), (a.y1() + dy).max(0.0), (a.x1() + dx).max(0.0) + a.width(), (a.y1() + dy).max(0.0) + a.height())
        } else {
            random_geom_box(&mut r)
        };
        let g = giou(&a, &b);
        ensure!((g - giou(&b, &a)).abs() <= 1e-9, "asymmetric on {a} {b}");
        ensure!((giou(&a, &a) - 1.0).abs() <= 1e-9, "self giou of {a}");
        ensure!(g <= iou(&a, &b) + 1e-9, "giou above iou on {a} {b}");
        ensure!((-1.0..=1.0).contains(&g), "giou {g} out of range on {a} {b}");
        let (dx, dy) = (r.random_range(0.0..300.0), r.random_range(0.0..300.0));
        let moved = giou(&a.translate(dx, dy).unwrap(), &b.translate(dx, dy).unwrap());
        ensure!((moved - g).abs() <= 1e-9, "translation changed {g} to {moved}");
    }
    Ok(format!("{n} pairs x 5 properties"))
}

pub fn metrics_oracle() -> Check {
    let mut r = rng(13);
    let n = 300;
    let mut nontrivial = 0;
    for case in 0..n {
        let f = GraphFixture::random(&mut r);
        let (pred, gt) = f.graphs();
        for t in [0.3, 0.5, 0.7] {
            let matching = match_entities(pred.entities(), gt.entities(), t);
            let score = score_graph(&pred, &gt, &matching).map_err(|e| e.to_string())?;
            let m = ref_match(&f.pred_boxes, &f.gt_boxes, t);
            let (matched, np, ng) = ref_counts(&f.pred_edges, &f.gt_edges, &m);
            let recall = matched as f64 / ng as f64;
            let precision = if np == 0 { 0.0 } else { matched as f64 / np as f64 };
            ensure!(
                score.recall == recall && score.precision == precision,
                "case {case} t={t}: got ({}, {}) oracle ({recall}, {precision}) fixture {f:?}",
                score.recall,
                score.precision
            );
            if matched > 0 && matched < ng {
                nontrivial += 1;
            }
        }
    }
    Ok(format!("{n} graph pairs x 3 thresholds exact ({nontrivial} partial-recall cases)"))
}

pub fn direction_sensitivity() -> Check {
    let mut r = rng(14);
    let mut fixtures = 0;
    let mut antisymmetric = 0;
    let mut attempts = 0;
    while fixtures < 200 {
        attempts += 1;
        ensure!(attempts < 100_000, "could not build enough fixtures");
        let f = GraphFixture::random(&mut r);
        // restrict to DAG ground truth: keep edges oriented low -> high
        let gt_edges: Vec<(usize, usize)> = f.gt_edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        let mut gt_edges_dedup = gt_edges.clone();
        gt_edges_dedup.sort();
        gt_edges_dedup.dedup();
        let f = GraphFixture { gt_edges: gt_edges_dedup, ..f };
        let (pred, gt) = f.graphs();
        let matching = match_entities(pred.entities(), gt.entities(), 0.5);
        let forward = score_graph(&pred, &gt, &matching).map_err(|e| e.to_string())?;
        if forward.recall == 0.0 {
            continue;
        }
        fixtures += 1;
        let reversed_edges: Vec<(usize, usize)> = f.pred_edges.iter().map(|&(a, b)| (b, a)).collect();
        let reversed = super::oracles::to_graph(&f.pred_boxes, &reversed_edges, "p");
        let back = score_graph(&reversed, &gt, &matching).map_err(|e| e.to_string())?;
        let m = ref_match(&f.pred_boxes, &f.gt_boxes, 0.5);
        let (expected, _, _) = ref_counts(&reversed_edges, &f.gt_edges, &m);
        ensure!(back.matched_edges == expected, "reversed count {} vs oracle {expected}", back.matched_edges);
        // antisymmetric: the prediction never lists both directions
        let sym = f.pred_edges.iter().any(|&(a, b)| f.pred_edges.contains(&(b, a)));
        if !sym {
            antisymmetric += 1;
            let only_correct: Vec<(usize, usize)> = f
                .pred_edges
                .iter()
                .copied()
                .filter(|&(a, b)| {
                    let ga = m.iter().find(|x| x.0 == a).map(|x| x.1);
                    let gb = m.iter().find(|x| x.0 == b).map(|x| x.1);
                    matches!((ga, gb), (Some(x), Some(y)) if f.gt_edges.contains(&(x, y)))
                })
                .collect();
            let flipped: Vec<(usize, usize)> = only_correct.iter().map(|&(a, b)| (b, a)).collect();
            let g = super::oracles::to_graph(&f.pred_boxes, &flipped, "p");
            let s = score_graph(&g, &gt, &matching).map_err(|e| e.to_string())?;
            ensure!(s.matched_edges == 0, "flipped correct edges still matched {}", s.matched_edges);
        }
    }
    Ok(format!("{fixtures} DAG fixtures, {antisymmetric} antisymmetric drop to 0"))
}

pub fn rsi_suite() -> Check {
    for c in [0.1, 0.5, 1.0, 0.37] {
        let v = rsi(&[c; 5]).map_err(|e| e.to_string())?;
        ensure!(v == 1.0, "constant {c} gave {v}");
    }
    let v = rsi(&[0.2, 0.4]).map_err(|e| e.to_string())?;
    ensure!((v - 0.666667).abs() <= 1e-6, "[0.2, 0.4] gave {v}");
    let mut r = rng(15);
    for _ in 0..1000 {
        let len = r.random_range(1..=8);
        let mut curve: Vec<f64> = (0..len).map(|_| if r.random_bool(0.3) { 0.0 } else { r.random_range(0.0..1.0) }).collect();
        if curve.iter().all(|&x| x == 0.0) {
            curve[0] = 0.01;
        }
        let v = rsi(&curve).map_err(|e| e.to_string())?;
        ensure!((0.0..=1.0).contains(&v), "{curve:?} gave {v}");
    }
    Ok("constant -> 1, [0.2, 0.4] -> 0.666667, 1000 random curves clamped".into())
}

fn parse_expected(grammar: Grammar, text: &str) -> Option<Expected> {
    match grammar {
        Grammar::E2e | Grammar::Causality => parse_causal_pairs(text).ok().map(Expected::Pairs),
        Grammar::Entity => parse_entity_pairs(text).ok().map(Expected::Pairs),
        Grammar::Region => parse_region_choice(text).ok().map(Expected::Region),
    }
}

fn reformat(grammar: Grammar, parsed: &Expected) -> String {
    match (grammar, parsed) {
        (Grammar::Entity, Expected::Pairs(p)) => format_entity_pairs("again", p),
        (_, Expected::Pairs(p)) => format_causal_pairs("again", p),
        (_, Expected::Region(c)) => format_region_choice("again", c),
    }
}

pub fn parser_corpus() -> Check {
    let mut well = 0;
    for (k, grammar) in Grammar::ALL.into_iter().enumerate() {
        let fixtures = corpus::well_formed(grammar, 60, 100 + k as u64);
        for f in &fixtures {
            ensure!(format_compliance(&f.text, grammar) == 1.0, "{grammar:?} rejected {:?}", f.text);
            let parsed = parse_expected(grammar, &f.text).unwrap();
            ensure!(parsed == f.expected, "{grammar:?} misparsed {:?}", f.text);
            let again = parse_expected(grammar, &reformat(grammar, &parsed));
            ensure!(again.as_ref() == Some(&parsed), "{grammar:?} round trip changed {:?}", f.text);
            well += 1;
        }
    }
    let bad = corpus::malformed(7);
    for (grammar, text, label) in &bad {
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            (format_compliance(text, *grammar), graded_compliance(text, *grammar), parse_expected(*grammar, text).is_none())
        }));
        let Ok((binary, _graded, rejected)) = outcome else {
            return Err(format!("{grammar:?} panicked on {label}: {text:?}"));
        };
        ensure!(binary == 0.0 && rejected, "{grammar:?} accepted {label}: {text:?}");
    }
    let mut flipped = 0;
    for f in corpus::well_formed(Grammar::Causality, 60, 300) {
        let Expected::Pairs(pairs) = &f.expected else { unreachable!() };
        if pairs.is_empty() {
            continue;
        }
        let swapped: Vec<NamedBoxPair> = pairs.iter().map(NamedBoxPair::reversed).collect();
        let reparsed = parse_causal_pairs(&format_causal_pairs("x", &swapped)).unwrap();
        for (orig, rev) in pairs.iter().zip(&reparsed) {
            ensure!(rev.first_name == orig.second_name && rev.second_box == orig.first_box, "key swap did not flip {orig:?}");
        }
        flipped += 1;
    }
    Ok(format!("{well} well-formed round-trip, {} malformed rejected, {flipped} key-order flips", bad.len()))
}

pub fn reward_properties() -> Check {
    let cfg = RewardConfig::default();
    let sum = cfg.weights.sum();
    // composed fixture: chain a -> b -> c, prediction has one of two edges
    let ent = |id: u64, x: f64| Entity::new(id, "e", bx(x, 0.0, x + 10.0, 10.0));
    let chain = build_graph(vec![ent(0, 0.0), ent(1, 20.0), ent(2, 40.0)], vec![CausalEdge::new(0, 1), CausalEdge::new(1, 2)]).unwrap();
    let half = r#"<think>one</think><causal pairs>[{"a": [0, 0, 10, 10], "b": [20, 0, 30, 10]}]</causal pairs>"#;
    let b = causal_reward(half, &chain, &cfg).map_err(|e| e.to_string())?;
    ensure!(
        b.recall_term == 0.5 && b.precision_term == 1.0 && b.format_term == 1.0 && (b.total - 0.75).abs() <= 1e-9,
        "composed fixture gave {b:?}"
    );

    let mut r = rng(16);
    let mut checked = 0;
    for case in 0..100 {
        let f = GraphFixture::random(&mut r);
        let (_, gt) = f.graphs();
        let weights = RewardWeights::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.01..1.0)).unwrap();
        let cfg = RewardConfig::with_weights(weights, 0.5);
        let gt_pair = |i: usize| {
            let e = &gt.edges()[i];
            let c = gt.entity(e.cause).unwrap();
            let d = gt.entity(e.effect).unwrap();
            NamedBoxPair::causal(c.label.clone(), c.bbox, d.label.clone(), d.bbox)
        };
        // start from a random subset of correct pairs plus a wrong one
        let mut pairs: Vec<NamedBoxPair> = (0..gt.edges().len()).filter(|_| r.random_bool(0.4)).map(gt_pair).collect();
        let far = |k: f64| bx(900.0 + 30.0 * k, 900.0, 910.0 + 30.0 * k, 910.0);
        pairs.push(NamedBoxPair::causal("ghost", far(0.0), "shadow", far(1.0)));
        let total = |p: &[NamedBoxPair]| causal_reward(&format_causal_pairs("t", p), &gt, &cfg).map(|b| b.total);
        let base = total(&pairs).map_err(|e| e.to_string())?;
        ensure!((0.0..=weights.sum() + 1e-12).contains(&base), "case {case}: total {base} outside [0, {}]", weights.sum());
        if let Some(missing) = (0..gt.edges().len()).find(|&i| !pairs.iter().any(|p| p.same_content(&gt_pair(i)))) {
            let mut more = pairs.clone();
            more.push(gt_pair(missing));
            let up = total(&more).map_err(|e| e.to_string())?;
            ensure!(up >= base - 1e-12, "case {case}: adding a correct pair lowered {base} to {up}");
        }
        let mut worse = pairs.clone();
        worse.push(NamedBoxPair::causal("ghost2", far(2.0), "shadow2", far(3.0)));
        let down = total(&worse).map_err(|e| e.to_string())?;
        ensure!(down <= base + 1e-12, "case {case}: adding a wrong pair raised {base} to {down}");
        checked += 1;
    }
    ensure!(sum > 0.0, "weights sum");
    Ok(format!("0.750000 composed fixture, {checked} monotonicity fixtures, totals in [0, sum]"))
}

/// Budget multiple of the enumerated tree size used for the MCTS oracle.
pub const MCTS_BUDGET_MULTIPLE: u32 = 16;

pub fn mcts_oracle() -> Check {
    let start = Instant::now();
    let worlds = 100;
    let mut hits = 0;
    for seed in 0..worlds {
        let world = World::random(seed, 6, 3);
        let backend = world.backend();
        let iterations = world.len() as u32 * MCTS_BUDGET_MULTIPLE;
        let params = SearchParams { step_limit: world.step_limit, branching: 3, iterations, ..SearchParams::default() };
        let ctx = SearchContext::new(&backend, &world.gt, None, params);
        let out = run_search(&ctx).map_err(|e| format!("world {seed}: {e}"))?;
        let leaves = world.leaf_values();
        let (best, second) = (leaves[0], leaves.get(1).copied().unwrap_or(leaves[0]));
        let v = out.trajectory.value;
        ensure!(v >= second - 1e-12, "world {seed}: value {v} below second-best {second}");
        if (v - best).abs() < 1e-12 {
            hits += 1;
        }
        ensure!(out.tree.root().visit_count == iterations, "world {seed}: root visits {}", out.tree.root().visit_count);
        out.tree.check_invariants().map_err(|e| format!("world {seed}: {e}"))?;
        ensure!(is_legal_action_sequence(&out.trajectory.actions()), "world {seed}: illegal action order");
    }
    let rate = hits as f64 / worlds as f64;
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(rate >= 0.95, "only {hits}/{worlds} worlds reached the maximum");
    ensure!(elapsed < 60.0, "took {elapsed:.1}s");
    Ok(format!("{hits}/{worlds} worlds at the enumerated maximum, budget {MCTS_BUDGET_MULTIPLE}x tree size, {elapsed:.1}s"))
}

/// Wraps a backend and checks the backpropagation formula on the tree
/// snapshot that the search hands back after each budget.
pub fn backprop_formula() -> Check {
    let mut runs = 0;
    for seed in 0..30 {
        let world = World::random(1000 + seed, 6, 3);
        let backend = world.backend();
        for iterations in 1..=world.len().min(40) as u32 {
            let params = SearchParams { step_limit: world.step_limit, branching: 3, iterations, ..SearchParams::default() };
            let ctx = SearchContext::new(&backend, &world.gt, None, params);
            let out = run_search(&ctx).map_err(|e| e.to_string())?;
            out.tree.check_invariants().map_err(|e| format!("world {seed} after {iterations}: {e}"))?;
            for node in out.tree.nodes() {
                let visited: Vec<_> = node.children.iter().map(|&c| out.tree.node(c)).filter(|c| c.visit_count > 0).collect();
                let n: u32 = visited.iter().map(|c| c.visit_count).sum();
                if n > 0 {
                    let q = visited.iter().map(|c| c.q_value * c.visit_count as f64).sum::<f64>() / n as f64;
                    ensure!((q - node.q_value).abs() <= 1e-12, "node {} Q {} vs {q}", node.id, node.q_value);
                }
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} searches, every internal Q = sum Q(c)N(c) / sum N(c)"))
}

pub fn filter_semantics() -> Check {
    ensure!(!RecallPair::new(0.3, 0.3).keep(), "tie kept");
    ensure!(RecallPair::new(0.29, 0.42).keep(), "improvement dropped");
    ensure!(!RecallPair::new(0.0, 0.0).keep(), "zero pair kept");
    // ten images: four ZERO, six with recall
    let cohort = [
        (0.0, 0.0),
        (0.0, 0.0),
        (0.0, 0.0),
        (0.0, 0.0),
        (0.0, 0.5),
        (0.2, 0.4),
        (0.5, 0.5),
        (0.4, 0.2),
        (0.3, 0.6),
        (0.1, 0.8),
    ];
    let pairs: Vec<RecallPair> = cohort.iter().map(|&(v, s)| RecallPair::new(v, s)).collect();
    let s = filter_stats(&pairs);
    // hand-computed: vanilla sum 1.5, searched sum 3.0
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    ensure!(s.zero_count == 4 && s.kept == 4, "zero {} kept {}", s.zero_count, s.kept);
    ensure!(close(s.with_zero.vanilla_mean, 0.15) && close(s.with_zero.searched_mean, 0.30), "with-zero means {:?}", s.with_zero);
    ensure!(close(s.with_zero.vanilla_median, 0.05) && close(s.with_zero.searched_median, 0.3), "with-zero medians {:?}", s.with_zero);
    ensure!(close(s.without_zero.vanilla_mean, 0.25) && close(s.without_zero.searched_mean, 0.5), "without-zero means {:?}", s.without_zero);
    ensure!(close(s.without_zero.vanilla_median, 0.25) && close(s.without_zero.searched_median, 0.5), "without-zero medians {:?}", s.without_zero);
    ensure!(close(s.kept_vanilla_mean, 0.15) && close(s.kept_searched_mean, 0.575), "kept means {} {}", s.kept_vanilla_mean, s.kept_searched_mean);
    Ok("tie dropped, ZERO bucket and mean/median with and without ZERO match hand values".into())
}

/// A backend that always fails, for degraded-path checks.
pub struct Failing;

impl Backend for Failing {
    fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, BackendError> {
        Err(BackendError::Timeout)
    }
}
