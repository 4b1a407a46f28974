//! Property tests for the core invariants: geometry, graph round trips,
//! candidate sets, schedules and replay bounds.

mod common;

use proptest::prelude::*;
use std::collections::BTreeMap;

use vrl_core::action_graph::{build_graph, CategoryId, PhraseCounts, SemanticGraph};
use vrl_core::config::TrainConfig;
use vrl_core::environment::{boxes_neighbor, iou, BoundingBox, ObjectInstance};
use vrl_core::features::phrase_embedding;
use vrl_core::qlearn::{ReplayMemory, Transition};
use vrl_core::traversal::candidate_categories;

use common::rng;

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (
        -50.0..50.0f64,
        -50.0..50.0f64,
        0.1..40.0f64,
        0.1..40.0f64,
    )
        .prop_map(|(cx, cy, w, h)| BoundingBox::new(cx, cy, w, h).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric_bounded_and_reflexive(a in arb_box(), b in arb_box()) {
        let ab = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - iou(&b, &a)).abs() < 1e-12);
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neighbor_relation_is_symmetric(a in arb_box(), b in arb_box()) {
        prop_assert_eq!(boxes_neighbor(&a, &b), boxes_neighbor(&b, &a));
    }

    #[test]
    fn enclosing_contains_both(a in arb_box(), b in arb_box()) {
        let e = a.enclosing(&b);
        // The enclosing box intersects each input over that input's full area.
        for x in [&a, &b] {
            let i = iou(x, &e);
            let expected = x.area() / e.area();
            prop_assert!((i - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn candidate_set_contains_argmax_and_grows_with_margin(
        scores in proptest::collection::btree_map(0u32..12, 0.0..1.0f64, 1..8),
        m1 in 0.0..0.3f64,
        m2 in 0.0..0.3f64,
    ) {
        let inst = ObjectInstance {
            id: 0,
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            category_scores: scores.iter().map(|(&c, &s)| (CategoryId(c), s)).collect::<BTreeMap<_, _>>(),
            objectness: 0.5,
        };
        let max = scores.values().cloned().fold(f64::NEG_INFINITY, f64::max);
        let argmaxes: Vec<CategoryId> = scores
            .iter()
            .filter(|(_, &s)| s == max)
            .map(|(&c, _)| CategoryId(c))
            .collect();
        let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
        let small = candidate_categories(&inst, lo);
        let large = candidate_categories(&inst, hi);
        for c in &argmaxes {
            prop_assert!(small.contains(c));
        }
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn epsilon_schedule_is_monotone_and_bounded(e1 in 0usize..80, e2 in 0usize..80) {
        let cfg = TrainConfig::default();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(cfg.epsilon_at(lo) >= cfg.epsilon_at(hi));
        for e in [lo, hi] {
            let eps = cfg.epsilon_at(e);
            prop_assert!((0.1..=1.0).contains(&eps));
        }
    }

    #[test]
    fn lr_schedule_is_monotone_nonincreasing(e1 in 0usize..80, e2 in 0usize..80) {
        let cfg = TrainConfig::default();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(cfg.lr_at(lo) >= cfg.lr_at(hi));
        prop_assert!(cfg.lr_at(hi) > 0.0);
    }

    #[test]
    fn replay_never_exceeds_capacity(cap in 1usize..50, pushes in 0usize..200) {
        let mut mem = ReplayMemory::new(cap);
        for i in 0..pushes {
            mem.push(Transition {
                state: vec![i as f64],
                actions: [0, 0, 0],
                rewards: [0.0; 3],
                next_state: vec![0.0],
                next_sets: [vec![0], vec![0], vec![0]],
                terminal: false,
            });
        }
        prop_assert!(mem.len() <= cap);
        prop_assert_eq!(mem.len(), pushes.min(cap));
    }

    #[test]
    fn phrase_embeddings_are_unit_or_zero(phrase in "[a-z ]{0,20}", d in 1usize..64) {
        let v = phrase_embedding(&phrase, d, 5);
        prop_assert_eq!(v.len(), d);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if phrase.is_empty() {
            prop_assert_eq!(norm, 0.0);
        } else {
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }
}

/// Graph built from shuffled phrase counts is identical, and serialization
/// round trips exactly.
#[test]
fn graph_round_trip_and_order_independence() {
    use rand::seq::SliceRandom;
    let mut r = rng("prop-graph", 9);
    for trial in 0..20u64 {
        let g = common::random_graph(7, 5, 4, 0.4, 0.15, &mut r);
        // Rebuild from the edge lists in shuffled order.
        let mut counts = PhraseCounts::default();
        for (c, a) in g.attr_edge_list() {
            counts.attribute_phrases.push((
                g.category_name(c).unwrap().to_string(),
                g.attribute_name(a).unwrap().to_string(),
                30 + trial,
            ));
        }
        for (s, p, o) in g.pred_edge_list() {
            counts.predicate_phrases.push((
                g.category_name(s).unwrap().to_string(),
                g.predicate_name(p).unwrap().to_string(),
                g.category_name(o).unwrap().to_string(),
                30 + trial,
            ));
        }
        counts.attribute_phrases.shuffle(&mut r);
        counts.predicate_phrases.shuffle(&mut r);
        let rebuilt = build_graph(&counts, 30).unwrap();
        assert_eq!(g, rebuilt);

        let json = serde_json::to_string(&g).unwrap();
        let loaded: SemanticGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(g, loaded);
    }
}
