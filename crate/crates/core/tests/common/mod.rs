//! Shared helpers for integration tests: randomized graph construction and
//! deterministic RNG plumbing.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vrl_core::action_graph::{build_graph, PhraseCounts, SemanticGraph};
use vrl_core::agent::{random_walk_episode, train, Agent, Mode, PolicyVariant};
use vrl_core::config::TrainConfig;
use vrl_core::environment::Scene;
use vrl_core::eval::{evaluate_scenes, rank_predictions, EvalReport, ZeroShotSplit};
use vrl_core::features::{FeatureConfig, SyntheticProvider};
use vrl_core::rng::{substream, substream_indexed};
use vrl_core::synth::{generate_scene_set, SynthParams};

/// Build a graph with `n_cats`/`n_attrs`/`n_preds` nodes and randomized
/// edges. Names are zero-padded so graph indices equal numeric suffixes.
pub fn random_graph(
    n_cats: usize,
    n_attrs: usize,
    n_preds: usize,
    attr_edge_prob: f64,
    pred_edge_prob: f64,
    rng: &mut ChaCha8Rng,
) -> SemanticGraph {
    let cat = |i: usize| format!("obj{i:03}");
    let attr = |i: usize| format!("att{i:03}");
    let pred = |i: usize| format!("rel{i:03}");
    let mut counts = PhraseCounts::default();
    // Every node must appear in at least one kept phrase to exist, so anchor
    // each category, attribute and predicate once, then add random edges.
    for i in 0..n_attrs.max(1) {
        counts
            .attribute_phrases
            .push((cat(i % n_cats), attr(i % n_attrs.max(1)), 30));
    }
    for i in 0..n_preds.max(1) {
        counts.predicate_phrases.push((
            cat(i % n_cats),
            pred(i % n_preds.max(1)),
            cat((i + 1) % n_cats),
            30,
        ));
    }
    for c in 0..n_cats {
        for a in 0..n_attrs {
            if rng.random::<f64>() < attr_edge_prob {
                counts.attribute_phrases.push((cat(c), attr(a), 30));
            }
        }
        for o in 0..n_cats {
            for p in 0..n_preds {
                if rng.random::<f64>() < pred_edge_prob {
                    counts.predicate_phrases.push((cat(c), pred(p), cat(o), 30));
                }
            }
        }
    }
    dedup(&mut counts);
    // Guarantee every category node exists even without random edges.
    for c in 0..n_cats {
        counts
            .attribute_phrases
            .push((cat(c), attr(0), 30));
    }
    dedup(&mut counts);
    build_graph(&counts, 30).unwrap()
}

fn dedup(counts: &mut PhraseCounts) {
    counts
        .attribute_phrases
        .sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
    counts.attribute_phrases.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    counts
        .predicate_phrases
        .sort_by(|a, b| (&a.0, &a.1, &a.2).cmp(&(&b.0, &b.1, &b.2)));
    counts
        .predicate_phrases
        .dedup_by(|a, b| a.0 == b.0 && a.1 == b.1 && a.2 == b.2);
}

pub fn rng(label: &str, seed: u64) -> ChaCha8Rng {
    substream(seed, label)
}

/// The fixed desk-scale ablation setup: 50 categories, 30 attributes,
/// 20 predicates. Each ordered category pair carries at most one predicate
/// edge, and edges are dense among the common (low-index) categories that
/// dominate the Zipf-skewed scenes.
pub fn ablation_graph() -> SemanticGraph {
    let mut r = rng("ablation-graph", 2024);
    let (n_cats, n_attrs, n_preds) = (50usize, 30usize, 20usize);
    let cat = |i: usize| format!("obj{i:03}");
    let attr = |i: usize| format!("att{i:03}");
    let pred = |i: usize| format!("rel{i:03}");
    let mut counts = PhraseCounts::default();
    for c in 0..n_cats {
        for a in 0..n_attrs {
            let p = if c < 12 { 0.25 } else { 0.08 };
            if r.random::<f64>() < p {
                counts.attribute_phrases.push((cat(c), attr(a), 30));
            }
        }
    }
    let mut pred_used = vec![false; n_preds];
    for c in 0..n_cats {
        for o in 0..n_cats {
            let p = if c < 12 && o < 12 { 0.95 } else { 0.12 };
            if r.random::<f64>() < p {
                // Six distinct predicates per connected pair: a learned
                // policy must pick the one the scenes actually favor, while
                // uniform guessing dilutes to 1/6.
                let mut chosen = std::collections::BTreeSet::new();
                while chosen.len() < 6 {
                    chosen.insert(r.random_range(0..n_preds));
                }
                for k in chosen {
                    pred_used[k] = true;
                    counts.predicate_phrases.push((cat(c), pred(k), cat(o), 30));
                }
            }
        }
    }
    // Anchor any node that random sampling missed.
    for c in 0..n_cats {
        counts.attribute_phrases.push((cat(c), attr(0), 30));
    }
    for (k, used) in pred_used.iter().enumerate() {
        if !used {
            counts
                .predicate_phrases
                .push((cat(25 + (k % 20)), pred(k), cat(48), 30));
        }
    }
    dedup(&mut counts);
    build_graph(&counts, 30).unwrap()
}

pub fn ablation_params() -> SynthParams {
    SynthParams {
        n_objects: 6,
        noise: 0.05,
        predicate_density: 1.0,
        confusion_prob: 0.1,
        confusion_flip_prob: 0.3,
        // Clustered medium boxes: nearly all pairs are neighbors, yet
        // distinct objects rarely overlap enough to cross-match.
        box_min: 0.26,
        box_max: 0.34,
        center_spread: 0.20,
        theme_size: 2,
        ..SynthParams::default()
    }
}

/// Scenes with frequent near-ties between the true category and its
/// confusable partner; used to compare VRL against its no-ambiguity variant.
pub fn confusable_params() -> SynthParams {
    SynthParams {
        confusion_prob: 0.6,
        confusion_flip_prob: 0.45,
        ..ablation_params()
    }
}

pub fn ablation_feat_cfg() -> FeatureConfig {
    FeatureConfig {
        d_image: 32,
        d_instance: 32,
        d_phrase: 8,
    }
}

pub fn ablation_train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        hidden: vec![96],
        batch: 32,
        tau: 2_000,
        replay_capacity: 20_000,
        lr_init: 0.001,
        lr_decay_every: 12,
        eps_anneal_epochs: (epochs / 3).max(1),
        val_fraction: 0.05,
        ..TrainConfig::default()
    }
}

pub fn ablation_scene_sets(graph: &SemanticGraph, n_train: usize, n_test: usize) -> (Vec<Scene>, Vec<Scene>) {
    let params = ablation_params();
    let train = generate_scene_set(graph, 11_000, n_train, &params).unwrap();
    let test = generate_scene_set(graph, 22_000, n_test, &params).unwrap();
    (train, test)
}

/// Train one policy variant and evaluate greedily on the test set.
pub fn train_and_eval(
    graph: &SemanticGraph,
    variant: PolicyVariant,
    train_scenes: &[Scene],
    test_scenes: &[Scene],
    cfg: &TrainConfig,
    seed: u64,
    zero_shot: Option<&ZeroShotSplit>,
) -> EvalReport {
    let provider = SyntheticProvider::new(ablation_feat_cfg(), seed);
    let agent = Agent::new(graph, &provider, ablation_feat_cfg(), variant, seed);
    let out = train(train_scenes, &agent, cfg, seed).unwrap();
    let ranked: Vec<_> = test_scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = substream_indexed(seed, "test-eval", i as u64);
            let episode = agent
                .run_episode(s, &out.model, Mode::Eval, 0.0, &mut r, cfg.max_steps)
                .unwrap();
            rank_predictions(episode.log.predictions)
        })
        .collect();
    evaluate_scenes(test_scenes, &ranked, zero_shot)
}

pub fn random_walk_eval(
    graph: &SemanticGraph,
    test_scenes: &[Scene],
    seed: u64,
    zero_shot: Option<&ZeroShotSplit>,
) -> EvalReport {
    let ranked: Vec<_> = test_scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = substream_indexed(seed, "random-walk", i as u64);
            rank_predictions(random_walk_episode(graph, s, &mut r).unwrap().predictions)
        })
        .collect();
    evaluate_scenes(test_scenes, &ranked, zero_shot)
}

/// Build a zero-shot holdout over the ablation setup: pick ~10% of the
/// predicate-phrase types observed in training, preferring the dominant
/// (lowest-id) predicate of edges between uncommon category pairs, and drop
/// every training scene containing a held-out phrase. Graph edges are kept.
pub fn zero_shot_holdout(
    graph: &SemanticGraph,
    train_all: &[Scene],
    test_scenes: &[Scene],
) -> (Vec<Scene>, ZeroShotSplit) {
    use std::collections::BTreeSet;
    use vrl_core::action_graph::{CategoryId, PredicateId};

    let typed = |scenes: &[Scene]| -> BTreeSet<(CategoryId, PredicateId, CategoryId)> {
        let mut out = BTreeSet::new();
        for s in scenes {
            for &(i, p, j) in &s.gt.pred_phrases {
                out.insert((s.gt.objects[i].0, p, s.gt.objects[j].0));
            }
        }
        out
    };
    let observed_train = typed(train_all);
    let observed_test = typed(test_scenes);

    // Candidate held-out types: the dominant predicate of each edge between
    // category pairs outside the common (low-index) block.
    let mut candidates = Vec::new();
    for c in graph.category_ids() {
        for o in graph.category_ids() {
            if c.index() < 12 && o.index() < 12 {
                continue;
            }
            if let Some(&p) = graph.predicates_between(c, o).unwrap().iter().next() {
                let t = (c, p, o);
                if observed_train.contains(&t) {
                    candidates.push(t);
                }
            }
        }
    }
    // Types that also occur in the test ground truth come first, so the
    // held-out recall denominator is nonempty.
    candidates.sort_by_key(|t| (!observed_test.contains(t), *t));
    let n_hold = (observed_train.len() / 10).max(1);
    let unseen_types: BTreeSet<_> = candidates.into_iter().take(n_hold).collect();

    let kept: Vec<Scene> = train_all
        .iter()
        .filter(|s| {
            !s.gt.pred_phrases.iter().any(|&(i, p, j)| {
                unseen_types.contains(&(s.gt.objects[i].0, p, s.gt.objects[j].0))
            })
        })
        .cloned()
        .collect();
    (kept, ZeroShotSplit { unseen_types })
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}
