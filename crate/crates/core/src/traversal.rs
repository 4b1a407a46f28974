//! Variation-structured action sets: per-step adaptive subsets of the action
//! graph for the current subject/object pair, ambiguity-aware object mining,
//! and the breadth-first subject scheduler with its 5-neighbor cap.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::action_graph::{AttributeId, CategoryId, PredicateId, SemanticGraph};
use crate::environment::{is_neighbor, InstanceId, ObjectInstance, Scene};
use crate::error::{Result, VrlError};

/// Ambiguity margin: categories scoring within this of the argmax are kept.
pub const AMBIGUITY_MARGIN: f64 = 0.1;
/// Instance selections under one subject before a new subject is started.
pub const NEIGHBOR_CAP: u32 = 5;

/// How candidate categories of a neighbor are mined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateMode {
    /// All categories within `margin` of the top score.
    Ambiguous { margin: f64 },
    /// Only the single top-scoring category.
    TopOnly,
}

impl Default for CandidateMode {
    fn default() -> Self {
        CandidateMode::Ambiguous {
            margin: AMBIGUITY_MARGIN,
        }
    }
}

/// Categories scoring at least `max_score - margin` (inclusive boundary).
/// Always contains the argmax.
pub fn candidate_categories(inst: &ObjectInstance, margin: f64) -> BTreeSet<CategoryId> {
    let max = inst
        .category_scores
        .values()
        .fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    inst.category_scores
        .iter()
        .filter(|(_, &s)| s >= max - margin)
        .map(|(&c, _)| c)
        .collect()
}

/// Single top-scoring category; ties broken by lowest category index.
pub fn top_category(inst: &ObjectInstance) -> CategoryId {
    let mut best: Option<(CategoryId, f64)> = None;
    for (&c, &s) in &inst.category_scores {
        match best {
            Some((_, bs)) if s <= bs => {}
            _ => best = Some((c, s)),
        }
    }
    best.expect("category_scores is non-empty").0
}

/// Per-episode traversal history.
#[derive(Debug, Clone, Default)]
pub struct TraversalHistory {
    /// H_S: instances already extracted (unavailable as objects).
    pub visited_instances: BTreeSet<InstanceId>,
    /// H_A(s): attributes already mined per instance.
    pub mined_attrs: BTreeMap<InstanceId, BTreeSet<AttributeId>>,
    /// Predicate triples already emitted as predictions.
    pub emitted_pred_triples: BTreeSet<(InstanceId, PredicateId, InstanceId)>,
}

impl TraversalHistory {
    pub fn mark_visited(&mut self, id: InstanceId) {
        self.visited_instances.insert(id);
    }

    /// Records the mined attribute; returns true when it was not mined before.
    pub fn record_attr(&mut self, id: InstanceId, a: AttributeId) -> bool {
        self.mined_attrs.entry(id).or_default().insert(a)
    }

    /// Records the triple; returns true when it was not emitted before.
    pub fn record_triple(&mut self, s: InstanceId, p: PredicateId, o: InstanceId) -> bool {
        self.emitted_pred_triples.insert((s, p, o))
    }

    pub fn mined_for(&self, id: InstanceId) -> BTreeSet<AttributeId> {
        self.mined_attrs.get(&id).cloned().unwrap_or_default()
    }
}

/// The three per-step action sets. Empty `attrs`/`preds` means the reserved
/// Null action; Terminal is always additionally available in the category set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionSets {
    pub attrs: BTreeSet<AttributeId>,
    pub preds: BTreeSet<PredicateId>,
    pub cats: BTreeSet<(CategoryId, InstanceId)>,
}

impl ActionSets {
    /// Head indices for the attribute head of size n_attrs + 1. The last
    /// index is Null, present exactly when the graph-derived set is empty.
    pub fn attr_head_indices(&self, n_attrs: usize) -> Vec<usize> {
        if self.attrs.is_empty() {
            vec![n_attrs]
        } else {
            self.attrs.iter().map(|a| a.index()).collect()
        }
    }

    pub fn pred_head_indices(&self, n_preds: usize) -> Vec<usize> {
        if self.preds.is_empty() {
            vec![n_preds]
        } else {
            self.preds.iter().map(|p| p.index()).collect()
        }
    }

    /// Category head indices: the distinct candidate categories plus the
    /// Terminal slot (index n_cats), which is always present.
    pub fn cat_head_indices(&self, n_cats: usize) -> Vec<usize> {
        let mut idx: BTreeSet<usize> = self.cats.iter().map(|(c, _)| c.index()).collect();
        idx.insert(n_cats);
        idx.into_iter().collect()
    }
}

/// Δa = attributes of the subject category not yet mined for this instance.
pub fn build_attribute_actions(
    g: &SemanticGraph,
    s_cat: CategoryId,
    hist: &TraversalHistory,
    s_id: InstanceId,
) -> Result<BTreeSet<AttributeId>> {
    let all = g.attributes_of(s_cat)?;
    let mined = hist.mined_for(s_id);
    Ok(all.difference(&mined).copied().collect())
}

/// Δp = predicates on the directed edge (subject category, object category).
pub fn build_predicate_actions(
    g: &SemanticGraph,
    s_cat: CategoryId,
    o_cat: CategoryId,
) -> Result<BTreeSet<PredicateId>> {
    g.predicates_between(s_cat, o_cat)
}

/// Δc = candidate categories of every unvisited neighbor of the subject.
pub fn build_category_actions(
    scene: &Scene,
    s: &ObjectInstance,
    hist: &TraversalHistory,
    mode: CandidateMode,
) -> BTreeSet<(CategoryId, InstanceId)> {
    let mut out = BTreeSet::new();
    for t in &scene.instances {
        if t.id == s.id || hist.visited_instances.contains(&t.id) || !is_neighbor(s, t) {
            continue;
        }
        let cands = match mode {
            CandidateMode::Ambiguous { margin } => candidate_categories(t, margin),
            CandidateMode::TopOnly => [top_category(t)].into_iter().collect(),
        };
        for c in cands {
            out.insert((c, t.id));
        }
    }
    out
}

/// Bind a selected category action to an instance: among the candidates
/// carrying `g_c`, the one with the highest score for `g_c`; ties by lowest
/// instance id.
pub fn resolve_category_action(
    scene: &Scene,
    g_c: CategoryId,
    delta_c: &BTreeSet<(CategoryId, InstanceId)>,
) -> Result<InstanceId> {
    let mut best: Option<(f64, InstanceId)> = None;
    for &(c, id) in delta_c {
        if c != g_c {
            continue;
        }
        let score = scene
            .instance(id)
            .and_then(|t| t.category_scores.get(&g_c).copied())
            .unwrap_or(0.0);
        best = match best {
            Some((bs, bid)) if score < bs || (score == bs && id > bid) => Some((bs, bid)),
            _ => Some((score, id)),
        };
    }
    best.map(|(_, id)| id).ok_or_else(|| {
        VrlError::Contract(format!("category {g_c} has no candidate instance in Δc"))
    })
}

/// Breadth-first subject scheduling with the neighbor cap.
#[derive(Debug, Clone, Default)]
pub struct SubjectScheduler {
    queue: VecDeque<InstanceId>,
    pub current: Option<InstanceId>,
    neighbor_count: u32,
    started: BTreeSet<InstanceId>,
}

impl SubjectScheduler {
    pub fn new() -> SubjectScheduler {
        SubjectScheduler::default()
    }

    pub fn neighbor_count(&self) -> u32 {
        self.neighbor_count
    }

    pub fn cap_reached(&self) -> bool {
        self.neighbor_count >= NEIGHBOR_CAP
    }

    /// Enqueue an instance discovered under the current subject.
    pub fn note_discovered(&mut self, id: InstanceId) {
        self.queue.push_back(id);
    }

    /// Count one instance selection; returns true when the cap is reached.
    pub fn record_selection(&mut self) -> bool {
        self.neighbor_count = (self.neighbor_count + 1).min(NEIGHBOR_CAP);
        self.cap_reached()
    }

    /// Move to the next subject. On first call this is the instance with the
    /// highest objectness; afterwards the BFS queue is popped (skipping
    /// instances already used as subjects), falling back to the
    /// highest-objectness unstarted instance. None when all are exhausted.
    pub fn advance_subject(&mut self, scene: &Scene) -> Option<InstanceId> {
        self.neighbor_count = 0;
        while let Some(id) = self.queue.pop_front() {
            if !self.started.contains(&id) {
                self.started.insert(id);
                self.current = Some(id);
                return self.current;
            }
        }
        let next = scene
            .instances
            .iter()
            .filter(|i| !self.started.contains(&i.id))
            .max_by(|a, b| {
                a.objectness
                    .partial_cmp(&b.objectness)
                    .unwrap()
                    .then(b.id.cmp(&a.id))
            })
            .map(|i| i.id);
        if let Some(id) = next {
            self.started.insert(id);
        }
        self.current = next;
        next
    }
}
