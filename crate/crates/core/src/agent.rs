//! Episode execution and the training loop, plus the policy variants used
//! for ablations.
//!
//! An episode walks the scene breadth-first: the current subject mines one
//! attribute, one predicate (toward the current object) and one next object
//! per step. A fresh subject first binds an object through a category-only
//! step in which the attribute and predicate actions are forced to Null.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action_graph::{AttributeId, CategoryId, PredicateId, SemanticGraph};
use crate::config::{OptimizerKind, TrainConfig};
use crate::environment::{
    matching_gt_indices, reward_attribute, reward_category, reward_predicate, InstanceId,
    ObjectInstance, Scene,
};
use crate::error::Result;
use crate::eval::{rank_predictions, Endpoint, Prediction, PredictionLabel};
use crate::features::{
    assemble_state, FeatureConfig, FeatureProvider, HistoryBuffer, PhraseKind,
};
use crate::qlearn::{
    q_update, select_actions, sync_target, Optimizer, QConfig, QModel, ReplayMemory, Transition,
    HEAD_ATTR, HEAD_CAT, HEAD_PRED,
};
use crate::rng::{substream, substream_indexed};
use crate::traversal::{
    build_attribute_actions, build_category_actions, build_predicate_actions,
    resolve_category_action, top_category, ActionSets, CandidateMode, SubjectScheduler,
    TraversalHistory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyVariant {
    Vrl,
    /// No action-set masking for attributes/predicates; the category set is
    /// every (category, unvisited instance) pair.
    FlatRl,
    RandomWalk,
    /// Object mining considers only the top-1 predicted category.
    NoAmbiguity,
    /// The phrase-embedding block of the state is replaced by the last four
    /// one-hot action vectors.
    HistoricalActionsState,
}

impl std::fmt::Display for PolicyVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PolicyVariant::Vrl => "vrl",
            PolicyVariant::FlatRl => "flat_rl",
            PolicyVariant::RandomWalk => "random_walk",
            PolicyVariant::NoAmbiguity => "no_ambiguity",
            PolicyVariant::HistoricalActionsState => "historical_actions_state",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for PolicyVariant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "vrl" => Ok(PolicyVariant::Vrl),
            "flat_rl" | "flat-rl" | "rl" => Ok(PolicyVariant::FlatRl),
            "random_walk" | "random-walk" => Ok(PolicyVariant::RandomWalk),
            "no_ambiguity" | "no-ambiguity" => Ok(PolicyVariant::NoAmbiguity),
            "historical_actions_state" | "historical-actions" => {
                Ok(PolicyVariant::HistoricalActionsState)
            }
            other => Err(format!("unknown policy variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub subject: InstanceId,
    /// Category the subject was bound under.
    pub subject_cat: CategoryId,
    pub object: Option<InstanceId>,
    pub object_cat: Option<CategoryId>,
    /// Head indices (attribute, predicate, category) actually taken.
    pub actions: [usize; 3],
    pub rewards: [f64; 3],
    pub emitted_phrases: Vec<String>,
    /// The variation-structured sets the step selected from.
    #[serde(skip)]
    pub sets: ActionSets,
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub predictions: Vec<Prediction>,
}

pub struct EpisodeOutcome {
    pub transitions: Vec<Transition>,
    pub log: EpisodeLog,
}

/// Everything an episode needs besides the scene and model.
pub struct Agent<'a> {
    pub graph: &'a SemanticGraph,
    pub provider: &'a dyn FeatureProvider,
    pub feat_cfg: FeatureConfig,
    pub variant: PolicyVariant,
    /// Seed for phrase embeddings (shared across episodes).
    pub phrase_seed: u64,
}

/// Dimension of one one-hot action record in the historical-actions state:
/// all three head ranges concatenated.
fn action_vec_dim(g: &SemanticGraph) -> usize {
    (g.n_attrs_head()) + (g.n_preds_head()) + (g.n_cats_head())
}

trait HeadDims {
    fn n_attrs_head(&self) -> usize;
    fn n_preds_head(&self) -> usize;
    fn n_cats_head(&self) -> usize;
}

impl HeadDims for SemanticGraph {
    fn n_attrs_head(&self) -> usize {
        self.n_attributes() + 1
    }
    fn n_preds_head(&self) -> usize {
        self.n_predicates() + 1
    }
    fn n_cats_head(&self) -> usize {
        self.n_categories() + 1
    }
}

impl<'a> Agent<'a> {
    pub fn new(
        graph: &'a SemanticGraph,
        provider: &'a dyn FeatureProvider,
        feat_cfg: FeatureConfig,
        variant: PolicyVariant,
        phrase_seed: u64,
    ) -> Agent<'a> {
        Agent {
            graph,
            provider,
            feat_cfg,
            variant,
            phrase_seed,
        }
    }

    /// State dimension the Q-network must be built for under this variant.
    pub fn state_dim(&self) -> usize {
        match self.variant {
            PolicyVariant::HistoricalActionsState => {
                self.feat_cfg.d_image
                    + 2 * self.feat_cfg.d_instance
                    + 4 * action_vec_dim(self.graph)
            }
            _ => self.feat_cfg.state_dim(),
        }
    }

    pub fn q_config(&self, hidden: Vec<usize>) -> QConfig {
        QConfig {
            state_dim: self.state_dim(),
            hidden,
            n_attrs: self.graph.n_attributes(),
            n_preds: self.graph.n_predicates(),
            n_cats: self.graph.n_categories(),
        }
    }

    fn candidate_mode(&self) -> CandidateMode {
        match self.variant {
            PolicyVariant::NoAmbiguity => CandidateMode::TopOnly,
            _ => CandidateMode::default(),
        }
    }

    fn assemble(
        &self,
        image: &[f64],
        subj: &[f64],
        obj: &[f64],
        hist: &HistoryBuffer,
        action_hist: &[[usize; 3]],
    ) -> Result<Vec<f64>> {
        match self.variant {
            PolicyVariant::HistoricalActionsState => {
                let dim = action_vec_dim(self.graph);
                let mut state =
                    Vec::with_capacity(self.feat_cfg.d_image + 2 * self.feat_cfg.d_instance + 4 * dim);
                state.extend_from_slice(image);
                state.extend_from_slice(subj);
                state.extend_from_slice(obj);
                // Most recent action first; missing records are zero blocks.
                for i in 0..4 {
                    let mut block = vec![0.0; dim];
                    if i < action_hist.len() {
                        let a = action_hist[action_hist.len() - 1 - i];
                        block[a[HEAD_ATTR]] = 1.0;
                        block[self.graph.n_attrs_head() + a[HEAD_PRED]] = 1.0;
                        block[self.graph.n_attrs_head() + self.graph.n_preds_head() + a[HEAD_CAT]] =
                            1.0;
                    }
                    state.extend(block);
                }
                Ok(state)
            }
            _ => assemble_state(image, subj, obj, hist, &self.feat_cfg, self.phrase_seed),
        }
    }

    /// Build the per-step action sets for (subject, optional object).
    fn build_sets(
        &self,
        scene: &Scene,
        subject: &ObjectInstance,
        s_cat: CategoryId,
        object: Option<(&ObjectInstance, CategoryId)>,
        hist: &TraversalHistory,
    ) -> Result<ActionSets> {
        let mut sets = ActionSets::default();
        if let Some((_, o_cat)) = object {
            sets.attrs = build_attribute_actions(self.graph, s_cat, hist, subject.id)?;
            sets.preds = build_predicate_actions(self.graph, s_cat, o_cat)?;
        }
        sets.cats = match self.variant {
            PolicyVariant::FlatRl => {
                let mut cats = BTreeSet::new();
                for t in &scene.instances {
                    if t.id == subject.id || hist.visited_instances.contains(&t.id) {
                        continue;
                    }
                    for c in self.graph.category_ids() {
                        cats.insert((c, t.id));
                    }
                }
                cats
            }
            _ => build_category_actions(scene, subject, hist, self.candidate_mode()),
        };
        Ok(sets)
    }

    fn head_index_sets(&self, sets: &ActionSets, binding: bool) -> [Vec<usize>; 3] {
        match self.variant {
            // Flat RL selects over the full attribute/predicate ranges except
            // on binding steps, where no pair exists yet. Mirroring the
            // masked sets, the Null slot is only reachable when a set would
            // be empty — and the full ranges never are.
            PolicyVariant::FlatRl if !binding => [
                (0..self.graph.n_attributes()).collect(),
                (0..self.graph.n_predicates()).collect(),
                sets.cat_head_indices(self.graph.n_categories()),
            ],
            _ => [
                if binding {
                    vec![self.graph.n_attributes()]
                } else {
                    sets.attr_head_indices(self.graph.n_attributes())
                },
                if binding {
                    vec![self.graph.n_predicates()]
                } else {
                    sets.pred_head_indices(self.graph.n_predicates())
                },
                sets.cat_head_indices(self.graph.n_categories()),
            ],
        }
    }

    pub fn run_episode(
        &self,
        scene: &Scene,
        model: &QModel,
        mode: Mode,
        eps: f64,
        rng: &mut ChaCha8Rng,
        max_steps: usize,
    ) -> Result<EpisodeOutcome> {
        let mut log = EpisodeLog::default();
        let mut transitions = Vec::new();
        if scene.instances.is_empty() {
            return Ok(EpisodeOutcome { transitions, log });
        }
        let image = self.provider.image_feature(scene)?;
        let zero_inst = vec![0.0; self.feat_cfg.d_instance];

        let mut sched = SubjectScheduler::new();
        let mut hist = TraversalHistory::default();
        let mut hbuf = HistoryBuffer::default();
        let mut action_hist: Vec<[usize; 3]> = Vec::new();
        let mut discovered: BTreeSet<usize> = BTreeSet::new();
        let mut assigned: BTreeMap<InstanceId, CategoryId> = BTreeMap::new();

        let mut subject = sched.advance_subject(scene).expect("non-empty scene");
        hist.mark_visited(subject);
        let start_cat = top_category(scene.instance(subject).unwrap());
        assigned.insert(subject, start_cat);
        // The starting subject counts as discovering its ground truth.
        for i in matching_gt_indices(scene, scene.instance(subject).unwrap(), start_cat) {
            discovered.insert(i);
        }
        let mut object: Option<InstanceId> = None;

        // Transitions are finalized one step late, once the successor state
        // and its action sets are known.
        struct Pending {
            state: Vec<f64>,
            actions: [usize; 3],
            rewards: [f64; 3],
        }
        let mut pending: Option<Pending> = None;
        let mut done = false;

        for step in 0..max_steps {
            if done {
                break;
            }
            let subj_inst = scene.instance(subject).expect("subject exists");
            let s_cat = assigned[&subject];
            let obj_pair = object.map(|id| {
                let inst = scene.instance(id).expect("object exists");
                (inst, assigned[&id])
            });
            let binding = obj_pair.is_none();

            let sets = self.build_sets(scene, subj_inst, s_cat, obj_pair, &hist)?;
            let idx_sets = self.head_index_sets(&sets, binding);

            let subj_feat = self.provider.instance_feature(scene, subj_inst)?;
            let obj_feat = match obj_pair {
                Some((o, _)) => self.provider.instance_feature(scene, o)?,
                None => zero_inst.clone(),
            };
            let state = self.assemble(&image, &subj_feat, &obj_feat, &hbuf, &action_hist)?;

            // Finalize the previous transition now that f' and Δ' are known.
            if let Some(p) = pending.take() {
                transitions.push(Transition {
                    state: p.state,
                    actions: p.actions,
                    rewards: p.rewards,
                    next_state: state.clone(),
                    next_sets: idx_sets.clone(),
                    terminal: false,
                });
            }

            let q = model.forward(&state)?;
            let actions = select_actions(&q, &idx_sets, eps, rng);

            let g_a: Option<AttributeId> = (actions[HEAD_ATTR] < self.graph.n_attributes())
                .then(|| AttributeId(actions[HEAD_ATTR] as u32));
            let g_p: Option<PredicateId> = (actions[HEAD_PRED] < self.graph.n_predicates())
                .then(|| PredicateId(actions[HEAD_PRED] as u32));
            let g_c: Option<CategoryId> = (actions[HEAD_CAT] < self.graph.n_categories())
                .then(|| CategoryId(actions[HEAD_CAT] as u32));

            let mut rewards = [0.0; 3];
            let mut emitted = Vec::new();

            // Attribute action.
            rewards[HEAD_ATTR] = reward_attribute(scene, subj_inst, s_cat, g_a) as f64;
            if let Some(a) = g_a {
                // Re-mined (instance, attribute) pairs update Q but are not
                // re-emitted as predictions.
                let fresh = hist.record_attr(subject, a);
                let phrase = format!(
                    "{} {}",
                    self.graph.category_name(s_cat)?,
                    self.graph.attribute_name(a)?
                );
                hbuf.push(PhraseKind::Attribute, phrase.clone());
                emitted.push(phrase);
                if fresh {
                    log.predictions.push(Prediction {
                        subject: Endpoint {
                            instance: subject,
                            category: s_cat,
                            bbox: subj_inst.bbox,
                            confidence: subj_inst.objectness,
                        },
                        object: None,
                        label: PredictionLabel::Attribute(a),
                        q_value: q[HEAD_ATTR][actions[HEAD_ATTR]],
                        score: 0.0,
                    });
                }
            }

            // Predicate action.
            if let Some((obj_inst, o_cat)) = obj_pair {
                rewards[HEAD_PRED] =
                    reward_predicate(scene, subj_inst, s_cat, obj_inst, o_cat, g_p) as f64;
                if let Some(p) = g_p {
                    let phrase = format!(
                        "{} {} {}",
                        self.graph.category_name(s_cat)?,
                        self.graph.predicate_name(p)?,
                        self.graph.category_name(o_cat)?
                    );
                    hbuf.push(PhraseKind::Relationship, phrase.clone());
                    emitted.push(phrase);
                    // Duplicate (s, p, o) triples update Q but are not
                    // re-emitted as predictions.
                    if hist.record_triple(subject, p, obj_inst.id) {
                        log.predictions.push(Prediction {
                            subject: Endpoint {
                                instance: subject,
                                category: s_cat,
                                bbox: subj_inst.bbox,
                                confidence: subj_inst.objectness,
                            },
                            object: Some(Endpoint {
                                instance: obj_inst.id,
                                category: o_cat,
                                bbox: obj_inst.bbox,
                                confidence: obj_inst.objectness,
                            }),
                            label: PredictionLabel::Predicate(p),
                            q_value: q[HEAD_PRED][actions[HEAD_PRED]],
                            score: 0.0,
                        });
                    }
                }
            }

            // Category action: bind the next object or fire Terminal.
            match g_c {
                Some(c) => {
                    let next_id = resolve_category_action(scene, c, &sets.cats)?;
                    let next_inst = scene.instance(next_id).expect("candidate exists");
                    rewards[HEAD_CAT] =
                        reward_category(scene, Some((next_inst, c)), &discovered) as f64;
                    for i in matching_gt_indices(scene, next_inst, c) {
                        discovered.insert(i);
                    }
                    hist.mark_visited(next_id);
                    assigned.insert(next_id, c);
                    sched.note_discovered(next_id);
                    object = Some(next_id);
                    if sched.record_selection() {
                        match sched.advance_subject(scene) {
                            Some(next_subj) => {
                                subject = next_subj;
                                hist.mark_visited(subject);
                                let cat = *assigned.entry(subject).or_insert_with(|| {
                                    top_category(scene.instance(subject).unwrap())
                                });
                                for i in
                                    matching_gt_indices(scene, scene.instance(subject).unwrap(), cat)
                                {
                                    discovered.insert(i);
                                }
                                object = None;
                            }
                            None => done = true,
                        }
                    }
                }
                None => {
                    // Terminal trigger: move to the next subject.
                    rewards[HEAD_CAT] = 0.0;
                    object = None;
                    match sched.advance_subject(scene) {
                        Some(next_subj) => {
                            subject = next_subj;
                            hist.mark_visited(subject);
                            let cat = *assigned
                                .entry(subject)
                                .or_insert_with(|| top_category(scene.instance(subject).unwrap()));
                            for i in
                                matching_gt_indices(scene, scene.instance(subject).unwrap(), cat)
                            {
                                discovered.insert(i);
                            }
                        }
                        None => done = true,
                    }
                }
            }

            action_hist.push(actions);
            log.steps.push(StepRecord {
                step,
                subject: subj_inst.id,
                subject_cat: s_cat,
                object: obj_pair.map(|(o, _)| o.id),
                object_cat: obj_pair.map(|(_, c)| c),
                actions,
                rewards,
                emitted_phrases: emitted,
                sets,
            });
            if mode == Mode::Train {
                pending = Some(Pending {
                    state,
                    actions,
                    rewards,
                });
            }
        }

        if let Some(p) = pending.take() {
            let dim = self.state_dim();
            transitions.push(Transition {
                state: p.state,
                actions: p.actions,
                rewards: p.rewards,
                next_state: vec![0.0; dim],
                next_sets: [Vec::new(), Vec::new(), Vec::new()],
                terminal: true,
            });
        }
        Ok(EpisodeOutcome { transitions, log })
    }
}

/// Baseline that visits instances in a uniformly random order and predicts a
/// uniformly random predicate and attribute for each consecutive pair.
pub fn random_walk_episode(
    graph: &SemanticGraph,
    scene: &Scene,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeLog> {
    use rand::seq::SliceRandom;
    let mut log = EpisodeLog::default();
    if scene.instances.is_empty() {
        return Ok(log);
    }
    let mut order: Vec<&ObjectInstance> = scene.instances.iter().collect();
    order.shuffle(rng);
    let mut hist = TraversalHistory::default();
    for pair in order.windows(2) {
        let (s, t) = (pair[0], pair[1]);
        let s_cat = top_category(s);
        let t_cat = top_category(t);
        let attrs = build_attribute_actions(graph, s_cat, &hist, s.id)?;
        if let Some(&a) = pick_uniform(&attrs, rng) {
            hist.record_attr(s.id, a);
            log.predictions.push(Prediction {
                subject: Endpoint {
                    instance: s.id,
                    category: s_cat,
                    bbox: s.bbox,
                    confidence: s.objectness,
                },
                object: None,
                label: PredictionLabel::Attribute(a),
                q_value: 0.0,
                score: 0.0,
            });
        }
        let preds = build_predicate_actions(graph, s_cat, t_cat)?;
        if let Some(&p) = pick_uniform(&preds, rng) {
            if hist.record_triple(s.id, p, t.id) {
                log.predictions.push(Prediction {
                    subject: Endpoint {
                        instance: s.id,
                        category: s_cat,
                        bbox: s.bbox,
                        confidence: s.objectness,
                    },
                    object: Some(Endpoint {
                        instance: t.id,
                        category: t_cat,
                        bbox: t.bbox,
                        confidence: t.objectness,
                    }),
                    label: PredictionLabel::Predicate(p),
                    q_value: 0.0,
                    score: 0.0,
                });
            }
        }
    }
    Ok(log)
}

/// Uniform draw over the variation-structured action set; `None` only when
/// the set is empty (the null action is available exactly then).
fn pick_uniform<'s, T>(set: &'s BTreeSet<T>, rng: &mut ChaCha8Rng) -> Option<&'s T> {
    use rand::Rng;
    if set.is_empty() {
        return None;
    }
    let i = rng.random_range(0..set.len());
    set.iter().nth(i)
}

/// One CSV-friendly row per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_reward: f64,
    pub recall50_rel: f64,
    pub recall50_attr: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,mean_reward,recall50_rel,recall50_attr,epsilon,alpha\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.8}\n",
            r.epoch, r.mean_reward, r.recall50_rel, r.recall50_attr, r.epsilon, r.alpha
        ));
    }
    out
}

pub struct TrainOutput {
    pub model: QModel,
    pub metrics: Vec<EpochMetrics>,
    pub global_steps: u64,
}

/// Train a model on `scenes`. A deterministic `val_fraction` tail of the
/// (seed-shuffled) scene list is held out for per-epoch greedy validation.
pub fn train(
    scenes: &[Scene],
    agent: &Agent<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutput> {
    use rand::seq::SliceRandom;
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(crate::error::VrlError::Contract(
            "training requires at least one scene".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut substream(seed, "split"));
    let n_val = ((scenes.len() as f64 * cfg.val_fraction) as usize).min(scenes.len() - 1);
    let (train_idx, val_idx) = order.split_at(scenes.len() - n_val);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut model = QModel::new(agent.q_config(cfg.hidden.clone()), seed);
    let mut target = model.clone();
    let mut opt = match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::sgd(),
        OptimizerKind::RmsProp => Optimizer::new(OptimizerKind::RmsProp, cfg.rms_decay, cfg.rms_eps),
    };
    let mut replay = ReplayMemory::new(cfg.replay_capacity);
    let mut act_rng = substream(seed, "act");
    let mut sample_rng = substream(seed, "sample");
    let mut global_step: u64 = 0;
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let eps = cfg.epsilon_at(epoch);
        let lr = cfg.lr_at(epoch);
        train_idx.shuffle(&mut substream_indexed(seed, "shuffle", epoch as u64));

        let mut reward_sum = 0.0;
        let mut reward_steps = 0usize;
        for &si in &train_idx {
            let outcome = agent.run_episode(
                &scenes[si],
                &model,
                Mode::Train,
                eps,
                &mut act_rng,
                cfg.max_steps,
            )?;
            for t in outcome.transitions {
                reward_sum += t.rewards.iter().sum::<f64>();
                reward_steps += 1;
                replay.push(t);
                global_step += 1;
                if replay.len() >= cfg.batch {
                    let batch = replay.sample(cfg.batch, &mut sample_rng)?;
                    q_update(&mut model, &target, &batch, cfg.gamma, lr, &mut opt)?;
                }
                sync_target(&model, &mut target, global_step, cfg.tau);
            }
        }

        // Greedy validation recall.
        let (mut rel_sum, mut rel_n) = (0.0, 0usize);
        let (mut attr_sum, mut attr_n) = (0.0, 0usize);
        for &vi in &val_idx {
            let mut eval_rng = substream_indexed(seed, "val", vi as u64);
            let outcome = agent.run_episode(
                &scenes[vi],
                &model,
                Mode::Eval,
                0.0,
                &mut eval_rng,
                cfg.max_steps,
            )?;
            let ranked = rank_predictions(outcome.log.predictions);
            if let Some(r) = crate::eval::recall_at_k(
                &ranked,
                &scenes[vi],
                50,
                crate::eval::RecallTask::Relationship,
                None,
            ) {
                rel_sum += r;
                rel_n += 1;
            }
            if let Some(r) = crate::eval::recall_at_k(
                &ranked,
                &scenes[vi],
                50,
                crate::eval::RecallTask::Attribute,
                None,
            ) {
                attr_sum += r;
                attr_n += 1;
            }
        }
        metrics.push(EpochMetrics {
            epoch,
            mean_reward: if reward_steps > 0 {
                reward_sum / reward_steps as f64
            } else {
                0.0
            },
            recall50_rel: if rel_n > 0 { rel_sum / rel_n as f64 } else { 0.0 },
            recall50_attr: if attr_n > 0 {
                attr_sum / attr_n as f64
            } else {
                0.0
            },
            epsilon: eps,
            alpha: lr,
        });
    }
    Ok(TrainOutput {
        model,
        metrics,
        global_steps: global_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_graph::{build_graph, PhraseCounts};
    use crate::features::SyntheticProvider;
    use crate::synth::{generate_scene_set, SynthParams};

    fn graph() -> SemanticGraph {
        let counts = PhraseCounts {
            attribute_phrases: vec![
                ("cat".into(), "small".into(), 5),
                ("dog".into(), "brown".into(), 5),
                ("dog".into(), "big".into(), 5),
            ],
            predicate_phrases: vec![
                ("cat".into(), "near".into(), "dog".into(), 5),
                ("dog".into(), "near".into(), "cat".into(), 5),
                ("cat".into(), "near".into(), "cat".into(), 5),
                ("dog".into(), "near".into(), "dog".into(), 5),
                ("dog".into(), "chasing".into(), "cat".into(), 5),
            ],
        };
        build_graph(&counts, 1).unwrap()
    }

    fn small_cfg() -> FeatureConfig {
        FeatureConfig {
            d_image: 8,
            d_instance: 8,
            d_phrase: 4,
        }
    }

    #[test]
    fn single_instance_scene_is_one_terminal_step() {
        let g = graph();
        let provider = SyntheticProvider::new(small_cfg(), 0);
        let agent = Agent::new(&g, &provider, small_cfg(), PolicyVariant::Vrl, 0);
        let mut scenes = generate_scene_set(
            &g,
            1,
            1,
            &SynthParams {
                n_objects: 1,
                ..SynthParams::default()
            },
        )
        .unwrap();
        let scene = scenes.pop().unwrap();
        let model = QModel::new(agent.q_config(vec![8]), 0);
        let mut rng = substream(0, "t");
        let out = agent
            .run_episode(&scene, &model, Mode::Train, 0.0, &mut rng, 300)
            .unwrap();
        // Lone instance: binding step offers only Terminal, episode ends.
        assert_eq!(out.log.steps.len(), 1);
        assert!(out.transitions.last().unwrap().terminal);
    }

    #[test]
    fn empty_scene_is_an_empty_episode() {
        let g = graph();
        let provider = SyntheticProvider::new(small_cfg(), 0);
        let agent = Agent::new(&g, &provider, small_cfg(), PolicyVariant::Vrl, 0);
        let scene = Scene {
            id: "empty".into(),
            instances: vec![],
            gt: Default::default(),
            image_feature_key: "empty".into(),
        };
        let model = QModel::new(agent.q_config(vec![8]), 0);
        let mut rng = substream(0, "t");
        let out = agent
            .run_episode(&scene, &model, Mode::Train, 0.0, &mut rng, 300)
            .unwrap();
        assert!(out.log.steps.is_empty());
        assert!(out.transitions.is_empty());
    }

    #[test]
    fn episodes_respect_max_steps_and_determinism() {
        let g = graph();
        let provider = SyntheticProvider::new(small_cfg(), 0);
        let agent = Agent::new(&g, &provider, small_cfg(), PolicyVariant::Vrl, 0);
        let scenes = generate_scene_set(&g, 5, 3, &SynthParams::default()).unwrap();
        let model = QModel::new(agent.q_config(vec![16]), 1);
        for scene in &scenes {
            let mut rng1 = substream(3, "t");
            let mut rng2 = substream(3, "t");
            let a = agent
                .run_episode(scene, &model, Mode::Eval, 0.0, &mut rng1, 300)
                .unwrap();
            let b = agent
                .run_episode(scene, &model, Mode::Eval, 0.0, &mut rng2, 300)
                .unwrap();
            assert!(a.log.steps.len() <= 300);
            assert_eq!(a.log.steps.len(), b.log.steps.len());
            assert_eq!(a.log.predictions, b.log.predictions);
        }
    }

    #[test]
    fn transitions_chain_states() {
        let g = graph();
        let provider = SyntheticProvider::new(small_cfg(), 0);
        let agent = Agent::new(&g, &provider, small_cfg(), PolicyVariant::Vrl, 0);
        let scenes = generate_scene_set(&g, 6, 1, &SynthParams::default()).unwrap();
        let model = QModel::new(agent.q_config(vec![16]), 1);
        let mut rng = substream(4, "t");
        let out = agent
            .run_episode(&scenes[0], &model, Mode::Train, 0.5, &mut rng, 300)
            .unwrap();
        assert!(!out.transitions.is_empty());
        for w in out.transitions.windows(2) {
            assert_eq!(w[0].next_state, w[1].state);
        }
        assert!(out.transitions.last().unwrap().terminal);
        for t in &out.transitions {
            for h in 0..3 {
                assert!(t.terminal || !t.next_sets[h].is_empty());
            }
        }
    }

    #[test]
    fn random_walk_emits_only_graph_edges() {
        let g = graph();
        let scenes = generate_scene_set(&g, 9, 3, &SynthParams::default()).unwrap();
        let mut rng = substream(5, "t");
        for scene in &scenes {
            let log = random_walk_episode(&g, scene, &mut rng).unwrap();
            for p in &log.predictions {
                if let PredictionLabel::Predicate(pred) = p.label {
                    let s_cat = p.subject.category;
                    let o_cat = p.object.as_ref().unwrap().category;
                    assert!(g.predicates_between(s_cat, o_cat).unwrap().contains(&pred));
                }
            }
        }
        // Zero-instance scene gives an empty log.
        let empty = Scene {
            id: "e".into(),
            instances: vec![],
            gt: Default::default(),
            image_feature_key: "e".into(),
        };
        assert!(random_walk_episode(&g, &empty, &mut rng)
            .unwrap()
            .predictions
            .is_empty());
    }

    #[test]
    fn historical_actions_state_has_expected_dim() {
        let g = graph();
        let provider = SyntheticProvider::new(small_cfg(), 0);
        let agent = Agent::new(
            &g,
            &provider,
            small_cfg(),
            PolicyVariant::HistoricalActionsState,
            0,
        );
        let expected = 8 + 16
            + 4 * ((g.n_attributes() + 1) + (g.n_predicates() + 1) + (g.n_categories() + 1));
        assert_eq!(agent.state_dim(), expected);
        let scenes = generate_scene_set(&g, 12, 1, &SynthParams::default()).unwrap();
        let model = QModel::new(agent.q_config(vec![8]), 2);
        let mut rng = substream(6, "t");
        let out = agent
            .run_episode(&scenes[0], &model, Mode::Train, 0.3, &mut rng, 50)
            .unwrap();
        for t in &out.transitions {
            assert_eq!(t.state.len(), expected);
        }
    }

    #[test]
    fn training_metrics_follow_schedules_and_are_reproducible() {
        let g = graph();
        let provider = SyntheticProvider::new(small_cfg(), 0);
        let agent = Agent::new(&g, &provider, small_cfg(), PolicyVariant::Vrl, 0);
        let scenes = generate_scene_set(&g, 20, 8, &SynthParams::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch: 8,
            hidden: vec![16],
            tau: 50,
            replay_capacity: 500,
            ..TrainConfig::default()
        };
        let out1 = train(&scenes, &agent, &cfg, 42).unwrap();
        let out2 = train(&scenes, &agent, &cfg, 42).unwrap();
        assert_eq!(metrics_csv(&out1.metrics), metrics_csv(&out2.metrics));
        assert_eq!(out1.metrics[0].epsilon, 1.0);
        assert!((out1.metrics[1].epsilon - cfg.epsilon_at(1)).abs() < 1e-12);
        assert_eq!(out1.metrics[0].alpha, 0.0007);
    }
}
