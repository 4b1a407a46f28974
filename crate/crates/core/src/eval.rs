//! Prediction ranking, Recall@K for the phrase / relationship / attribute
//! tasks, and zero-shot type splitting.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::action_graph::{AttributeId, CategoryId, PredicateId};
use crate::environment::{iou, BoundingBox, InstanceId, Scene, IOU_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionLabel {
    Attribute(AttributeId),
    Predicate(PredicateId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Endpoint {
    pub instance: InstanceId,
    pub category: CategoryId,
    pub bbox: BoundingBox,
    /// Objectness confidence of the instance.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject: Endpoint,
    /// Present for relationship predictions only.
    pub object: Option<Endpoint>,
    pub label: PredictionLabel,
    pub q_value: f64,
    /// Ranking score; filled by [`rank_predictions`].
    pub score: f64,
}

impl Prediction {
    pub fn is_relationship(&self) -> bool {
        matches!(self.label, PredictionLabel::Predicate(_))
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Score each prediction by the product of its endpoint confidences and the
/// squashed Q-value, then sort descending. Ties keep insertion order.
pub fn rank_predictions(mut preds: Vec<Prediction>) -> Vec<Prediction> {
    for p in &mut preds {
        let conf = match &p.object {
            Some(o) => p.subject.confidence * o.confidence,
            None => p.subject.confidence,
        };
        p.score = conf * sigmoid(p.q_value);
    }
    preds.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    preds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallTask {
    /// Label and categories match and the enclosing boxes of the pair
    /// overlap with IoU >= 0.5.
    Phrase,
    /// Label and categories match and both endpoint boxes overlap their
    /// ground-truth boxes with IoU >= 0.5.
    Relationship,
    /// Attribute and subject category match and the subject box overlaps.
    Attribute,
}

fn matches_gt_pred(
    p: &Prediction,
    scene: &Scene,
    gt: (usize, PredicateId, usize),
    task: RecallTask,
) -> bool {
    let PredictionLabel::Predicate(label) = p.label else {
        return false;
    };
    let Some(obj) = &p.object else { return false };
    let (si, gp, oi) = gt;
    if label != gp {
        return false;
    }
    let (gs_cat, gs_box) = &scene.gt.objects[si];
    let (go_cat, go_box) = &scene.gt.objects[oi];
    if p.subject.category != *gs_cat || obj.category != *go_cat {
        return false;
    }
    match task {
        RecallTask::Relationship => {
            iou(&p.subject.bbox, gs_box) >= IOU_THRESHOLD && iou(&obj.bbox, go_box) >= IOU_THRESHOLD
        }
        RecallTask::Phrase => {
            let pred_union = p.subject.bbox.enclosing(&obj.bbox);
            let gt_union = gs_box.enclosing(go_box);
            iou(&pred_union, &gt_union) >= IOU_THRESHOLD
        }
        RecallTask::Attribute => false,
    }
}

fn matches_gt_attr(p: &Prediction, scene: &Scene, gt: (usize, AttributeId)) -> bool {
    let PredictionLabel::Attribute(label) = p.label else {
        return false;
    };
    let (gi, ga) = gt;
    if label != ga {
        return false;
    }
    let (g_cat, g_box) = &scene.gt.objects[gi];
    p.subject.category == *g_cat && iou(&p.subject.bbox, g_box) >= IOU_THRESHOLD
}

/// Fraction of the scene's ground-truth phrases (of the task's kind) covered
/// by the top-k ranked predictions of that kind. Each ground-truth phrase is
/// counted at most once, greedily in rank order. Returns None when the scene
/// has no ground-truth phrase of the kind (or none within `restrict`).
pub fn recall_at_k(
    ranked: &[Prediction],
    scene: &Scene,
    k: usize,
    task: RecallTask,
    restrict: Option<&ZeroShotSplit>,
) -> Option<f64> {
    assert!(k >= 1, "k must be >= 1");
    match task {
        RecallTask::Attribute => {
            let gts: Vec<(usize, AttributeId)> = scene.gt.attr_phrases.iter().copied().collect();
            if gts.is_empty() {
                return None;
            }
            let mut matched = vec![false; gts.len()];
            for p in ranked.iter().filter(|p| !p.is_relationship()).take(k) {
                if let Some(i) = gts
                    .iter()
                    .enumerate()
                    .position(|(i, &gt)| !matched[i] && matches_gt_attr(p, scene, gt))
                {
                    matched[i] = true;
                }
            }
            Some(matched.iter().filter(|&&m| m).count() as f64 / gts.len() as f64)
        }
        RecallTask::Relationship | RecallTask::Phrase => {
            let gts: Vec<(usize, PredicateId, usize)> = scene
                .gt
                .pred_phrases
                .iter()
                .copied()
                .filter(|&(si, p, oi)| match restrict {
                    None => true,
                    Some(split) => split.unseen_types.contains(&(
                        scene.gt.objects[si].0,
                        p,
                        scene.gt.objects[oi].0,
                    )),
                })
                .collect();
            if gts.is_empty() {
                return None;
            }
            let mut matched = vec![false; gts.len()];
            for p in ranked.iter().filter(|p| p.is_relationship()).take(k) {
                if let Some(i) = gts
                    .iter()
                    .enumerate()
                    .position(|(i, &gt)| !matched[i] && matches_gt_pred(p, scene, gt, task))
                {
                    matched[i] = true;
                }
            }
            Some(matched.iter().filter(|&&m| m).count() as f64 / gts.len() as f64)
        }
    }
}

/// Relationship types present in the test ground truth but absent from the
/// training ground truth.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotSplit {
    pub unseen_types: BTreeSet<(CategoryId, PredicateId, CategoryId)>,
}

fn typed_triples(scenes: &[Scene]) -> BTreeSet<(CategoryId, PredicateId, CategoryId)> {
    let mut out = BTreeSet::new();
    for s in scenes {
        for &(i, p, j) in &s.gt.pred_phrases {
            out.insert((s.gt.objects[i].0, p, s.gt.objects[j].0));
        }
    }
    out
}

pub fn zero_shot_split(train_scenes: &[Scene], test_scenes: &[Scene]) -> ZeroShotSplit {
    let train = typed_triples(train_scenes);
    let test = typed_triples(test_scenes);
    ZeroShotSplit {
        unseen_types: test.difference(&train).copied().collect(),
    }
}

/// Macro-averaged recalls over a scene set. Scenes without ground truth of a
/// task's kind are skipped for that task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_scenes: usize,
    pub recall50_phrase: f64,
    pub recall100_phrase: f64,
    pub recall50_relationship: f64,
    pub recall100_relationship: f64,
    pub recall50_attribute: f64,
    pub recall100_attribute: f64,
    pub zero_shot_recall50: Option<f64>,
    pub zero_shot_recall100: Option<f64>,
}

/// Aggregate per-scene ranked predictions into an [`EvalReport`].
pub fn evaluate_scenes(
    scenes: &[Scene],
    per_scene_ranked: &[Vec<Prediction>],
    zero_shot: Option<&ZeroShotSplit>,
) -> EvalReport {
    assert_eq!(scenes.len(), per_scene_ranked.len());
    let mut report = EvalReport {
        n_scenes: scenes.len(),
        ..Default::default()
    };
    let macro_avg = |task: RecallTask, k: usize, restrict: Option<&ZeroShotSplit>| -> f64 {
        let vals: Vec<f64> = scenes
            .iter()
            .zip(per_scene_ranked)
            .filter_map(|(s, preds)| recall_at_k(preds, s, k, task, restrict))
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    report.recall50_phrase = macro_avg(RecallTask::Phrase, 50, None);
    report.recall100_phrase = macro_avg(RecallTask::Phrase, 100, None);
    report.recall50_relationship = macro_avg(RecallTask::Relationship, 50, None);
    report.recall100_relationship = macro_avg(RecallTask::Relationship, 100, None);
    report.recall50_attribute = macro_avg(RecallTask::Attribute, 50, None);
    report.recall100_attribute = macro_avg(RecallTask::Attribute, 100, None);
    if let Some(split) = zero_shot {
        report.zero_shot_recall50 = Some(macro_avg(RecallTask::Relationship, 50, Some(split)));
        report.zero_shot_recall100 = Some(macro_avg(RecallTask::Relationship, 100, Some(split)));
    }
    report
}
