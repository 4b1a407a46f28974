//! Scene data model, box geometry, ground-truth matching and the three
//! reward functions.
//!
//! Boxes are center-based: (cx, cy) is the box center, w/h its extent, all in
//! abstract scene units. A detected instance "overlaps" a ground-truth object
//! when the assigned category matches and IoU >= 0.5.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::action_graph::{AttributeId, CategoryId, PredicateId};
use crate::error::{Result, VrlError};

pub type InstanceId = u32;

/// Inclusive IoU threshold for ground-truth overlap.
pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<BoundingBox> {
        if !(w > 0.0 && h > 0.0) || !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(VrlError::Contract(format!(
                "bounding box requires finite coordinates and w, h > 0 (got cx={cx} cy={cy} w={w} h={h})"
            )));
        }
        Ok(BoundingBox { cx, cy, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    fn x1(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    fn y1(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    fn x2(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    fn y2(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    /// Tight enclosing box of `self` and `other`.
    pub fn enclosing(&self, other: &BoundingBox) -> BoundingBox {
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        let x2 = self.x2().max(other.x2());
        let y2 = self.y2().max(other.y2());
        BoundingBox {
            cx: (x1 + x2) / 2.0,
            cy: (y1 + y2) / 2.0,
            w: x2 - x1,
            h: y2 - y1,
        }
    }
}

/// Intersection-over-union of two boxes; 0 when disjoint.
pub fn iou(b1: &BoundingBox, b2: &BoundingBox) -> f64 {
    let ix = (b1.x2().min(b2.x2()) - b1.x1().max(b2.x1())).max(0.0);
    let iy = (b1.y2().min(b2.y2()) - b1.y1().max(b2.y1())).max(0.0);
    let inter = ix * iy;
    let union = b1.area() + b2.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: InstanceId,
    pub bbox: BoundingBox,
    /// Per-category detection confidences, all in [0, 1]. Non-empty.
    pub category_scores: BTreeMap<CategoryId, f64>,
    /// Detector objectness confidence in [0, 1].
    pub objectness: f64,
}

impl ObjectInstance {
    pub fn validate(&self) -> Result<()> {
        if self.category_scores.is_empty() {
            return Err(VrlError::Contract(format!(
                "instance {} has no category scores",
                self.id
            )));
        }
        for (&c, &s) in &self.category_scores {
            if !(0.0..=1.0).contains(&s) {
                return Err(VrlError::Contract(format!(
                    "instance {}: score {s} for category {c} outside [0,1]",
                    self.id
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.objectness) {
            return Err(VrlError::Contract(format!(
                "instance {}: objectness {} outside [0,1]",
                self.id, self.objectness
            )));
        }
        BoundingBox::new(self.bbox.cx, self.bbox.cy, self.bbox.w, self.bbox.h)?;
        Ok(())
    }
}

/// Two instances are neighbors when their center offsets are strictly within
/// half the summed extents on both axes.
pub fn is_neighbor(s: &ObjectInstance, t: &ObjectInstance) -> bool {
    boxes_neighbor(&s.bbox, &t.bbox)
}

pub fn boxes_neighbor(a: &BoundingBox, b: &BoundingBox) -> bool {
    (b.cx - a.cx).abs() < 0.5 * (b.w + a.w) && (b.cy - a.cy).abs() < 0.5 * (b.h + a.h)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub objects: Vec<(CategoryId, BoundingBox)>,
    /// (ground-truth object index, attribute)
    pub attr_phrases: BTreeSet<(usize, AttributeId)>,
    /// (ground-truth subject index, predicate, ground-truth object index)
    pub pred_phrases: BTreeSet<(usize, PredicateId, usize)>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        let n = self.objects.len();
        for &(i, a) in &self.attr_phrases {
            if i >= n {
                return Err(VrlError::Contract(format!(
                    "attribute phrase ({i}, {a}) references missing gt object"
                )));
            }
        }
        for &(i, p, j) in &self.pred_phrases {
            if i >= n || j >= n {
                return Err(VrlError::Contract(format!(
                    "predicate phrase ({i}, {p}, {j}) references missing gt object"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub instances: Vec<ObjectInstance>,
    pub gt: GroundTruth,
    /// Handle passed to the feature provider for the whole-image feature.
    pub image_feature_key: String,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for inst in &self.instances {
            inst.validate()?;
            if !seen.insert(inst.id) {
                return Err(VrlError::Contract(format!(
                    "scene {}: duplicate instance id {}",
                    self.id, inst.id
                )));
            }
        }
        self.gt.validate()
    }

    pub fn instance(&self, id: InstanceId) -> Option<&ObjectInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Keep only the `cap` highest-objectness instances (ties broken by lower
    /// id), preserving id order in the retained list.
    pub fn cap_instances(&mut self, cap: usize) {
        if self.instances.len() <= cap {
            return;
        }
        let mut order: Vec<usize> = (0..self.instances.len()).collect();
        order.sort_by(|&a, &b| {
            let (ia, ib) = (&self.instances[a], &self.instances[b]);
            ib.objectness
                .partial_cmp(&ia.objectness)
                .unwrap()
                .then(ia.id.cmp(&ib.id))
        });
        let keep: BTreeSet<usize> = order.into_iter().take(cap).collect();
        let mut idx = 0;
        self.instances.retain(|_| {
            let k = keep.contains(&idx);
            idx += 1;
            k
        });
    }
}

/// True iff the ground-truth object carries the assigned category and the
/// boxes overlap with IoU >= 0.5.
pub fn overlaps(
    inst: &ObjectInstance,
    assigned_cat: CategoryId,
    gt_obj: &(CategoryId, BoundingBox),
) -> bool {
    gt_obj.0 == assigned_cat && iou(&inst.bbox, &gt_obj.1) >= IOU_THRESHOLD
}

/// Indices of ground-truth objects that overlap (inst, assigned_cat).
pub fn matching_gt_indices(
    scene: &Scene,
    inst: &ObjectInstance,
    assigned_cat: CategoryId,
) -> Vec<usize> {
    scene
        .gt
        .objects
        .iter()
        .enumerate()
        .filter(|(_, gt)| overlaps(inst, assigned_cat, gt))
        .map(|(i, _)| i)
        .collect()
}

/// Attribute reward: +1 when some overlapping ground-truth object carries the
/// predicted attribute phrase, -1 otherwise, 0 for the Null action.
pub fn reward_attribute(
    scene: &Scene,
    s: &ObjectInstance,
    s_cat: CategoryId,
    g_a: Option<AttributeId>,
) -> i32 {
    let Some(a) = g_a else { return 0 };
    let hit = matching_gt_indices(scene, s, s_cat)
        .into_iter()
        .any(|i| scene.gt.attr_phrases.contains(&(i, a)));
    if hit {
        1
    } else {
        -1
    }
}

/// Predicate reward: +1 when ground-truth objects overlapping subject and
/// object are related by the predicted predicate, -1 otherwise, 0 for Null.
pub fn reward_predicate(
    scene: &Scene,
    s: &ObjectInstance,
    s_cat: CategoryId,
    s2: &ObjectInstance,
    s2_cat: CategoryId,
    g_p: Option<PredicateId>,
) -> i32 {
    let Some(p) = g_p else { return 0 };
    let subj = matching_gt_indices(scene, s, s_cat);
    let obj = matching_gt_indices(scene, s2, s2_cat);
    let hit = subj
        .iter()
        .any(|&i| obj.iter().any(|&j| scene.gt.pred_phrases.contains(&(i, p, j))));
    if hit {
        1
    } else {
        -1
    }
}

/// Category reward: +5 when the chosen instance overlaps a ground-truth
/// object not yet discovered this episode, -1 otherwise, 0 for Terminal.
pub fn reward_category(
    scene: &Scene,
    chosen: Option<(&ObjectInstance, CategoryId)>,
    discovered_gt: &BTreeSet<usize>,
) -> i32 {
    let Some((inst, cat)) = chosen else { return 0 };
    let hit = matching_gt_indices(scene, inst, cat)
        .into_iter()
        .any(|i| !discovered_gt.contains(&i));
    if hit {
        5
    } else {
        -1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bbox(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h).unwrap()
    }

    fn inst(id: InstanceId, b: BoundingBox, cat: u32, score: f64) -> ObjectInstance {
        ObjectInstance {
            id,
            bbox: b,
            category_scores: [(CategoryId(cat), score)].into_iter().collect(),
            objectness: 0.9,
        }
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = bbox(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        let far = bbox(10.0, 10.0, 2.0, 2.0);
        assert_eq!(iou(&a, &far), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // Unit overlap, union 4 + 4 - 1 = 7.
        let a = bbox(0.0, 0.0, 2.0, 2.0);
        let b = bbox(1.0, 1.0, 2.0, 2.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn neighbor_strict_boundary() {
        let s = inst(0, bbox(0.0, 0.0, 4.0, 4.0), 0, 0.9);
        let inside = inst(1, bbox(1.0, 1.0, 2.0, 2.0), 0, 0.9);
        assert!(is_neighbor(&s, &inside));
        // Offset exactly equals 0.5 * (w_t + w_s) = 3: excluded.
        let edge = inst(2, bbox(3.0, 0.0, 2.0, 2.0), 0, 0.9);
        assert!(!is_neighbor(&s, &edge));
        let coincident = inst(3, bbox(0.0, 0.0, 1.0, 1.0), 0, 0.9);
        assert!(is_neighbor(&s, &coincident));
        // Symmetry.
        assert_eq!(is_neighbor(&s, &inside), is_neighbor(&inside, &s));
    }

    fn scene_with_gt() -> Scene {
        // gt 0: category 0 ("girl") with attribute 0 ("young")
        // gt 1: category 1 ("horse"); phrase (0, pred 0, 1)
        Scene {
            id: "t".into(),
            instances: vec![
                inst(0, bbox(0.0, 0.0, 2.0, 2.0), 0, 0.9),
                inst(1, bbox(5.0, 0.0, 2.0, 2.0), 1, 0.8),
            ],
            gt: GroundTruth {
                objects: vec![
                    (CategoryId(0), bbox(0.0, 0.0, 2.0, 2.0)),
                    (CategoryId(1), bbox(5.0, 0.0, 2.0, 2.0)),
                ],
                attr_phrases: [(0, AttributeId(0))].into_iter().collect(),
                pred_phrases: [(0, PredicateId(0), 1)].into_iter().collect(),
            },
            image_feature_key: "t".into(),
        }
    }

    #[test]
    fn overlaps_requires_category_and_iou() {
        let s = scene_with_gt();
        let i0 = &s.instances[0];
        assert!(overlaps(i0, CategoryId(0), &s.gt.objects[0]));
        // Same box, wrong category.
        assert!(!overlaps(i0, CategoryId(1), &s.gt.objects[0]));
        // Same category, IoU 1/7 < 0.5.
        let shifted = inst(9, bbox(1.0, 1.0, 2.0, 2.0), 0, 0.9);
        assert!(!overlaps(&shifted, CategoryId(0), &s.gt.objects[0]));
    }

    #[test]
    fn attribute_reward() {
        let s = scene_with_gt();
        let i0 = &s.instances[0];
        assert_eq!(
            reward_attribute(&s, i0, CategoryId(0), Some(AttributeId(0))),
            1
        );
        assert_eq!(
            reward_attribute(&s, i0, CategoryId(0), Some(AttributeId(7))),
            -1
        );
        // No overlapping gt at all (wrong category).
        assert_eq!(
            reward_attribute(&s, i0, CategoryId(1), Some(AttributeId(0))),
            -1
        );
        assert_eq!(reward_attribute(&s, i0, CategoryId(0), None), 0);
    }

    #[test]
    fn predicate_reward() {
        let s = scene_with_gt();
        let (i0, i1) = (&s.instances[0], &s.instances[1]);
        assert_eq!(
            reward_predicate(&s, i0, CategoryId(0), i1, CategoryId(1), Some(PredicateId(0))),
            1
        );
        // Object instance too far from its gt box.
        let off = inst(9, bbox(8.0, 8.0, 2.0, 2.0), 1, 0.9);
        assert_eq!(
            reward_predicate(&s, i0, CategoryId(0), &off, CategoryId(1), Some(PredicateId(0))),
            -1
        );
        assert_eq!(
            reward_predicate(&s, i0, CategoryId(0), i1, CategoryId(1), None),
            0
        );
    }

    #[test]
    fn category_reward_requires_novelty() {
        let s = scene_with_gt();
        let i1 = &s.instances[1];
        let none: BTreeSet<usize> = BTreeSet::new();
        assert_eq!(reward_category(&s, Some((i1, CategoryId(1))), &none), 5);
        let seen: BTreeSet<usize> = [1].into_iter().collect();
        assert_eq!(reward_category(&s, Some((i1, CategoryId(1))), &seen), -1);
        assert_eq!(reward_category(&s, None, &none), 0);
    }

    #[test]
    fn cap_instances_keeps_highest_objectness() {
        let mut s = scene_with_gt();
        let mut extra = inst(2, bbox(0.0, 5.0, 1.0, 1.0), 0, 0.9);
        extra.objectness = 0.95;
        s.instances.push(extra);
        s.cap_instances(2);
        let ids: Vec<_> = s.instances.iter().map(|i| i.id).collect();
        assert_eq!(ids, vec![0, 2]);
    }

    #[test]
    fn scene_validation_catches_duplicates() {
        let mut s = scene_with_gt();
        s.instances.push(s.instances[0].clone());
        assert!(s.validate().is_err());
    }
}
