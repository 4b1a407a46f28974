//! Synthetic scene generator: a desk-scale substitute for detector outputs on
//! real images. Ground-truth objects are sampled on a canvas, phrases are
//! sampled only from graph edges, and detected instances are the ground-truth
//! boxes under configurable jitter with peaked category scores.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::action_graph::{CategoryId, SemanticGraph};
use crate::environment::{boxes_neighbor, BoundingBox, GroundTruth, ObjectInstance, Scene};
use crate::error::{Result, VrlError};
use crate::rng::substream_indexed;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Ground-truth objects per scene.
    pub n_objects: usize,
    /// Box jitter fraction applied to detected instances (0 = exact boxes).
    pub noise: f64,
    /// Square canvas side length in scene units.
    pub canvas: f64,
    /// Max attribute phrases sampled per ground-truth object.
    pub attrs_per_object: usize,
    /// Chance that a neighboring ground-truth pair with graph support gets a
    /// predicate phrase.
    pub predicate_density: f64,
    /// Chance that an instance gets a confusable runner-up category within
    /// the 0.1 ambiguity margin.
    pub confusion_prob: f64,
    /// Given a confusable runner-up, chance it outranks the true category.
    pub confusion_flip_prob: f64,
    /// Box extent range as a fraction of the canvas. Larger boxes make more
    /// object pairs neighbors.
    pub box_min: f64,
    pub box_max: f64,
    /// When > 0, box centers are confined to the central square of this
    /// half-width (canvas fraction): objects cluster near the middle, staying
    /// mutual neighbors without their boxes collapsing onto each other.
    pub center_spread: f64,
    /// When > 0, each scene draws a "theme" of this many distinct categories
    /// and all objects come from the theme, mimicking images dominated by a
    /// few repeated object classes. 0 draws every object independently.
    pub theme_size: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_objects: 6,
            noise: 0.1,
            canvas: 100.0,
            attrs_per_object: 2,
            predicate_density: 0.8,
            confusion_prob: 0.3,
            confusion_flip_prob: 0.3,
            box_min: 0.12,
            box_max: 0.30,
            center_spread: 0.0,
            theme_size: 0,
        }
    }
}

/// Zipf-weighted draw over `0..n`: index i has weight 1/(i+1).
fn zipf_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    let total: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let mut x = rng.random_range(0.0..total);
    for i in 0..n {
        x -= 1.0 / (i + 1) as f64;
        if x <= 0.0 {
            return i;
        }
    }
    n - 1
}

fn zipf_pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[zipf_index(rng, items.len())]
}

/// Steeper draw: index i has weight 1/(i+1)^2, so the first item dominates.
fn zipf2_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    let total: f64 = (1..=n).map(|i| 1.0 / (i * i) as f64).sum();
    let mut x = rng.random_range(0.0..total);
    for i in 0..n {
        x -= 1.0 / ((i + 1) * (i + 1)) as f64;
        if x <= 0.0 {
            return i;
        }
    }
    n - 1
}

fn zipf2_pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[zipf2_index(rng, items.len())]
}

/// The confusable partner of category index i is the category of opposite
/// frequency rank, so a common category is confused with a rare one.
fn confusion_partner(i: usize, n: usize) -> usize {
    let p = n - 1 - i;
    if p == i {
        (i + 1) % n
    } else {
        p
    }
}

pub fn generate_synthetic_scene(
    g: &SemanticGraph,
    seed: u64,
    params: &SynthParams,
) -> Result<Scene> {
    if g.is_empty() {
        return Err(VrlError::Generation("graph has no category nodes".into()));
    }
    if params.n_objects < 1 {
        return Err(VrlError::Generation("n_objects must be >= 1".into()));
    }
    if !(params.box_min > 0.0 && params.box_min < params.box_max && params.box_max <= 1.0) {
        return Err(VrlError::Generation(
            "box extent range must satisfy 0 < box_min < box_max <= 1".into(),
        ));
    }
    if g.n_pred_edges() == 0 {
        return Err(VrlError::Generation(
            "graph has no predicate edges; scenes would carry no relationships".into(),
        ));
    }
    let mut rng = substream_indexed(seed, "scene-gen", 0);
    let n_cats = g.n_categories();

    // Scene theme: the distinct categories objects are drawn from.
    let theme: Vec<usize> = if params.theme_size > 0 {
        let k = params.theme_size.min(n_cats);
        let mut picked = Vec::with_capacity(k);
        while picked.len() < k {
            let c = zipf_index(&mut rng, n_cats);
            if !picked.contains(&c) {
                picked.push(c);
            }
        }
        picked
    } else {
        Vec::new()
    };

    // Ground-truth objects: Zipf-skewed categories, boxes inside the canvas.
    let mut gt = GroundTruth::default();
    for _ in 0..params.n_objects {
        let cat = if theme.is_empty() {
            CategoryId(zipf_index(&mut rng, n_cats) as u32)
        } else {
            // Steep skew within the theme: weight 1/(i+1)^2, so the primary
            // theme category clearly dominates the scene.
            let total: f64 = (1..=theme.len()).map(|i| 1.0 / (i * i) as f64).sum();
            let mut x = rng.random_range(0.0..total);
            let mut pick = theme.len() - 1;
            for i in 0..theme.len() {
                x -= 1.0 / ((i + 1) * (i + 1)) as f64;
                if x <= 0.0 {
                    pick = i;
                    break;
                }
            }
            CategoryId(theme[pick] as u32)
        };
        let w = rng.random_range(params.box_min..params.box_max) * params.canvas;
        let h = rng.random_range(params.box_min..params.box_max) * params.canvas;
        let (cx, cy) = if params.center_spread > 0.0 {
            let s = params.center_spread * params.canvas;
            let mid = params.canvas / 2.0;
            (
                rng.random_range(mid - s..mid + s),
                rng.random_range(mid - s..mid + s),
            )
        } else {
            (
                rng.random_range(w / 2.0..params.canvas - w / 2.0),
                rng.random_range(h / 2.0..params.canvas - h / 2.0),
            )
        };
        gt.objects.push((cat, BoundingBox::new(cx, cy, w, h)?));
    }

    // Attribute phrases from E_A edges of each object's category.
    for (i, &(cat, _)) in gt.objects.iter().enumerate() {
        let attrs: Vec<_> = g.attributes_of(cat)?.iter().copied().collect();
        if attrs.is_empty() {
            continue;
        }
        for _ in 0..params.attrs_per_object {
            if rng.random::<f64>() < 0.7 {
                gt.attr_phrases.insert((i, zipf_pick(&mut rng, &attrs)));
            }
        }
    }

    // Predicate phrases from E_P edges between neighboring objects.
    for i in 0..gt.objects.len() {
        for j in 0..gt.objects.len() {
            if i == j || !boxes_neighbor(&gt.objects[i].1, &gt.objects[j].1) {
                continue;
            }
            let preds: Vec<_> = g
                .predicates_between(gt.objects[i].0, gt.objects[j].0)?
                .into_iter()
                .collect();
            if !preds.is_empty() && rng.random::<f64>() < params.predicate_density {
                gt.pred_phrases.insert((i, zipf2_pick(&mut rng, &preds), j));
            }
        }
    }

    // Detected instances: one per ground-truth object, jittered.
    let mut instances = Vec::new();
    for (i, &(cat, b)) in gt.objects.iter().enumerate() {
        let jitter = |rng: &mut ChaCha8Rng, extent: f64, noise: f64| {
            if noise == 0.0 {
                0.0
            } else {
                noise * extent * rng.random_range(-0.3..0.3)
            }
        };
        let dx = jitter(&mut rng, b.w, params.noise);
        let dy = jitter(&mut rng, b.h, params.noise);
        let sw = (b.w * (1.0 + jitter(&mut rng, 0.5, params.noise))).max(0.01);
        let sh = (b.h * (1.0 + jitter(&mut rng, 0.5, params.noise))).max(0.01);
        let bbox = BoundingBox::new(b.cx + dx, b.cy + dy, sw, sh)?;

        let true_score = rng.random_range(0.60..0.95);
        let mut scores: BTreeMap<CategoryId, f64> = BTreeMap::new();
        scores.insert(cat, true_score);
        if n_cats > 1 && rng.random::<f64>() < params.confusion_prob {
            let partner = CategoryId(confusion_partner(cat.index(), n_cats) as u32);
            let score = if rng.random::<f64>() < params.confusion_flip_prob {
                (true_score + rng.random_range(0.005..0.05)).min(1.0)
            } else {
                (true_score - rng.random_range(0.01..0.09)).max(0.0)
            };
            scores.insert(partner, score);
        }
        // A couple of clearly-outscored background categories.
        for _ in 0..2 {
            let c = CategoryId(rng.random_range(0..n_cats as u32));
            let s = rng.random_range(0.0..(true_score - 0.15).max(0.01));
            scores.entry(c).or_insert(s);
        }
        instances.push(ObjectInstance {
            id: i as u32,
            bbox,
            category_scores: scores,
            objectness: rng.random_range(0.5..1.0),
        });
    }

    let id = format!("synth-{seed:016x}");
    let scene = Scene {
        image_feature_key: id.clone(),
        id,
        instances,
        gt,
    };
    scene.validate()?;
    Ok(scene)
}

/// Generate `count` scenes, each from its own sub-stream of `seed`.
pub fn generate_scene_set(
    g: &SemanticGraph,
    seed: u64,
    count: usize,
    params: &SynthParams,
) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| {
            let mut scene =
                generate_synthetic_scene(g, seed.wrapping_add(i as u64).wrapping_mul(0x9e3779b1), params)?;
            scene.id = format!("synth-{seed}-{i}");
            scene.image_feature_key = scene.id.clone();
            Ok(scene)
        })
        .collect()
}
