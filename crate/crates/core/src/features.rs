//! Feature providers and state-vector assembly. The state is the fixed-order
//! concatenation [image, subject, object, rel1, rel2, attr1, attr2] where the
//! four trailing blocks are embeddings of the most recent relationship and
//! attribute phrases.
//!
//! Providers stand in for detector / language-model features: the synthetic
//! provider derives vectors from stable hashes, the file-backed provider
//! reads precomputed vectors keyed by scene/instance id.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{ObjectInstance, Scene};
use crate::error::{Result, VrlError};
use crate::rng::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub d_image: usize,
    pub d_instance: usize,
    pub d_phrase: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            d_image: 64,
            d_instance: 64,
            d_phrase: 32,
        }
    }
}

impl FeatureConfig {
    /// Full-scale dimensions: 4096-dim image/instance features and 2400-dim
    /// phrase embeddings (state dimension 21,888).
    pub fn full_scale() -> FeatureConfig {
        FeatureConfig {
            d_image: 4096,
            d_instance: 4096,
            d_phrase: 2400,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.d_image + 2 * self.d_instance + 4 * self.d_phrase
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhraseKind {
    Relationship,
    Attribute,
}

/// The last two relationship and last two attribute phrases, newest first.
/// Empty slots embed as zero vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoryBuffer {
    pub rel_slots: [Option<String>; 2],
    pub attr_slots: [Option<String>; 2],
}

impl HistoryBuffer {
    pub fn push(&mut self, kind: PhraseKind, phrase: String) {
        let slots = match kind {
            PhraseKind::Relationship => &mut self.rel_slots,
            PhraseKind::Attribute => &mut self.attr_slots,
        };
        slots[1] = slots[0].take();
        slots[0] = Some(phrase);
    }
}

/// Deterministic unit-norm embedding of a phrase. The same (phrase, seed)
/// always maps to the same vector; the empty phrase maps to zero.
pub fn phrase_embedding(phrase: &str, d_phrase: usize, seed: u64) -> Vec<f64> {
    assert!(d_phrase >= 1, "d_phrase must be >= 1");
    if phrase.is_empty() {
        return vec![0.0; d_phrase];
    }
    let h = fnv1a64(phrase.as_bytes()) ^ seed.wrapping_mul(0x2545_f491_4f6c_dd1d);
    hashed_unit_vector(h, d_phrase)
}

/// Standard-normal draws from a hash, L2-normalized.
fn hashed_unit_vector(hash: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(hash);
    let mut v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u clamped away from 0.
    let u: f64 = rng.random::<f64>().max(1e-12);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

fn option_embedding(slot: &Option<String>, d: usize, seed: u64) -> Vec<f64> {
    match slot {
        Some(p) => phrase_embedding(p, d, seed),
        None => vec![0.0; d],
    }
}

/// Concatenate the state vector in fixed order. Errors on any component
/// dimension mismatch.
pub fn assemble_state(
    image_feat: &[f64],
    subj_feat: &[f64],
    obj_feat: &[f64],
    hist: &HistoryBuffer,
    cfg: &FeatureConfig,
    phrase_seed: u64,
) -> Result<Vec<f64>> {
    if image_feat.len() != cfg.d_image
        || subj_feat.len() != cfg.d_instance
        || obj_feat.len() != cfg.d_instance
    {
        return Err(VrlError::Contract(format!(
            "state component dims ({}, {}, {}) do not match config ({}, {}, {})",
            image_feat.len(),
            subj_feat.len(),
            obj_feat.len(),
            cfg.d_image,
            cfg.d_instance,
            cfg.d_instance
        )));
    }
    let mut state = Vec::with_capacity(cfg.state_dim());
    state.extend_from_slice(image_feat);
    state.extend_from_slice(subj_feat);
    state.extend_from_slice(obj_feat);
    for slot in &hist.rel_slots {
        state.extend(option_embedding(slot, cfg.d_phrase, phrase_seed));
    }
    for slot in &hist.attr_slots {
        state.extend(option_embedding(slot, cfg.d_phrase, phrase_seed));
    }
    Ok(state)
}

pub trait FeatureProvider: Send + Sync {
    fn image_feature(&self, scene: &Scene) -> Result<Vec<f64>>;
    fn instance_feature(&self, scene: &Scene, inst: &ObjectInstance) -> Result<Vec<f64>>;
}

/// Hash-derived features standing in for detector appearance vectors.
///
/// Instance features blend a stable per-category "appearance" direction,
/// weighted by the detection scores, with a small identity-keyed jitter —
/// instances that look like the same category produce similar vectors, as
/// real detector features would, while no two instances are identical.
pub struct SyntheticProvider {
    pub cfg: FeatureConfig,
    pub seed: u64,
}

/// Weight of the per-instance jitter relative to the appearance blend.
const IDENTITY_JITTER: f64 = 0.15;

impl SyntheticProvider {
    pub fn new(cfg: FeatureConfig, seed: u64) -> SyntheticProvider {
        SyntheticProvider { cfg, seed }
    }

    fn appearance_direction(&self, category_index: u32, dim: usize) -> Vec<f64> {
        let h = fnv1a64(format!("appearance:{category_index}").as_bytes()) ^ self.seed;
        hashed_unit_vector(h, dim)
    }
}

impl FeatureProvider for SyntheticProvider {
    /// Global scene descriptor: the score-and-objectness-weighted blend of
    /// every instance's category appearance directions, the synthetic
    /// analogue of a pooled whole-image feature. A small scene-keyed jitter
    /// keeps distinct scenes distinguishable.
    fn image_feature(&self, scene: &Scene) -> Result<Vec<f64>> {
        let dim = self.cfg.d_image;
        let mut v = vec![0.0; dim];
        for inst in &scene.instances {
            let top = inst
                .category_scores
                .iter()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(a.0)));
            if let Some((&c, &s)) = top {
                let e = self.appearance_direction(c.0, dim);
                for (out, x) in v.iter_mut().zip(&e) {
                    *out += s * inst.objectness * x;
                }
            }
        }
        let h = fnv1a64(scene.image_feature_key.as_bytes()) ^ self.seed;
        let jitter = hashed_unit_vector(h, dim);
        for (out, x) in v.iter_mut().zip(&jitter) {
            *out += IDENTITY_JITTER * x;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }

    fn instance_feature(&self, scene: &Scene, inst: &ObjectInstance) -> Result<Vec<f64>> {
        let dim = self.cfg.d_instance;
        let mut v = vec![0.0; dim];
        for (&c, &s) in &inst.category_scores {
            let e = self.appearance_direction(c.0, dim);
            for (out, x) in v.iter_mut().zip(&e) {
                *out += s * x;
            }
        }
        let mut key = Vec::new();
        key.extend_from_slice(scene.id.as_bytes());
        key.extend_from_slice(&inst.id.to_le_bytes());
        for x in [inst.bbox.cx, inst.bbox.cy, inst.bbox.w, inst.bbox.h] {
            key.extend_from_slice(&x.to_le_bytes());
        }
        let jitter = hashed_unit_vector(fnv1a64(&key) ^ self.seed, dim);
        for (out, x) in v.iter_mut().zip(&jitter) {
            *out += IDENTITY_JITTER * x;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        Ok(v)
    }
}

const FEATURE_MAGIC: &[u8; 4] = b"VRLF";
const FEATURE_VERSION: u32 = 1;

/// Write a feature file: magic, version, dim, count, then
/// (key length, key bytes, dim float32 little-endian values) per record.
pub fn write_feature_file(
    path: impl AsRef<Path>,
    dim: usize,
    records: &[(String, Vec<f64>)],
) -> Result<()> {
    let path = path.as_ref();
    let err = |e| VrlError::io(path.display().to_string(), e);
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(err)?);
    w.write_all(FEATURE_MAGIC).map_err(err)?;
    w.write_u32::<LittleEndian>(FEATURE_VERSION).map_err(err)?;
    w.write_u32::<LittleEndian>(dim as u32).map_err(err)?;
    w.write_u32::<LittleEndian>(records.len() as u32).map_err(err)?;
    for (key, vec) in records {
        if vec.len() != dim {
            return Err(VrlError::Contract(format!(
                "feature `{key}` has dim {}, expected {dim}",
                vec.len()
            )));
        }
        w.write_u32::<LittleEndian>(key.len() as u32).map_err(err)?;
        w.write_all(key.as_bytes()).map_err(err)?;
        for &x in vec {
            w.write_f32::<LittleEndian>(x as f32).map_err(err)?;
        }
    }
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<(usize, HashMap<String, Vec<f64>>)> {
    let path = path.as_ref();
    let err = |e| VrlError::io(path.display().to_string(), e);
    let mut r = BufReader::new(std::fs::File::open(path).map_err(err)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(err)?;
    if &magic != FEATURE_MAGIC {
        return Err(VrlError::Config(format!(
            "{}: not a feature file",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>().map_err(err)?;
    if version != FEATURE_VERSION {
        return Err(VrlError::Config(format!(
            "{}: unsupported feature file version {version}",
            path.display()
        )));
    }
    let dim = r.read_u32::<LittleEndian>().map_err(err)? as usize;
    let count = r.read_u32::<LittleEndian>().map_err(err)? as usize;
    let mut map = HashMap::with_capacity(count);
    for _ in 0..count {
        let klen = r.read_u32::<LittleEndian>().map_err(err)? as usize;
        let mut kbuf = vec![0u8; klen];
        r.read_exact(&mut kbuf).map_err(err)?;
        let key = String::from_utf8(kbuf)
            .map_err(|e| VrlError::Config(format!("{}: bad key: {e}", path.display())))?;
        let mut vec = Vec::with_capacity(dim);
        for _ in 0..dim {
            vec.push(r.read_f32::<LittleEndian>().map_err(err)? as f64);
        }
        map.insert(key, vec);
    }
    Ok((dim, map))
}

/// File-backed provider. Image features are looked up by a scene's
/// `image_feature_key`; instance features by `"<scene id>/<instance id>"`.
pub struct FileProvider {
    images: HashMap<String, Vec<f64>>,
    instances: HashMap<String, Vec<f64>>,
    pub d_image: usize,
    pub d_instance: usize,
}

impl FileProvider {
    pub fn load(image_path: impl AsRef<Path>, instance_path: impl AsRef<Path>) -> Result<FileProvider> {
        let (d_image, images) = read_feature_file(image_path)?;
        let (d_instance, instances) = read_feature_file(instance_path)?;
        Ok(FileProvider {
            images,
            instances,
            d_image,
            d_instance,
        })
    }

    pub fn instance_key(scene: &Scene, inst: &ObjectInstance) -> String {
        format!("{}/{}", scene.id, inst.id)
    }
}

impl FeatureProvider for FileProvider {
    fn image_feature(&self, scene: &Scene) -> Result<Vec<f64>> {
        self.images
            .get(&scene.image_feature_key)
            .cloned()
            .ok_or_else(|| {
                VrlError::Config(format!(
                    "no image feature for key `{}`",
                    scene.image_feature_key
                ))
            })
    }

    fn instance_feature(&self, scene: &Scene, inst: &ObjectInstance) -> Result<Vec<f64>> {
        let key = Self::instance_key(scene, inst);
        self.instances
            .get(&key)
            .cloned()
            .ok_or_else(|| VrlError::Config(format!("no instance feature for key `{key}`")))
    }
}
