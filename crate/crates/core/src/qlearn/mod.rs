//! Three-headed Q-network over a shared ReLU trunk, the semi-gradient TD
//! update with a frozen target copy, and checkpointing.
//!
//! Head layout: attribute head of size |A|+1, predicate head |P|+1, category
//! head |C|+1. The extra slot is the reserved Null (attributes, predicates)
//! or Terminal (categories) action.

mod replay;

pub use replay::{ReplayMemory, Transition};

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::OptimizerKind;
use crate::error::{Result, VrlError};
use crate::rng::substream;

pub const HEAD_ATTR: usize = 0;
pub const HEAD_PRED: usize = 1;
pub const HEAD_CAT: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct QConfig {
    pub state_dim: usize,
    /// Trunk hidden-layer widths; may be empty for purely linear heads.
    pub hidden: Vec<usize>,
    pub n_attrs: usize,
    pub n_preds: usize,
    pub n_cats: usize,
}

impl QConfig {
    pub fn head_sizes(&self) -> [usize; 3] {
        [self.n_attrs + 1, self.n_preds + 1, self.n_cats + 1]
    }
}

/// Row-major dense layer: `rows` outputs over `cols` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Dense {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        Dense {
            rows,
            cols,
            w: (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            b: vec![0.0; rows],
        }
    }

    fn zeros(rows: usize, cols: usize) -> Dense {
        Dense {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.cols);
        out.clear();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    pub cfg: QConfig,
    trunk: Vec<Dense>,
    heads: [Dense; 3],
}

/// Trunk activations cached for backprop: `acts[0]` is the input state,
/// `acts[i]` the post-ReLU output of trunk layer i-1.
pub struct ForwardCache {
    acts: Vec<Vec<f64>>,
    pub head_out: [Vec<f64>; 3],
}

impl QModel {
    pub fn new(cfg: QConfig, seed: u64) -> QModel {
        let mut rng = substream(seed, "init");
        let mut trunk = Vec::new();
        let mut in_dim = cfg.state_dim;
        for &h in &cfg.hidden {
            trunk.push(Dense::init(h, in_dim, &mut rng));
            in_dim = h;
        }
        let [na, np, nc] = cfg.head_sizes();
        let heads = [
            Dense::init(na, in_dim, &mut rng),
            Dense::init(np, in_dim, &mut rng),
            Dense::init(nc, in_dim, &mut rng),
        ];
        QModel { cfg, trunk, heads }
    }

    /// All-zero parameters; useful for hand-checked updates.
    pub fn zeros(cfg: QConfig) -> QModel {
        let mut trunk = Vec::new();
        let mut in_dim = cfg.state_dim;
        for &h in &cfg.hidden {
            trunk.push(Dense::zeros(h, in_dim));
            in_dim = h;
        }
        let [na, np, nc] = cfg.head_sizes();
        let heads = [
            Dense::zeros(na, in_dim),
            Dense::zeros(np, in_dim),
            Dense::zeros(nc, in_dim),
        ];
        QModel { cfg, trunk, heads }
    }

    pub fn forward_cached(&self, f: &[f64]) -> Result<ForwardCache> {
        if f.len() != self.cfg.state_dim {
            return Err(VrlError::Contract(format!(
                "state dim {} does not match model dim {}",
                f.len(),
                self.cfg.state_dim
            )));
        }
        let mut acts: Vec<Vec<f64>> = vec![f.to_vec()];
        let mut buf = Vec::new();
        for layer in &self.trunk {
            layer.forward(acts.last().unwrap(), &mut buf);
            for v in &mut buf {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            acts.push(std::mem::take(&mut buf));
        }
        let top = acts.last().unwrap();
        let mut head_out: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (h, out) in self.heads.iter().zip(head_out.iter_mut()) {
            h.forward(top, out);
        }
        Ok(ForwardCache { acts, head_out })
    }

    /// The three Q-value vectors over the full head ranges.
    pub fn forward(&self, f: &[f64]) -> Result<[Vec<f64>; 3]> {
        Ok(self.forward_cached(f)?.head_out)
    }

    /// Gradient of a scalar loss wrt all parameters, given per-head
    /// (acted slot, dLoss/dQ) pairs; accumulated into `grads`.
    fn backward_into(&self, cache: &ForwardCache, head_grads: [(usize, f64); 3], grads: &mut Grads) {
        let top = cache.acts.last().unwrap();
        let mut d_top = vec![0.0; top.len()];
        for h in 0..3 {
            let (slot, g) = head_grads[h];
            if g == 0.0 {
                continue;
            }
            let head = &self.heads[h];
            let gw = &mut grads.heads[h];
            let row = slot * head.cols;
            for c in 0..head.cols {
                gw.w[row + c] += g * top[c];
            }
            gw.b[slot] += g;
            for c in 0..head.cols {
                d_top[c] += g * head.w[row + c];
            }
        }
        // Back through the ReLU trunk.
        let mut d_out = d_top;
        for l in (0..self.trunk.len()).rev() {
            let layer = &self.trunk[l];
            let a_out = &cache.acts[l + 1];
            let a_in = &cache.acts[l];
            let gl = &mut grads.trunk[l];
            let mut d_in = vec![0.0; layer.cols];
            for r in 0..layer.rows {
                // ReLU derivative from the stored post-activation.
                let dz = if a_out[r] > 0.0 { d_out[r] } else { 0.0 };
                if dz == 0.0 {
                    continue;
                }
                gl.b[r] += dz;
                let row = r * layer.cols;
                for c in 0..layer.cols {
                    gl.w[row + c] += dz * a_in[c];
                    d_in[c] += dz * layer.w[row + c];
                }
            }
            d_out = d_in;
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers_iter().map(|d| d.w.len() + d.b.len()).sum()
    }

    fn layers_iter(&self) -> impl Iterator<Item = &Dense> {
        self.trunk.iter().chain(self.heads.iter())
    }

    pub fn get_param(&self, mut i: usize) -> f64 {
        for d in self.layers_iter() {
            if i < d.w.len() {
                return d.w[i];
            }
            i -= d.w.len();
            if i < d.b.len() {
                return d.b[i];
            }
            i -= d.b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut i: usize, v: f64) {
        for d in self.trunk.iter_mut().chain(self.heads.iter_mut()) {
            if i < d.w.len() {
                d.w[i] = v;
                return;
            }
            i -= d.w.len();
            if i < d.b.len() {
                d.b[i] = v;
                return;
            }
            i -= d.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Output weight rows of head `h`, for update-locality checks.
    pub fn head_params(&self, h: usize) -> (&[f64], &[f64]) {
        (&self.heads[h].w, &self.heads[h].b)
    }
}

/// Per-parameter gradient (or squared-average) storage, shaped like a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    trunk: Vec<Dense>,
    heads: [Dense; 3],
}

impl Grads {
    pub fn zeros_like(model: &QModel) -> Grads {
        Grads {
            trunk: model
                .trunk
                .iter()
                .map(|d| Dense::zeros(d.rows, d.cols))
                .collect(),
            heads: [
                Dense::zeros(model.heads[0].rows, model.heads[0].cols),
                Dense::zeros(model.heads[1].rows, model.heads[1].cols),
                Dense::zeros(model.heads[2].rows, model.heads[2].cols),
            ],
        }
    }

    fn scale(&mut self, s: f64) {
        for d in self.trunk.iter_mut().chain(self.heads.iter_mut()) {
            for v in d.w.iter_mut().chain(d.b.iter_mut()) {
                *v *= s;
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for d in self.trunk.iter().chain(self.heads.iter()) {
            out.extend_from_slice(&d.w);
            out.extend_from_slice(&d.b);
        }
        out
    }
}

/// One optimizer over all parameters (trunk and all three heads).
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub decay: f64,
    pub eps: f64,
    ms: Option<Grads>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, decay: f64, eps: f64) -> Optimizer {
        Optimizer {
            kind,
            decay,
            eps,
            ms: None,
        }
    }

    pub fn sgd() -> Optimizer {
        Optimizer::new(OptimizerKind::Sgd, 0.0, 0.0)
    }

    pub fn rmsprop() -> Optimizer {
        Optimizer::new(OptimizerKind::RmsProp, 0.95, 1e-6)
    }

    pub fn step(&mut self, model: &mut QModel, grads: &Grads, lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => {
                apply(model, grads, |_, g| lr * g);
            }
            OptimizerKind::RmsProp => {
                let ms = self
                    .ms
                    .get_or_insert_with(|| Grads::zeros_like(model));
                let (decay, eps) = (self.decay, self.eps);
                update_ms(ms, grads, decay);
                apply_with_ms(model, grads, ms, |g, m| lr * g / (m.sqrt() + eps));
            }
        }
    }
}

fn apply(model: &mut QModel, grads: &Grads, delta: impl Fn(f64, f64) -> f64) {
    for (d, g) in model
        .trunk
        .iter_mut()
        .chain(model.heads.iter_mut())
        .zip(grads.trunk.iter().chain(grads.heads.iter()))
    {
        for (p, &gv) in d.w.iter_mut().zip(&g.w) {
            *p -= delta(*p, gv);
        }
        for (p, &gv) in d.b.iter_mut().zip(&g.b) {
            *p -= delta(*p, gv);
        }
    }
}

fn update_ms(ms: &mut Grads, grads: &Grads, decay: f64) {
    for (m, g) in ms
        .trunk
        .iter_mut()
        .chain(ms.heads.iter_mut())
        .zip(grads.trunk.iter().chain(grads.heads.iter()))
    {
        for (mv, &gv) in m.w.iter_mut().zip(&g.w) {
            *mv = decay * *mv + (1.0 - decay) * gv * gv;
        }
        for (mv, &gv) in m.b.iter_mut().zip(&g.b) {
            *mv = decay * *mv + (1.0 - decay) * gv * gv;
        }
    }
}

fn apply_with_ms(model: &mut QModel, grads: &Grads, ms: &Grads, delta: impl Fn(f64, f64) -> f64) {
    for ((d, g), m) in model
        .trunk
        .iter_mut()
        .chain(model.heads.iter_mut())
        .zip(grads.trunk.iter().chain(grads.heads.iter()))
        .zip(ms.trunk.iter().chain(ms.heads.iter()))
    {
        for ((p, &gv), &mv) in d.w.iter_mut().zip(&g.w).zip(&m.w) {
            *p -= delta(gv, mv);
        }
        for ((p, &gv), &mv) in d.b.iter_mut().zip(&g.b).zip(&m.b) {
            *p -= delta(gv, mv);
        }
    }
}

/// ε-greedy selection per head, restricted to the given head-index sets.
/// Greedy ties break toward the lowest index.
pub fn select_actions(
    q: &[Vec<f64>; 3],
    sets: &[Vec<usize>; 3],
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> [usize; 3] {
    let mut out = [0usize; 3];
    for h in 0..3 {
        let set = &sets[h];
        debug_assert!(!set.is_empty(), "action set for head {h} is empty");
        out[h] = if rng.random::<f64>() < eps {
            set[rng.random_range(0..set.len())]
        } else {
            masked_argmax(&q[h], set)
        };
    }
    out
}

/// Argmax of `q` restricted to `set`; ties break toward the lowest index.
pub fn masked_argmax(q: &[f64], set: &[usize]) -> usize {
    let mut best = set[0];
    let mut best_q = q[set[0]];
    for &i in &set[1..] {
        if q[i] > best_q {
            best = i;
            best_q = q[i];
        }
    }
    best
}

/// Per-sample TD errors for the three heads.
fn td_deltas(
    online_cache: &ForwardCache,
    target: &QModel,
    t: &Transition,
    gamma: f64,
) -> Result<[f64; 3]> {
    let sizes = target.cfg.head_sizes();
    for h in 0..3 {
        if t.actions[h] >= sizes[h] {
            return Err(VrlError::Contract(format!(
                "action index {} out of range for head {h} (size {})",
                t.actions[h], sizes[h]
            )));
        }
    }
    let next_q = if t.terminal {
        None
    } else {
        Some(target.forward(&t.next_state)?)
    };
    let mut deltas = [0.0; 3];
    for h in 0..3 {
        let q_sa = online_cache.head_out[h][t.actions[h]];
        let bootstrap = match &next_q {
            Some(nq) if !t.next_sets[h].is_empty() => {
                gamma * nq[h][masked_argmax(&nq[h], &t.next_sets[h])]
            }
            _ => 0.0,
        };
        deltas[h] = t.rewards[h] + bootstrap - q_sa;
    }
    Ok(deltas)
}

/// Mean semi-gradient of the summed per-head losses ½δ² over a batch.
pub fn grad_batch(
    online: &QModel,
    target: &QModel,
    batch: &[Transition],
    gamma: f64,
) -> Result<Grads> {
    if batch.is_empty() {
        return Err(VrlError::Contract("q_update requires a non-empty batch".into()));
    }
    let mut grads = Grads::zeros_like(online);
    for t in batch {
        let cache = online.forward_cached(&t.state)?;
        let deltas = td_deltas(&cache, target, t, gamma)?;
        // dL/dQ(f, g) = -δ for each head's acted slot.
        online.backward_into(
            &cache,
            [
                (t.actions[0], -deltas[0]),
                (t.actions[1], -deltas[1]),
                (t.actions[2], -deltas[2]),
            ],
            &mut grads,
        );
    }
    grads.scale(1.0 / batch.len() as f64);
    Ok(grads)
}

/// Mean summed TD loss of a batch, target network held fixed. The analytic
/// semi-gradient of this quantity is what `grad_batch` computes.
pub fn td_loss(online: &QModel, target: &QModel, batch: &[Transition], gamma: f64) -> Result<f64> {
    let mut total = 0.0;
    for t in batch {
        let cache = online.forward_cached(&t.state)?;
        // Freeze the targets: recompute q_sa from the (possibly perturbed)
        // online net but keep the bootstrap from the target net.
        let deltas = td_deltas(&cache, target, t, gamma)?;
        for d in deltas {
            total += 0.5 * d * d;
        }
    }
    Ok(total / batch.len().max(1) as f64)
}

/// One Q-learning update on a mini-batch.
pub fn q_update(
    online: &mut QModel,
    target: &QModel,
    batch: &[Transition],
    gamma: f64,
    lr: f64,
    opt: &mut Optimizer,
) -> Result<()> {
    let grads = grad_batch(online, target, batch, gamma)?;
    opt.step(online, &grads, lr);
    Ok(())
}

/// Copy the online parameters into the target when `step` is a multiple of
/// `tau`; otherwise leave the target untouched.
pub fn sync_target(online: &QModel, target: &mut QModel, step: u64, tau: u64) {
    if step % tau == 0 {
        *target = online.clone();
    }
}

const CKPT_MAGIC: &[u8; 4] = b"VRLQ";
const CKPT_VERSION: u32 = 1;

/// Versioned binary checkpoint: config header, parameters as little-endian
/// float32, optimizer state and the global step counter.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &QModel,
    opt: &Optimizer,
    step: u64,
) -> Result<()> {
    let path = path.as_ref();
    let err = |e| VrlError::io(path.display().to_string(), e);
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(err)?);
    w.write_all(CKPT_MAGIC).map_err(err)?;
    w.write_u32::<LittleEndian>(CKPT_VERSION).map_err(err)?;
    w.write_u32::<LittleEndian>(model.cfg.state_dim as u32).map_err(err)?;
    w.write_u32::<LittleEndian>(model.cfg.hidden.len() as u32).map_err(err)?;
    for &h in &model.cfg.hidden {
        w.write_u32::<LittleEndian>(h as u32).map_err(err)?;
    }
    for n in [model.cfg.n_attrs, model.cfg.n_preds, model.cfg.n_cats] {
        w.write_u32::<LittleEndian>(n as u32).map_err(err)?;
    }
    w.write_u8(match opt.kind {
        OptimizerKind::Sgd => 0,
        OptimizerKind::RmsProp => 1,
    })
    .map_err(err)?;
    w.write_f64::<LittleEndian>(opt.decay).map_err(err)?;
    w.write_f64::<LittleEndian>(opt.eps).map_err(err)?;
    let write_dense = |w: &mut BufWriter<std::fs::File>, d: &Dense| -> Result<()> {
        for &v in d.w.iter().chain(d.b.iter()) {
            w.write_f32::<LittleEndian>(v as f32)
                .map_err(|e| VrlError::io(path.display().to_string(), e))?;
        }
        Ok(())
    };
    for d in model.trunk.iter().chain(model.heads.iter()) {
        write_dense(&mut w, d)?;
    }
    match &opt.ms {
        Some(ms) => {
            w.write_u8(1).map_err(err)?;
            for d in ms.trunk.iter().chain(ms.heads.iter()) {
                write_dense(&mut w, d)?;
            }
        }
        None => w.write_u8(0).map_err(err)?,
    }
    w.write_u64::<LittleEndian>(step).map_err(err)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(QModel, Optimizer, u64)> {
    let path = path.as_ref();
    let err = |e| VrlError::io(path.display().to_string(), e);
    let mut r = BufReader::new(std::fs::File::open(path).map_err(err)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(err)?;
    if &magic != CKPT_MAGIC {
        return Err(VrlError::Checkpoint(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>().map_err(err)?;
    if version != CKPT_VERSION {
        return Err(VrlError::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let state_dim = r.read_u32::<LittleEndian>().map_err(err)? as usize;
    let n_hidden = r.read_u32::<LittleEndian>().map_err(err)? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.read_u32::<LittleEndian>().map_err(err)? as usize);
    }
    let n_attrs = r.read_u32::<LittleEndian>().map_err(err)? as usize;
    let n_preds = r.read_u32::<LittleEndian>().map_err(err)? as usize;
    let n_cats = r.read_u32::<LittleEndian>().map_err(err)? as usize;
    let cfg = QConfig {
        state_dim,
        hidden,
        n_attrs,
        n_preds,
        n_cats,
    };
    let kind = match r.read_u8().map_err(err)? {
        0 => OptimizerKind::Sgd,
        1 => OptimizerKind::RmsProp,
        k => {
            return Err(VrlError::Checkpoint(format!(
                "{}: unknown optimizer kind {k}",
                path.display()
            )))
        }
    };
    let decay = r.read_f64::<LittleEndian>().map_err(err)?;
    let eps = r.read_f64::<LittleEndian>().map_err(err)?;

    let mut model = QModel::zeros(cfg);
    let read_dense = |r: &mut BufReader<std::fs::File>, d: &mut Dense| -> Result<()> {
        for v in d.w.iter_mut().chain(d.b.iter_mut()) {
            *v = r
                .read_f32::<LittleEndian>()
                .map_err(|e| VrlError::io(path.display().to_string(), e))? as f64;
        }
        Ok(())
    };
    for d in model.trunk.iter_mut().chain(model.heads.iter_mut()) {
        read_dense(&mut r, d)?;
    }
    let mut opt = Optimizer::new(kind, decay, eps);
    if r.read_u8().map_err(err)? == 1 {
        let mut ms = Grads::zeros_like(&model);
        for d in ms.trunk.iter_mut().chain(ms.heads.iter_mut()) {
            read_dense(&mut r, d)?;
        }
        opt.ms = Some(ms);
    }
    let step = r.read_u64::<LittleEndian>().map_err(err)?;
    Ok((model, opt, step))
}
