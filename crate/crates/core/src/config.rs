//! Training hyperparameters and schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VrlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient steps, used for hand-checkable updates.
    Sgd,
    RmsProp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Maximum search steps per episode.
    pub max_steps: usize,
    /// Initial learning rate; decayed by `lr_decay_factor` every
    /// `lr_decay_every` epochs.
    pub lr_init: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// Discount factor.
    pub gamma: f64,
    /// Target network sync period in global steps.
    pub tau: u64,
    /// Transitions per Q-update.
    pub batch: usize,
    pub replay_capacity: usize,
    /// ε-greedy schedule: linear from `eps_start` to `eps_end` over the first
    /// `eps_anneal_epochs` epochs, then fixed.
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_anneal_epochs: usize,
    /// Hidden layer widths of the shared trunk.
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// Fraction of scenes held out for per-epoch validation recall.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            max_steps: 300,
            lr_init: 0.0007,
            lr_decay_every: 10,
            lr_decay_factor: 0.1,
            gamma: 0.9,
            tau: 10_000,
            batch: 64,
            replay_capacity: 50_000,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_anneal_epochs: 20,
            hidden: vec![256, 256],
            optimizer: OptimizerKind::RmsProp,
            rms_decay: 0.95,
            rms_eps: 1e-6,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_init <= 0.0 {
            return Err(VrlError::Config("lr_init must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(VrlError::Config("gamma must be in [0, 1)".into()));
        }
        if self.tau < 1 {
            return Err(VrlError::Config("tau must be >= 1".into()));
        }
        if self.batch < 1 {
            return Err(VrlError::Config("batch must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(VrlError::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// ε at the start of the given epoch.
    pub fn epsilon_at(&self, epoch: usize) -> f64 {
        if epoch >= self.eps_anneal_epochs {
            self.eps_end
        } else {
            let t = epoch as f64 / self.eps_anneal_epochs as f64;
            self.eps_start + (self.eps_end - self.eps_start) * t
        }
    }

    /// Learning rate during the given epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decades = (epoch / self.lr_decay_every) as i32;
        self.lr_init * self.lr_decay_factor.powi(decades)
    }
}
