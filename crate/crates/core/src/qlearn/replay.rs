//! Uniform-sampling replay memory with FIFO eviction.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VrlError};

/// One environment step: state, the three actions taken, their rewards, the
/// next state and the action sets available there (head-index lists).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub actions: [usize; 3],
    pub rewards: [f64; 3],
    pub next_state: Vec<f64>,
    pub next_sets: [Vec<usize>; 3],
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayMemory {
    buf: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> ReplayMemory {
        assert!(capacity >= 1, "replay capacity must be >= 1");
        ReplayMemory {
            buf: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    /// Uniform sample: without replacement when `n <= len`, with replacement
    /// otherwise. Errors on an empty memory.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Transition>> {
        if self.buf.is_empty() {
            return Err(VrlError::EmptyReplay);
        }
        if n <= self.buf.len() {
            // Partial Fisher-Yates over an index vector.
            let mut idx: Vec<usize> = (0..self.buf.len()).collect();
            for i in 0..n {
                let j = rng.random_range(i..idx.len());
                idx.swap(i, j);
            }
            Ok(idx[..n].iter().map(|&i| self.buf[i].clone()).collect())
        } else {
            Ok((0..n)
                .map(|_| self.buf[rng.random_range(0..self.buf.len())].clone())
                .collect())
        }
    }
}
