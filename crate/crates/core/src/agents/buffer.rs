use serde::{Deserialize, Serialize};

use crate::envs::{ActionMode, Transition};
use crate::error::{Error, Result};
use crate::math::RngStream;

pub const DEFAULT_REPLAY_CAPACITY: usize = 100_000;

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    total_added: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::new(), next: 0, total_added: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn total_added(&self) -> u64 {
        self.total_added
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.total_added += 1;
    }

    /// Stored transitions in storage order (not chronological once wrapped).
    pub fn as_slice(&self) -> &[Transition] {
        &self.items
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBatch("replay sample"));
        }
        Ok((0..n).map(|_| rng.below(self.items.len())).collect())
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.next = 0;
    }
}

/// Buffer set of one unsupervised run: the replay buffer plus the two
/// on-policy buffers cleared every epoch.
///
/// Stochastic-mode transitions go to the replay buffer and the stochastic
/// buffer; deterministic-mode transitions only to the deterministic buffer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PmaBuffers {
    pub replay: ReplayBuffer,
    stochastic: Vec<Transition>,
    deterministic: Vec<Transition>,
}

impl PmaBuffers {
    pub fn new(capacity: usize) -> Self {
        Self { replay: ReplayBuffer::new(capacity), stochastic: Vec::new(), deterministic: Vec::new() }
    }

    pub fn push(&mut self, t: Transition) {
        match t.mode {
            ActionMode::Stochastic => {
                self.stochastic.push(t.clone());
                self.replay.push(t);
            }
            ActionMode::Deterministic => self.deterministic.push(t),
        }
    }

    pub fn stochastic(&self) -> &[Transition] {
        &self.stochastic
    }

    pub fn deterministic(&self) -> &[Transition] {
        &self.deterministic
    }

    pub fn clear_on_policy(&mut self) {
        self.stochastic.clear();
        self.deterministic.clear();
    }
}
