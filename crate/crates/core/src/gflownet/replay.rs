use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::Trajectory;
use crate::library::DesignState;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub trajectory: Trajectory,
    pub log_reward: f64,
}

/// Keeps the highest-reward trajectories seen so far, one per terminal
/// design, and samples them with rank-based priority `∝ 1 / rank`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    // sorted by log-reward, descending; insertion order among equals
    entries: Vec<ReplayEntry>,
    terminals: HashSet<DesignState>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity + 1),
            terminals: HashSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    /// Inserts a trajectory unless its terminal is already stored or it
    /// ranks below a full buffer. Returns whether it was kept.
    pub fn push(&mut self, trajectory: Trajectory, log_reward: f64) -> bool {
        if self.capacity == 0 || self.terminals.contains(&trajectory.terminal) {
            return false;
        }
        let at = self.entries.partition_point(|e| e.log_reward >= log_reward);
        if at >= self.capacity {
            return false;
        }
        self.terminals.insert(trajectory.terminal.clone());
        self.entries.insert(
            at,
            ReplayEntry {
                trajectory,
                log_reward,
            },
        );
        if self.entries.len() > self.capacity {
            let evicted = self.entries.pop().expect("over capacity");
            self.terminals.remove(&evicted.trajectory.terminal);
        }
        true
    }

    /// Relative draw weight of rank `r` (1-based).
    pub fn rank_weight(rank: usize) -> f64 {
        1.0 / rank as f64
    }

    /// Draws `k` entries with replacement; empty when the buffer is empty.
    pub fn sample(&self, k: usize, rng: &mut impl Rng) -> Vec<&ReplayEntry> {
        if self.entries.is_empty() || k == 0 {
            return Vec::new();
        }
        let dist = WeightedIndex::new((1..=self.entries.len()).map(Self::rank_weight))
            .expect("positive finite weights");
        (0..k).map(|_| &self.entries[dist.sample(rng)]).collect()
    }
}
