use std::collections::VecDeque;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::Transition;

/// FIFO buffer with rank-based prioritized sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { items: VecDeque::with_capacity(capacity.min(1 << 14)), capacity: capacity.max(1) }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn set_priority(&mut self, i: usize, priority: f64) {
        self.items[i].priority = priority;
    }

    /// Buffer indices ordered by rank: highest priority first, newer first on ties.
    pub fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.sort_by(|&a, &b| self.items[b].priority.total_cmp(&self.items[a].priority).then(b.cmp(&a)));
        order
    }

    /// `batch` indices drawn with replacement, P(rank) ∝ rank^(-alpha).
    pub fn sample_batch<R: Rng>(&self, batch: usize, alpha: f64, rng: &mut R) -> Vec<usize> {
        if self.items.is_empty() || batch == 0 {
            return Vec::new();
        }
        let order = self.ranked();
        let weights = rank_weights(order.len(), alpha);
        let dist = WeightedIndex::new(&weights).expect("positive rank weights");
        (0..batch).map(|_| order[dist.sample(rng)]).collect()
    }
}

/// Unnormalized power-law weights for ranks 1..=n.
pub fn rank_weights(n: usize, alpha: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-alpha)).collect()
}
