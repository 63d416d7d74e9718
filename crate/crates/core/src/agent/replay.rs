use std::sync::Arc;

use rand::Rng;

/// One stored interaction. States are shared with neighbouring transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<[f64]>,
    /// `[w_expert, w_channel]` as sampled.
    pub action: Vec<f64>,
    pub r_llm: f64,
    pub r_channel: f64,
    pub next_state: Arc<[f64]>,
    pub done: bool,
}

/// FIFO ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}
