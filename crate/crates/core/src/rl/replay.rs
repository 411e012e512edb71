use crate::error::{HerdError, Result};
use crate::observation::StateImage;
use rand::Rng;
use std::sync::Arc;

/// A rendered state together with its action mask. Shared between the
/// transition that ends in it and the one that starts from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub image: StateImage,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Arc<Observed>,
    /// `(row, col)` pixel of the chosen goal.
    pub action: (usize, usize),
    pub reward: f64,
    pub next_state: Arc<Observed>,
    pub terminal: bool,
    /// Meters driven during the step; sets the per-transition discount.
    pub step_distance: f64,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { items: Vec::with_capacity(capacity.min(1 << 16)), capacity, next: 0 }
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
        debug_assert!(t.reward.is_finite());
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>> {
        if self.items.len() < n {
            return Err(HerdError::NotReady { have: self.items.len(), need: n });
        }
        Ok((0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect())
    }
}
