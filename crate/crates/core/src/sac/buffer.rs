use std::collections::VecDeque;

use rand::Rng;

use super::episode::Transition;
use crate::error::{FlipError, Result};
use crate::rng::SimRng;

/// FIFO replay memory with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(FlipError::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
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

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample(&self, batch: usize, rng: &mut SimRng) -> Result<Vec<&Transition>> {
        if batch == 0 || self.items.len() < batch {
            return Err(FlipError::Precondition(format!(
                "need at least {batch} transitions to sample, have {}",
                self.items.len()
            )));
        }
        Ok((0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}
