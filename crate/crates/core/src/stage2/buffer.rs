//! Bounded FIFO replay memory.

use std::collections::VecDeque;

use rand::Rng;

use super::{WeightAction, WeightState};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: WeightState,
    pub action: WeightAction,
    pub reward: f64,
    pub next_state: WeightState,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            storage: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// Appends `t`, evicting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
    }

    /// Uniform draw with replacement.
    pub fn sample_with(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>> {
        if batch == 0 || self.storage.len() < batch {
            return Err(Error::BufferUnderfilled {
                len: self.storage.len(),
                batch,
            });
        }
        Ok((0..batch)
            .map(|_| &self.storage[rng.random_range(0..self.storage.len())])
            .collect())
    }

    pub fn sample(&self, batch: usize, seed: u64) -> Result<Vec<&Transition>> {
        self.sample_with(batch, &mut seed::rng(seed))
    }
}
