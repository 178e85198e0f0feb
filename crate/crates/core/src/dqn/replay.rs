use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::TokenId;

/// `(s, a, r, s', done)` with the insertion masks of both states.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub tokens: Arc<[TokenId]>,
    pub mask: Arc<[bool]>,
    pub action: usize,
    pub reward: f64,
    pub next_tokens: Arc<[TokenId]>,
    pub next_mask: Arc<[bool]>,
    pub done: bool,
}

/// FIFO ring: once full, each push evicts the oldest transition.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("agent.buffer_capacity", "must be positive"));
        }
        Ok(ReplayBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
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

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `min(n, len)` distinct transitions, uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        sample(rng, self.items.len(), n.min(self.items.len()))
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}
