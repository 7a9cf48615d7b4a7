use rand::Rng;

use crate::diffcore::Array;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// One environment transition `(s, a, r, x, done)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// A sampled minibatch in row-major arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array,
    pub actions: Array,
    pub rewards: Vec<f64>,
    pub next_states: Array,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_samples(samples: &[TransitionSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::contract("batch must not be empty"))?;
        let (ds, da) = (first.state.len(), first.action.len());
        let mut states = Vec::with_capacity(samples.len() * ds);
        let mut actions = Vec::with_capacity(samples.len() * da);
        let mut next = Vec::with_capacity(samples.len() * ds);
        for s in samples {
            states.extend_from_slice(&s.state);
            actions.extend_from_slice(&s.action);
            next.extend_from_slice(&s.next_state);
        }
        Ok(Self {
            states: Array::matrix(samples.len(), ds, states)?,
            actions: Array::matrix(samples.len(), da, actions)?,
            rewards: samples.iter().map(|s| s.reward).collect(),
            next_states: Array::matrix(samples.len(), ds, next)?,
            dones: samples.iter().map(|s| s.done).collect(),
        })
    }
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<TransitionSample>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::contract("replay capacity must be at least 1"));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        })
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

    pub fn push(&mut self, sample: TransitionSample) -> Result<()> {
        if !sample.reward.is_finite() {
            return Err(Error::contract("transition reward must be finite"));
        }
        if self.items.len() < self.capacity {
            self.items.push(sample);
        } else {
            self.items[self.cursor] = sample;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, index: usize) -> Option<&TransitionSample> {
        self.items.get(index)
    }

    /// Uniform indices with replacement over the filled region.
    pub fn sample_indices(&self, batch_size: usize, rng: &mut SimRng) -> Result<Vec<usize>> {
        if self.items.len() < batch_size || batch_size == 0 {
            return Err(Error::contract(format!(
                "cannot sample {batch_size} transitions from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok((0..batch_size)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect())
    }

    pub fn sample(&self, batch_size: usize, rng: &mut SimRng) -> Result<Batch> {
        let idx = self.sample_indices(batch_size, rng)?;
        let picked: Vec<TransitionSample> = idx.iter().map(|&i| self.items[i].clone()).collect();
        Batch::from_samples(&picked)
    }
}
