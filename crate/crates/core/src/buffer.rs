use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Bounded first-in-first-out store of loss values.
///
/// Pushing into a full buffer evicts the oldest value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBuffer {
    values: VecDeque<f64>,
    capacity: usize,
}

impl LossBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "loss buffer capacity must be positive");
        Self { values: VecDeque::with_capacity(capacity), capacity }
    }

    /// Appends `value`, returning the evicted value if the buffer was full.
    pub fn push(&mut self, value: f64) -> Option<f64> {
        let evicted = if self.values.len() == self.capacity { self.values.pop_front() } else { None };
        self.values.push_back(value);
        evicted
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    /// Contents oldest-first.
    pub fn to_vec(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }
}
