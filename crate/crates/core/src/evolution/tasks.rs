//! Task sets and the reshuffled training stream.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episode::derive_seed;
use crate::microworld::{sample_task, TaskFamily};
use crate::trajectory::Task;

/// `per_family` tasks for every family, world seeds `first_seed..first_seed + per_family`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub families: Vec<TaskFamily>,
    pub per_family: usize,
    pub first_seed: u64,
}

impl TaskSpec {
    pub fn seeds(&self) -> Range<u64> {
        self.first_seed..self.first_seed + self.per_family as u64
    }

    pub fn overlaps(&self, other: &TaskSpec) -> bool {
        let (a, b) = (self.seeds(), other.seeds());
        a.start < b.end && b.start < a.end
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.families.is_empty() {
            return Err("families must not be empty".into());
        }
        if self.per_family == 0 {
            return Err("per_family must be at least 1".into());
        }
        let mut seen = self.families.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.families.len() {
            return Err("families must not repeat".into());
        }
        Ok(())
    }

    /// Family-major task list.
    pub fn tasks(&self) -> Vec<Task> {
        self.families
            .iter()
            .flat_map(|f| self.seeds().map(move |s| sample_task(*f, s).0))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.families.len() * self.per_family
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Endless task stream: the pool in a fresh seeded order every epoch.
pub struct TaskStream {
    pool: Vec<Task>,
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl TaskStream {
    pub fn new(pool: Vec<Task>, seed: u64) -> Self {
        assert!(!pool.is_empty(), "task stream needs at least one task");
        let mut stream = Self {
            order: Vec::new(),
            pool,
            pos: 0,
            epoch: 0,
            seed,
        };
        stream.shuffle();
        stream
    }

    fn shuffle(&mut self) {
        self.order = (0..self.pool.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, self.epoch]));
        self.order.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_task(&mut self) -> &Task {
        if self.pos == self.order.len() {
            self.epoch += 1;
            self.shuffle();
        }
        let task = &self.pool[self.order[self.pos]];
        self.pos += 1;
        task
    }
}
