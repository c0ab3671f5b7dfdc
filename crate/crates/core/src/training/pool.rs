use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxcore::Tensor;

use crate::error::Result;

/// History buffer of generated volumes fed to the discriminators.
#[derive(Debug, Clone)]
pub struct ImagePool {
    capacity: usize,
    items: Vec<Tensor<f32>>,
    rng: ChaCha8Rng,
}

impl ImagePool {
    pub fn new(capacity: usize, seed: u64) -> Self {
        ImagePool {
            capacity,
            items: Vec::with_capacity(capacity),
            rng: ChaCha8Rng::seed_from_u64(seed),
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

    /// Store-and-return while filling; once full, return `fresh` or swap it
    /// for a random stored volume with equal probability.
    pub fn query_one(&mut self, fresh: Tensor<f32>) -> Tensor<f32> {
        if self.capacity == 0 {
            return fresh;
        }
        if self.items.len() < self.capacity {
            self.items.push(fresh.clone());
            return fresh;
        }
        if self.rng.random_bool(0.5) {
            fresh
        } else {
            let i = self.rng.random_range(0..self.items.len());
            std::mem::replace(&mut self.items[i], fresh)
        }
    }

    /// Per-sample query over an `[N, ...]` batch.
    pub fn query(&mut self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        if self.capacity == 0 {
            return Ok(batch.clone());
        }
        let out: Vec<Tensor<f32>> = batch.unstack().into_iter().map(|t| self.query_one(t)).collect();
        Ok(Tensor::stack(&out)?)
    }
}
