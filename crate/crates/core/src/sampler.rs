//! Predicate-first batch sampling: pick `n_predicates` distinct predicates
//! uniformly, then `k_images` images for each of them.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::schema::{ImageId, PredicateId};

pub const DEFAULT_PREDICATES_PER_BATCH: usize = 5;
pub const DEFAULT_IMAGES_PER_PREDICATE: usize = 1;

#[derive(Debug, Clone)]
pub struct BalancedSampler {
    n_predicates: usize,
    k_images: usize,
    pools: Vec<(PredicateId, Vec<ImageId>)>,
    rng: ChaCha8Rng,
}

impl BalancedSampler {
    /// Predicates with empty pools are never drawn.
    pub fn new(
        pools: BTreeMap<PredicateId, Vec<ImageId>>,
        n_predicates: usize,
        k_images: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_predicates == 0 || k_images == 0 {
            return Err(Error::Config("N and K must both be at least 1".into()));
        }
        let pools: Vec<_> = pools.into_iter().filter(|(_, p)| !p.is_empty()).collect();
        if pools.len() < n_predicates {
            return Err(Error::Config(format!(
                "{} predicates per batch requested but only {} have images",
                n_predicates,
                pools.len()
            )));
        }
        Ok(Self {
            n_predicates,
            k_images,
            pools,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.n_predicates * self.k_images
    }

    pub fn eligible(&self) -> impl Iterator<Item = PredicateId> + '_ {
        self.pools.iter().map(|(p, _)| *p)
    }

    pub fn next_batch(&mut self) -> Vec<(PredicateId, Vec<ImageId>)> {
        let picks = index::sample(&mut self.rng, self.pools.len(), self.n_predicates);
        let mut batch = Vec::with_capacity(self.n_predicates);
        for p in picks.iter() {
            let (pred, pool) = &self.pools[p];
            let images = if pool.len() < self.k_images {
                (0..self.k_images)
                    .map(|_| pool[self.rng.random_range(0..pool.len())])
                    .collect()
            } else {
                index::sample(&mut self.rng, pool.len(), self.k_images)
                    .iter()
                    .map(|i| pool[i])
                    .collect()
            };
            batch.push((*pred, images));
        }
        batch
    }
}

/// Uniform image sampling with the same batch size; the baseline schedule.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    images: Vec<ImageId>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl UniformSampler {
    pub fn new(images: Vec<ImageId>, batch_size: usize, seed: u64) -> Result<Self> {
        if images.is_empty() || batch_size == 0 {
            return Err(Error::Config("uniform sampler needs images and a positive batch size".into()));
        }
        Ok(Self {
            images,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_batch(&mut self) -> Vec<ImageId> {
        let n = self.batch_size.min(self.images.len());
        index::sample(&mut self.rng, self.images.len(), n)
            .iter()
            .map(|i| self.images[i])
            .collect()
    }
}
