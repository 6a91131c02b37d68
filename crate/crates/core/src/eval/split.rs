use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{CategoryId, Dataset, ImageId, PredicateId, RelationTriple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    FewShot(usize),
    ZeroShot,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub seed: Option<u64>,
    /// Training images in dataset order.
    pub train_images: Vec<ImageId>,
    /// Images drawn for each predicate (few-shot only).
    pub per_predicate: Vec<(PredicateId, Vec<ImageId>)>,
    /// Evaluated test triples (zero-shot and full).
    pub test_triples: Vec<RelationTriple>,
}

impl SplitSpec {
    pub fn train_dataset(&self, train: &Dataset) -> Result<Dataset> {
        let keep: HashSet<ImageId> = self.train_images.iter().copied().collect();
        train.subset(&keep)
    }

    /// The test set restricted to the evaluated triples. Images keep all
    /// their instances so that every ordered pair is still ranked.
    pub fn test_dataset(&self, test: &Dataset) -> Result<Dataset> {
        let keep: HashSet<RelationTriple> = self.test_triples.iter().copied().collect();
        test.filter_triples(|t| keep.contains(t))
    }
}

/// Samples `min(s, available)` images per predicate with one seeded stream,
/// visiting predicates in ascending order.
pub fn few_shot_split(dataset: &Dataset, s: usize, seed: u64) -> Result<SplitSpec> {
    if s == 0 {
        return Err(Error::Config("few-shot S must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = HashSet::new();
    let mut per_predicate = Vec::new();
    for (p, pool) in dataset.images_by_predicate() {
        let mut picks: Vec<usize> = index::sample(&mut rng, pool.len(), s.min(pool.len())).into_vec();
        picks.sort_unstable();
        let imgs: Vec<ImageId> = picks.into_iter().map(|i| pool[i]).collect();
        chosen.extend(imgs.iter().copied());
        per_predicate.push((p, imgs));
    }
    let train_images = dataset
        .images()
        .iter()
        .map(|i| i.id)
        .filter(|id| chosen.contains(id))
        .collect();
    Ok(SplitSpec {
        kind: SplitKind::FewShot(s),
        seed: Some(seed),
        train_images,
        per_predicate,
        test_triples: vec![],
    })
}

pub fn full_split(train: &Dataset, test: &Dataset) -> SplitSpec {
    SplitSpec {
        kind: SplitKind::Full,
        seed: None,
        train_images: train.images().iter().map(|i| i.id).collect(),
        per_predicate: vec![],
        test_triples: test.triples().copied().collect(),
    }
}

/// Keeps the test triples whose category combination never occurs in training.
pub fn zero_shot_split(train: &Dataset, test: &Dataset) -> Result<SplitSpec> {
    if train.vocab() != test.vocab() {
        return Err(Error::Vocabulary("train and test vocabularies differ".into()));
    }
    let seen = train.combinations();
    let mut test_triples = Vec::new();
    for t in test.triples() {
        let c = test
            .combination(t)
            .ok_or_else(|| Error::Reference(format!("dangling test triple in image {}", t.image_id)))?;
        if !seen.contains(&c) {
            test_triples.push(*t);
        }
    }
    verify_zero_shot(train, test, &test_triples)?;
    Ok(SplitSpec {
        kind: SplitKind::ZeroShot,
        seed: None,
        train_images: train.images().iter().map(|i| i.id).collect(),
        per_predicate: vec![],
        test_triples,
    })
}

/// Compares every selected triple against every training triple.
pub fn verify_zero_shot(train: &Dataset, test: &Dataset, selected: &[RelationTriple]) -> Result<()> {
    let train_combos: Vec<(CategoryId, PredicateId, CategoryId)> =
        train.triples().filter_map(|t| train.combination(t)).collect();
    for t in selected {
        let c = test
            .combination(t)
            .ok_or_else(|| Error::Reference(format!("selected triple in image {} not in test set", t.image_id)))?;
        if train_combos.contains(&c) {
            return Err(Error::Validation(format!(
                "zero-shot triple in image {} has a combination seen in training",
                t.image_id
            )));
        }
    }
    Ok(())
}

