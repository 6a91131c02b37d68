//! Wiring of the augmentation stages shared by the CLI, tests and benches.

use crate::anchor::{scan_anchors_with, AnchorScan, DEFAULT_DELTA};
use crate::composer::{compose_corpus_with, CompositionContext, Corpus, DEFAULT_BUDGET};
use crate::dictionary::{build_neighbor_index, ComponentDictionary, DEFAULT_CAPACITY, DEFAULT_NEIGHBORS};
use crate::error::Result;
use crate::par::Exec;
use crate::schema::{ComponentStore, Dataset, EmbeddingTable};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub delta: f64,
    pub capacity: usize,
    pub neighbors: usize,
    pub min_similarity: Option<f64>,
    pub budget: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            capacity: DEFAULT_CAPACITY,
            neighbors: DEFAULT_NEIGHBORS,
            min_similarity: None,
            budget: DEFAULT_BUDGET,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct Augmentation {
    pub scan: AnchorScan,
    pub dictionary: ComponentDictionary,
    pub corpus: Corpus,
}

/// Streams every training component through the dictionary in dataset order.
pub fn fill_dictionary(
    dataset: &Dataset,
    components: &ComponentStore,
    capacity: usize,
    seed: u64,
) -> Result<ComponentDictionary> {
    let mut dict = ComponentDictionary::new(capacity, seed)?;
    for img in dataset.images() {
        for inst in &img.instances {
            dict.insert(components.get(inst.id)?.clone());
        }
    }
    Ok(dict)
}

pub fn augment(
    dataset: &Dataset,
    components: &ComponentStore,
    embeddings: &EmbeddingTable,
    config: &AugmentConfig,
) -> Result<Augmentation> {
    augment_with(dataset, components, embeddings, config, Exec::default())
}

pub fn augment_with(
    dataset: &Dataset,
    components: &ComponentStore,
    embeddings: &EmbeddingTable,
    config: &AugmentConfig,
    exec: Exec,
) -> Result<Augmentation> {
    let scan = scan_anchors_with(dataset, config.delta, exec)?;
    let dictionary = fill_dictionary(dataset, components, config.capacity, config.seed)?;
    let neighbors = build_neighbor_index(embeddings, config.neighbors, config.min_similarity)?;
    let ctx = CompositionContext {
        dataset,
        components,
        dictionary: &dictionary,
        neighbors: &neighbors,
        embeddings,
    };
    let corpus = compose_corpus_with(&ctx, &scan.anchors, config.budget, config.seed, exec)?;
    Ok(Augmentation {
        scan,
        dictionary,
        corpus,
    })
}
