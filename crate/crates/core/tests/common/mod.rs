#![allow(dead_code)]

use dec_core::schema::{
    CategoryId, CategoryVocab, ComponentStore, Dataset, EmbeddingTable, FeatureDims, Image, ImageId, InstanceId,
    ObjectInstance, PredicateId, RelationTriple,
};
use dec_core::synth::{generate, SynthConfig, SynthOutput};
use dec_core::BoundingBox;

pub fn small_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_images: 300,
        n_test_images: 100,
        n_unseen: 5,
        seed,
        ..SynthConfig::default()
    }
}

pub struct World {
    pub synth: SynthOutput,
    pub embeddings: EmbeddingTable,
    pub dims: FeatureDims,
    pub train: ComponentStore,
    pub test: ComponentStore,
}

pub fn small_world(seed: u64) -> World {
    let config = small_config(seed);
    let synth = generate(&config).unwrap();
    let embeddings = synth.embedding_table().unwrap();
    let dims = config.feature_dims();
    let train = ComponentStore::build(&synth.train, &embeddings, dims).unwrap();
    let test = ComponentStore::build(&synth.test, &embeddings, dims).unwrap();
    World { synth, embeddings, dims, train, test }
}

/// Three predicates, each fixed by the subject category. Category 3 is the
/// shared object. Visual features are one-hot categories.
pub fn separable(images_per_predicate: usize) -> (Dataset, EmbeddingTable, FeatureDims) {
    let vocab = CategoryVocab::new(
        ["a", "b", "c", "thing"].map(String::from).to_vec(),
        ["pa", "pb", "pc"].map(String::from).to_vec(),
    )
    .unwrap();
    let mut images = Vec::new();
    let mut next = 0u64;
    for p in 0..3usize {
        for k in 0..images_per_predicate {
            let id = ImageId(images.len() as u64);
            let mut inst = |cat: usize, x: f64| {
                next += 1;
                let mut visual = vec![0.0f32; 4];
                visual[cat] = 1.0;
                ObjectInstance {
                    id: InstanceId(next),
                    image_id: id,
                    category: CategoryId(cat),
                    bbox: BoundingBox::new(x, 10.0, x + 20.0 + k as f64, 40.0).unwrap(),
                    visual: Some(visual),
                }
            };
            let s = inst(p, 10.0);
            let o = inst(3, 100.0);
            let triple = RelationTriple { image_id: id, subject: s.id, object: o.id, predicate: PredicateId(p + 1) };
            images.push(Image { id, width: 200.0, height: 100.0, instances: vec![s, o], triples: vec![triple] });
        }
    }
    let ds = Dataset::new(vocab, images).unwrap();
    let emb = EmbeddingTable::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![-1.0, 0.5]]).unwrap();
    (ds, emb, FeatureDims { visual: 4, spatial: 16, word: 2 })
}
