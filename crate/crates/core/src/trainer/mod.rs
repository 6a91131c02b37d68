//! Predicate classifier training on real and composed triples.

mod checkpoint;
mod model;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{read_checkpoint, read_loss_trace, write_checkpoint, write_loss_trace};
pub use model::{
    ce_loss, forward, grad, grad_with, kl_loss, loss, softmax, ClassifierParams, Dense, LossParts,
    TrainItem, PROB_FLOOR,
};

use crate::composer::Corpus;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::sampler::{BalancedSampler, UniformSampler};
use crate::schema::{ComponentStore, Dataset, ImageId, InstanceId, PairFeature, PredicateId};

/// How training images are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// `n_predicates * k_images` images uniformly at random.
    Uniform,
    /// Predicate-first balanced sampling.
    Balanced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub kl_weight: f64,
    pub seed: u64,
    pub triple_cap: usize,
    /// Negative (no-relation) pairs per positive triple in each image.
    pub negative_ratio: f64,
    pub hidden: Option<usize>,
    pub sampling: Sampling,
    pub n_predicates: usize,
    pub k_images: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            iterations: 5000,
            kl_weight: 1.0,
            seed: 0,
            triple_cap: 256,
            negative_ratio: 1.0,
            hidden: None,
            sampling: Sampling::Uniform,
            n_predicates: crate::sampler::DEFAULT_PREDICATES_PER_BATCH,
            k_images: crate::sampler::DEFAULT_IMAGES_PER_PREDICATE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config(format!("KL weight must be non-negative, got {}", self.kl_weight)));
        }
        if self.triple_cap == 0 {
            return Err(Error::Config("triple cap must be positive".into()));
        }
        if !(self.negative_ratio >= 0.0 && self.negative_ratio.is_finite()) {
            return Err(Error::Config("negative ratio must be non-negative".into()));
        }
        if self.hidden == Some(0) {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ClassifierParams,
    /// Total batch loss before each update.
    pub loss_trace: Vec<f64>,
}

/// Image pools per predicate. An image joins a pool when it holds a real or
/// composed triple of that predicate.
pub fn training_pools(dataset: &Dataset, corpus: &Corpus) -> BTreeMap<PredicateId, Vec<ImageId>> {
    let mut sets: BTreeMap<PredicateId, HashSet<ImageId>> = BTreeMap::new();
    for t in dataset.triples() {
        sets.entry(t.predicate).or_default().insert(t.image_id);
    }
    for c in &corpus.items {
        sets.entry(c.predicate_label).or_default().insert(c.anchor.image_id);
    }
    sets.into_iter()
        .map(|(p, s)| {
            let mut v: Vec<ImageId> = s.into_iter().collect();
            v.sort_by_key(|id| dataset.image_position(*id));
            (p, v)
        })
        .collect()
}

enum Schedule {
    Uniform(UniformSampler),
    Balanced(BalancedSampler),
}

impl Schedule {
    fn next(&mut self) -> Vec<ImageId> {
        match self {
            Schedule::Uniform(s) => s.next_batch(),
            Schedule::Balanced(s) => s.next_batch().into_iter().flat_map(|(_, imgs)| imgs).collect(),
        }
    }
}

/// Owned training examples of one image.
#[derive(Default)]
struct ImageItems {
    pairs: Vec<PairFeature>,
    labels: Vec<usize>,
    /// For composed items, the index into `anchors` of their anchor pair.
    anchor_of: Vec<Option<usize>>,
    anchors: Vec<PairFeature>,
}

impl ImageItems {
    fn push(&mut self, pair: PairFeature, label: usize, anchor: Option<usize>) {
        self.pairs.push(pair);
        self.labels.push(label);
        self.anchor_of.push(anchor);
    }
}

/// Trains the classifier with plain gradient descent.
pub fn train(
    dataset: &Dataset,
    components: &ComponentStore,
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    train_with(dataset, components, corpus, config, Exec::default())
}

pub fn train_with(
    dataset: &Dataset,
    components: &ComponentStore,
    corpus: &Corpus,
    config: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutput> {
    config.validate()?;
    let dims = components.dims();
    let mut params = ClassifierParams::new(
        dims.total(),
        dataset.vocab().num_predicates(),
        config.hidden,
        config.seed,
    );
    let mut schedule = match config.sampling {
        Sampling::Uniform => Schedule::Uniform(UniformSampler::new(
            dataset.images().iter().filter(|i| !i.triples.is_empty()).map(|i| i.id).collect(),
            config.n_predicates * config.k_images,
            config.seed,
        )?),
        Sampling::Balanced => Schedule::Balanced(BalancedSampler::new(
            training_pools(dataset, corpus),
            config.n_predicates,
            config.k_images,
            config.seed,
        )?),
    };
    let mut composed_by_image: HashMap<ImageId, Vec<usize>> = HashMap::new();
    for (i, c) in corpus.items.iter().enumerate() {
        composed_by_image.entry(c.anchor.image_id).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut trace = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let images = schedule.next();
        let mut per_image = Vec::with_capacity(images.len());
        for id in images {
            per_image.push(image_items(dataset, components, corpus, &composed_by_image, id, config, &mut rng)?);
        }
        // anchor predictions use the current parameters and stay fixed
        let targets = per_image
            .iter()
            .map(|items| items.anchors.iter().map(|a| forward(&params, a)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let mut batch = Vec::new();
        for (items, t) in per_image.iter().zip(&targets) {
            for ((pair, &label), anchor) in items.pairs.iter().zip(&items.labels).zip(&items.anchor_of) {
                batch.push(TrainItem {
                    pair,
                    label,
                    target: anchor.map(|k| t[k].as_slice()),
                });
            }
        }
        if batch.is_empty() {
            return Err(Error::Numeric(format!("iteration {iteration}: empty batch")));
        }
        let (g, loss) = grad_with(&params, &batch, config.kl_weight, exec)?;
        if !loss.total.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became non-finite at iteration {iteration} (ce={}, kl={})",
                loss.ce, loss.kl
            )));
        }
        trace.push(loss.total);
        params.add_scaled(-config.learning_rate, &g);
        if !params.is_finite() {
            return Err(Error::Numeric(format!("parameters diverged at iteration {iteration}")));
        }
    }
    Ok(TrainOutput {
        params,
        loss_trace: trace,
    })
}

fn image_items(
    dataset: &Dataset,
    components: &ComponentStore,
    corpus: &Corpus,
    composed_by_image: &HashMap<ImageId, Vec<usize>>,
    id: ImageId,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ImageItems> {
    let img = dataset
        .image(id)
        .ok_or_else(|| Error::Reference(format!("sampled image {id} not in dataset")))?;
    let cap = config.triple_cap;
    let mut items = ImageItems::default();
    let pair_of = |s: InstanceId, o: InstanceId| -> Result<PairFeature> {
        Ok(PairFeature::new(components.get(s)?, components.get(o)?))
    };
    let mut positives = 0;
    for t in img.triples.iter().take(cap) {
        items.push(pair_of(t.subject, t.object)?, t.predicate.0, None);
        positives += 1;
    }
    let mut used = positives;
    if let Some(list) = composed_by_image.get(&id) {
        let mut anchor_slot: HashMap<(InstanceId, InstanceId, PredicateId), usize> = HashMap::new();
        for &ci in list.iter().take(cap.saturating_sub(used)) {
            let c = &corpus.items[ci];
            let key = (c.anchor.subject, c.anchor.object, c.anchor.predicate);
            let slot = match anchor_slot.get(&key) {
                Some(&s) => s,
                None => {
                    items.anchors.push(pair_of(c.anchor.subject, c.anchor.object)?);
                    anchor_slot.insert(key, items.anchors.len() - 1);
                    items.anchors.len() - 1
                }
            };
            items.push(c.pair_feature.clone(), c.predicate_label.0, Some(slot));
            used += 1;
        }
    }
    let annotated: HashSet<(InstanceId, InstanceId)> =
        img.triples.iter().map(|t| (t.subject, t.object)).collect();
    let candidates: Vec<(InstanceId, InstanceId)> = img
        .instances
        .iter()
        .flat_map(|s| img.instances.iter().map(move |o| (s.id, o.id)))
        .filter(|(s, o)| s != o && !annotated.contains(&(*s, *o)))
        .collect();
    let wanted = ((positives as f64) * config.negative_ratio).round() as usize;
    let n_neg = wanted.min(candidates.len()).min(cap.saturating_sub(used));
    for k in index::sample(rng, candidates.len(), n_neg).iter() {
        let (s, o) = candidates[k];
        items.push(pair_of(s, o)?, PredicateId::NO_RELATION.0, None);
    }
    Ok(items)
}
