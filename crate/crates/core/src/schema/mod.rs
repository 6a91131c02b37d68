//! Data model for annotated scene graphs and the per-instance feature
//! vectors built from them.

mod component;
pub mod io;
mod spatial;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

pub use component::{
    assemble_component, ComponentStore, EmbeddingTable, FeatureDims, PairFeature, VisualComponent,
};
pub use io::{load_dataset, load_embeddings};
pub use spatial::{spatial_encode, SpatialFeature};

/// Name of the reserved background predicate at index 0.
pub const NO_RELATION: &str = "__no_relation__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InstanceId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredicateId(pub usize);

impl PredicateId {
    pub const NO_RELATION: PredicateId = PredicateId(0);

    pub fn is_background(self) -> bool {
        self.0 == 0
    }
}

impl std::fmt::Display for InstanceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for ImageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Object category and predicate names. Predicate index 0 is always the
/// reserved [`NO_RELATION`] class; annotated predicates start at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryVocab {
    object_categories: Vec<String>,
    predicates: Vec<String>,
    object_lookup: HashMap<String, CategoryId>,
    predicate_lookup: HashMap<String, PredicateId>,
}

impl CategoryVocab {
    /// `predicates` lists the annotated predicates only; the background class
    /// is prepended.
    pub fn new(object_categories: Vec<String>, predicates: Vec<String>) -> Result<Self> {
        if object_categories.is_empty() || predicates.is_empty() {
            return Err(Error::Vocabulary(
                "vocabulary needs at least one object category and one predicate".into(),
            ));
        }
        let mut object_lookup = HashMap::new();
        for (i, name) in object_categories.iter().enumerate() {
            if object_lookup.insert(name.clone(), CategoryId(i)).is_some() {
                return Err(Error::Vocabulary(format!("duplicate object category {name:?}")));
            }
        }
        let mut all_predicates = Vec::with_capacity(predicates.len() + 1);
        all_predicates.push(NO_RELATION.to_string());
        all_predicates.extend(predicates);
        let mut predicate_lookup = HashMap::new();
        for (i, name) in all_predicates.iter().enumerate() {
            if predicate_lookup.insert(name.clone(), PredicateId(i)).is_some() {
                return Err(Error::Vocabulary(format!("duplicate predicate {name:?}")));
            }
        }
        Ok(Self {
            object_categories,
            predicates: all_predicates,
            object_lookup,
            predicate_lookup,
        })
    }

    pub fn object_categories(&self) -> &[String] {
        &self.object_categories
    }

    /// All predicate names including the background class at index 0.
    pub fn predicates(&self) -> &[String] {
        &self.predicates
    }

    pub fn num_objects(&self) -> usize {
        self.object_categories.len()
    }

    /// Number of classifier outputs, background included.
    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn annotated_predicates(&self) -> impl Iterator<Item = PredicateId> {
        (1..self.predicates.len()).map(PredicateId)
    }

    pub fn category(&self, name: &str) -> Option<CategoryId> {
        self.object_lookup.get(name).copied()
    }

    pub fn predicate(&self, name: &str) -> Option<PredicateId> {
        self.predicate_lookup.get(name).copied()
    }

    pub fn category_name(&self, id: CategoryId) -> &str {
        &self.object_categories[id.0]
    }

    pub fn predicate_name(&self, id: PredicateId) -> &str {
        &self.predicates[id.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub id: InstanceId,
    pub image_id: ImageId,
    pub category: CategoryId,
    pub bbox: BoundingBox,
    /// Detector feature; `None` until a feature file has been attached.
    pub visual: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationTriple {
    pub image_id: ImageId,
    pub subject: InstanceId,
    pub object: InstanceId,
    pub predicate: PredicateId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub id: ImageId,
    pub width: f64,
    pub height: f64,
    pub instances: Vec<ObjectInstance>,
    pub triples: Vec<RelationTriple>,
}

impl Image {
    pub fn instance(&self, id: InstanceId) -> Option<&ObjectInstance> {
        self.instances.iter().find(|i| i.id == id)
    }
}

/// A validated collection of annotated images.
#[derive(Debug, Clone)]
pub struct Dataset {
    vocab: CategoryVocab,
    images: Vec<Image>,
    instance_index: HashMap<InstanceId, (usize, usize)>,
    image_index: HashMap<ImageId, usize>,
}

impl Dataset {
    pub fn new(vocab: CategoryVocab, images: Vec<Image>) -> Result<Self> {
        let mut instance_index = HashMap::new();
        let mut image_index = HashMap::new();
        for (ii, image) in images.iter().enumerate() {
            if image_index.insert(image.id, ii).is_some() {
                return Err(Error::Validation(format!("duplicate image id {}", image.id)));
            }
            if !(image.width > 0.0 && image.height > 0.0 && image.width.is_finite() && image.height.is_finite()) {
                return Err(Error::Validation(format!(
                    "image {} has invalid size {}x{}",
                    image.id, image.width, image.height
                )));
            }
            for (oi, inst) in image.instances.iter().enumerate() {
                if inst.image_id != image.id {
                    return Err(Error::Reference(format!(
                        "instance {} claims image {} but is listed under image {}",
                        inst.id, inst.image_id, image.id
                    )));
                }
                if inst.category.0 >= vocab.num_objects() {
                    return Err(Error::Reference(format!(
                        "instance {} has category index {} outside vocabulary",
                        inst.id, inst.category.0
                    )));
                }
                if let Some(v) = &inst.visual {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Validation(format!(
                            "instance {} has non-finite visual feature",
                            inst.id
                        )));
                    }
                }
                if instance_index.insert(inst.id, (ii, oi)).is_some() {
                    return Err(Error::Validation(format!("duplicate instance id {}", inst.id)));
                }
            }
            for t in &image.triples {
                if t.image_id != image.id {
                    return Err(Error::Reference(format!(
                        "triple ({}, {}) claims image {} but is listed under image {}",
                        t.subject, t.object, t.image_id, image.id
                    )));
                }
                for id in [t.subject, t.object] {
                    if image.instance(id).is_none() {
                        return Err(Error::Reference(format!(
                            "instance {id} referenced by a triple in image {} does not exist",
                            image.id
                        )));
                    }
                }
                if t.subject == t.object {
                    return Err(Error::Validation(format!(
                        "triple in image {} relates instance {} to itself",
                        image.id, t.subject
                    )));
                }
                if t.predicate.is_background() || t.predicate.0 >= vocab.num_predicates() {
                    return Err(Error::Reference(format!(
                        "triple in image {} has invalid predicate index {}",
                        image.id, t.predicate.0
                    )));
                }
            }
        }
        Ok(Self {
            vocab,
            images,
            instance_index,
            image_index,
        })
    }

    pub fn vocab(&self) -> &CategoryVocab {
        &self.vocab
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn image(&self, id: ImageId) -> Option<&Image> {
        self.image_index.get(&id).map(|&i| &self.images[i])
    }

    pub fn image_position(&self, id: ImageId) -> Option<usize> {
        self.image_index.get(&id).copied()
    }

    pub fn instance(&self, id: InstanceId) -> Option<&ObjectInstance> {
        self.instance_index
            .get(&id)
            .map(|&(ii, oi)| &self.images[ii].instances[oi])
    }

    pub fn triples(&self) -> impl Iterator<Item = &RelationTriple> {
        self.images.iter().flat_map(|img| img.triples.iter())
    }

    pub fn num_triples(&self) -> usize {
        self.images.iter().map(|i| i.triples.len()).sum()
    }

    pub fn has_visual_features(&self) -> bool {
        self.images
            .iter()
            .flat_map(|i| &i.instances)
            .all(|inst| inst.visual.is_some())
    }

    /// Triple counts indexed by predicate id (background slot stays 0).
    pub fn predicate_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.vocab.num_predicates()];
        for t in self.triples() {
            counts[t.predicate.0] += 1;
        }
        counts
    }

    /// `(subject category, predicate, object category)` of a triple.
    pub fn combination(&self, t: &RelationTriple) -> Option<(CategoryId, PredicateId, CategoryId)> {
        let s = self.instance(t.subject)?;
        let o = self.instance(t.object)?;
        Some((s.category, t.predicate, o.category))
    }

    pub fn combinations(&self) -> HashSet<(CategoryId, PredicateId, CategoryId)> {
        self.triples().filter_map(|t| self.combination(t)).collect()
    }

    /// Images containing at least one triple of each predicate, in dataset order.
    pub fn images_by_predicate(&self) -> BTreeMap<PredicateId, Vec<ImageId>> {
        let mut pools: BTreeMap<PredicateId, Vec<ImageId>> = BTreeMap::new();
        for img in &self.images {
            let mut seen = HashSet::new();
            for t in &img.triples {
                if seen.insert(t.predicate) {
                    pools.entry(t.predicate).or_default().push(img.id);
                }
            }
        }
        pools
    }

    /// Keeps only the listed images, preserving dataset order.
    pub fn subset(&self, keep: &HashSet<ImageId>) -> Result<Dataset> {
        let images = self
            .images
            .iter()
            .filter(|img| keep.contains(&img.id))
            .cloned()
            .collect();
        Dataset::new(self.vocab.clone(), images)
    }

    /// Keeps every image but only the triples accepted by `keep`.
    pub fn filter_triples(&self, mut keep: impl FnMut(&RelationTriple) -> bool) -> Result<Dataset> {
        let images = self
            .images
            .iter()
            .map(|img| {
                let mut img = img.clone();
                img.triples.retain(|t| keep(t));
                img
            })
            .collect();
        Dataset::new(self.vocab.clone(), images)
    }

    /// Attaches visual features by instance id. Every instance must be covered.
    pub fn attach_features(&mut self, dim: usize, features: &HashMap<u64, Vec<f32>>) -> Result<()> {
        for img in &mut self.images {
            for inst in &mut img.instances {
                let v = features.get(&inst.id.0).ok_or_else(|| {
                    Error::Reference(format!("no visual feature for instance {}", inst.id))
                })?;
                if v.len() != dim {
                    return Err(Error::Dimension {
                        what: format!("visual feature of instance {}", inst.id),
                        expected: dim,
                        found: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Validation(format!(
                        "instance {} has non-finite visual feature",
                        inst.id
                    )));
                }
                inst.visual = Some(v.clone());
            }
        }
        Ok(())
    }
}
