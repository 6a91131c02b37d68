use std::collections::HashMap;

use super::spatial::spatial_encode;
use super::{CategoryId, CategoryVocab, Dataset, ImageId, InstanceId, ObjectInstance};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::par::Exec;

/// Block sizes of a component feature `[visual; spatial; word]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureDims {
    pub visual: usize,
    pub spatial: usize,
    pub word: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        Self {
            visual: 4096,
            spatial: 128,
            word: 200,
        }
    }
}

impl FeatureDims {
    pub fn total(&self) -> usize {
        self.visual + self.spatial + self.word
    }

    pub fn validate(&self) -> Result<()> {
        if self.visual == 0 || self.word == 0 || self.spatial == 0 || !self.spatial.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "feature dims must be positive and spatial a multiple of 16: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Word vectors, one per object category.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Vocabulary("embedding table is empty".into()));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Dimension {
                    what: format!("embedding of category {i}"),
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Vocabulary(format!("embedding of category {i} is not finite")));
            }
        }
        Ok(Self { dim, vectors })
    }

    /// Resolves every category of `vocab` against a token table. A category
    /// name found verbatim uses that vector; otherwise the vectors of its
    /// whitespace-separated tokens are averaged.
    pub fn from_tokens(tokens: &HashMap<String, Vec<f64>>, vocab: &CategoryVocab) -> Result<Self> {
        let mut vectors = Vec::with_capacity(vocab.num_objects());
        let mut missing = Vec::new();
        for name in vocab.object_categories() {
            if let Some(v) = tokens.get(name) {
                vectors.push(v.clone());
                continue;
            }
            let hits: Vec<&Vec<f64>> = name.split_whitespace().filter_map(|t| tokens.get(t)).collect();
            if hits.is_empty() {
                missing.push(name.clone());
                continue;
            }
            let mut mean = vec![0.0; hits[0].len()];
            for h in &hits {
                for (m, x) in mean.iter_mut().zip(h.iter()) {
                    *m += x;
                }
            }
            let n = hits.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            vectors.push(mean);
        }
        if !missing.is_empty() {
            return Err(Error::Vocabulary(format!(
                "no embedding token for categories: {}",
                missing.join(", ")
            )));
        }
        Self::new(vectors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, category: CategoryId) -> Option<&[f64]> {
        self.vectors.get(category.0).map(Vec::as_slice)
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

/// One object instance with its assembled feature `[visual; spatial; word]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualComponent {
    pub instance_id: InstanceId,
    pub image_id: ImageId,
    pub category: CategoryId,
    pub bbox: BoundingBox,
    dims: FeatureDims,
    feature: Vec<f64>,
}

impl VisualComponent {
    pub fn from_parts(
        instance_id: InstanceId,
        image_id: ImageId,
        category: CategoryId,
        bbox: BoundingBox,
        visual: &[f64],
        spatial: &[f64],
        word: &[f64],
    ) -> Self {
        let dims = FeatureDims {
            visual: visual.len(),
            spatial: spatial.len(),
            word: word.len(),
        };
        let mut feature = Vec::with_capacity(dims.total());
        feature.extend_from_slice(visual);
        feature.extend_from_slice(spatial);
        feature.extend_from_slice(word);
        Self {
            instance_id,
            image_id,
            category,
            bbox,
            dims,
            feature,
        }
    }

    pub fn dims(&self) -> FeatureDims {
        self.dims
    }

    pub fn feature(&self) -> &[f64] {
        &self.feature
    }

    pub fn visual(&self) -> &[f64] {
        &self.feature[..self.dims.visual]
    }

    pub fn spatial(&self) -> &[f64] {
        &self.feature[self.dims.visual..self.dims.visual + self.dims.spatial]
    }

    pub fn word(&self) -> &[f64] {
        &self.feature[self.dims.visual + self.dims.spatial..]
    }
}

/// Builds the component feature of `inst` inside an image of size
/// `image_w` x `image_h`.
pub fn assemble_component(
    inst: &ObjectInstance,
    image_w: f64,
    image_h: f64,
    embeddings: &EmbeddingTable,
    dims: FeatureDims,
) -> Result<VisualComponent> {
    let visual = inst
        .visual
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("instance {} has no visual feature", inst.id)))?;
    if visual.len() != dims.visual {
        return Err(Error::Dimension {
            what: format!("visual feature of instance {}", inst.id),
            expected: dims.visual,
            found: visual.len(),
        });
    }
    let word = embeddings.get(inst.category).ok_or_else(|| {
        Error::Vocabulary(format!("no embedding for category index {}", inst.category.0))
    })?;
    if word.len() != dims.word {
        return Err(Error::Dimension {
            what: "word embedding".into(),
            expected: dims.word,
            found: word.len(),
        });
    }
    let visual: Vec<f64> = visual.iter().map(|&x| f64::from(x)).collect();
    let spatial = spatial_encode(&inst.bbox, image_w, image_h, dims.spatial);
    Ok(VisualComponent::from_parts(
        inst.id,
        inst.image_id,
        inst.category,
        inst.bbox,
        &visual,
        &spatial.values,
        word,
    ))
}

/// Ordered pair of component features, the classifier input.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeature {
    pub subject: Vec<f64>,
    pub object: Vec<f64>,
}

impl PairFeature {
    pub fn new(subject: &VisualComponent, object: &VisualComponent) -> Self {
        Self {
            subject: subject.feature().to_vec(),
            object: object.feature().to_vec(),
        }
    }
}

/// Assembled components of every instance in a dataset.
#[derive(Debug, Clone)]
pub struct ComponentStore {
    dims: FeatureDims,
    components: HashMap<InstanceId, VisualComponent>,
}

impl ComponentStore {
    pub fn build(dataset: &Dataset, embeddings: &EmbeddingTable, dims: FeatureDims) -> Result<Self> {
        Self::build_with(dataset, embeddings, dims, Exec::default())
    }

    pub fn build_with(
        dataset: &Dataset,
        embeddings: &EmbeddingTable,
        dims: FeatureDims,
        exec: Exec,
    ) -> Result<Self> {
        dims.validate()?;
        let per_image = exec.map(dataset.images(), |img| {
            img.instances
                .iter()
                .map(|inst| assemble_component(inst, img.width, img.height, embeddings, dims))
                .collect::<Result<Vec<_>>>()
        });
        let mut components = HashMap::new();
        for comps in per_image {
            for c in comps? {
                components.insert(c.instance_id, c);
            }
        }
        Ok(Self { dims, components })
    }

    pub fn dims(&self) -> FeatureDims {
        self.dims
    }

    pub fn get(&self, id: InstanceId) -> Result<&VisualComponent> {
        self.components
            .get(&id)
            .ok_or_else(|| Error::Reference(format!("no component for instance {id}")))
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(dv: usize, fill: f32) -> ObjectInstance {
        ObjectInstance {
            id: InstanceId(7),
            image_id: ImageId(1),
            category: CategoryId(0),
            bbox: BoundingBox::new(10.0, 10.0, 30.0, 50.0).unwrap(),
            visual: Some(vec![fill; dv]),
        }
    }

    fn table(dw: usize) -> EmbeddingTable {
        EmbeddingTable::new(vec![vec![0.5; dw], vec![-0.5; dw]]).unwrap()
    }

    #[test]
    fn dims_add_up() {
        let dims = FeatureDims { visual: 64, spatial: 128, word: 200 };
        let c = assemble_component(&instance(64, 1.0), 100.0, 100.0, &table(200), dims).unwrap();
        assert_eq!(c.feature().len(), 392);
        assert_eq!(FeatureDims::default().total(), 4424);
        let c = assemble_component(&instance(4096, 1.0), 100.0, 100.0, &table(200), FeatureDims::default()).unwrap();
        assert_eq!(c.feature().len(), 4424);
        assert!(c.feature().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn layout_order() {
        let dims = FeatureDims { visual: 8, spatial: 16, word: 4 };
        let c = assemble_component(&instance(8, 0.0), 100.0, 100.0, &table(4), dims).unwrap();
        assert!(c.visual().iter().all(|&x| x == 0.0));
        assert_eq!(c.word(), &[0.5; 4]);
        assert_eq!(c.spatial().len(), 16);
    }

    #[test]
    fn errors() {
        let dims = FeatureDims { visual: 8, spatial: 16, word: 4 };
        let mut inst = instance(8, 0.0);
        inst.category = CategoryId(5);
        assert!(matches!(
            assemble_component(&inst, 100.0, 100.0, &table(4), dims),
            Err(Error::Vocabulary(_))
        ));
        inst.visual = None;
        assert!(assemble_component(&inst, 100.0, 100.0, &table(4), dims).is_err());
        let inst = instance(9, 0.0);
        assert!(matches!(
            assemble_component(&inst, 100.0, 100.0, &table(4), dims),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn multi_word_names_average_tokens() {
        let vocab = CategoryVocab::new(vec!["trash can".into(), "dog".into()], vec!["on".into()]).unwrap();
        let mut tokens = HashMap::new();
        tokens.insert("trash".to_string(), vec![1.0, 2.0]);
        tokens.insert("can".to_string(), vec![3.0, 6.0]);
        tokens.insert("dog".to_string(), vec![0.0, 1.0]);
        let t = EmbeddingTable::from_tokens(&tokens, &vocab).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get(CategoryId(0)).unwrap(), &[2.0, 4.0]);
        tokens.remove("dog");
        let err = EmbeddingTable::from_tokens(&tokens, &vocab).unwrap_err();
        assert!(err.to_string().contains("dog"), "{err}");
    }
}
