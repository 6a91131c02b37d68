//! Capacity-bounded visual components dictionary.
//!
//! When full, an insert evicts one uniformly random entry. Retrieval is an
//! exhaustive scan over the category groups, ranked by box shape similarity
//! with ties going to the earliest inserted entry.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::schema::{CategoryId, EmbeddingTable, InstanceId, VisualComponent};

pub const DEFAULT_CAPACITY: usize = 3000;
pub const DEFAULT_NEIGHBORS: usize = 3;

#[derive(Debug, Clone)]
struct Entry {
    seq: u64,
    component: VisualComponent,
}

#[derive(Debug, Clone)]
pub struct ComponentDictionary {
    capacity: usize,
    slots: Vec<Entry>,
    by_category: BTreeMap<CategoryId, Vec<usize>>,
    by_instance: HashMap<InstanceId, usize>,
    next_seq: u64,
    evictions: u64,
    rng: ChaCha8Rng,
}

impl ComponentDictionary {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("dictionary capacity must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            slots: Vec::with_capacity(capacity.min(1 << 16)),
            by_category: BTreeMap::new(),
            by_instance: HashMap::new(),
            next_seq: 0,
            evictions: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn contains(&self, id: InstanceId) -> bool {
        self.by_instance.contains_key(&id)
    }

    /// Inserts `component`, returning the evicted entry if the dictionary was
    /// full. Re-inserting an instance already present refreshes it in place.
    pub fn insert(&mut self, component: VisualComponent) -> Option<VisualComponent> {
        let seq = self.next_seq;
        self.next_seq += 1;
        if let Some(&slot) = self.by_instance.get(&component.instance_id) {
            self.unlink(slot);
            self.slots[slot] = Entry { seq, component };
            self.link(slot);
            return None;
        }
        if self.slots.len() < self.capacity {
            self.slots.push(Entry { seq, component });
            self.link(self.slots.len() - 1);
            return None;
        }
        let slot = self.rng.random_range(0..self.slots.len());
        self.unlink(slot);
        let old = std::mem::replace(&mut self.slots[slot], Entry { seq, component });
        self.link(slot);
        self.evictions += 1;
        Some(old.component)
    }

    fn link(&mut self, slot: usize) {
        let c = &self.slots[slot].component;
        self.by_category.entry(c.category).or_default().push(slot);
        self.by_instance.insert(c.instance_id, slot);
    }

    fn unlink(&mut self, slot: usize) {
        let c = &self.slots[slot].component;
        if let Some(list) = self.by_category.get_mut(&c.category) {
            if let Some(pos) = list.iter().position(|&s| s == slot) {
                list.swap_remove(pos);
            }
            if list.is_empty() {
                self.by_category.remove(&c.category);
            }
        }
        self.by_instance.remove(&c.instance_id);
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> Vec<&VisualComponent> {
        let mut e: Vec<&Entry> = self.slots.iter().collect();
        e.sort_by_key(|e| e.seq);
        e.into_iter().map(|e| &e.component).collect()
    }

    fn best_in<'a>(
        &'a self,
        query: &VisualComponent,
        categories: impl Iterator<Item = CategoryId>,
    ) -> Option<&'a VisualComponent> {
        let mut best: Option<(f64, u64, &Entry)> = None;
        for cat in categories {
            let Some(list) = self.by_category.get(&cat) else {
                continue;
            };
            for &slot in list {
                let e = &self.slots[slot];
                if e.component.instance_id == query.instance_id {
                    continue;
                }
                let sim = query.bbox.shape_similarity(&e.component.bbox);
                let better = match best {
                    None => true,
                    Some((bs, bseq, _)) => sim > bs || (sim == bs && e.seq < bseq),
                };
                if better {
                    best = Some((sim, e.seq, e));
                }
            }
        }
        best.map(|(_, _, e)| &e.component)
    }

    /// Best same-category replacement for `query`.
    pub fn query_intra(&self, query: &VisualComponent) -> Option<&VisualComponent> {
        self.best_in(query, std::iter::once(query.category))
    }

    /// Best replacement among the neighbor categories of `query`'s category.
    pub fn query_inter(
        &self,
        query: &VisualComponent,
        index: &CategoryNeighborIndex,
    ) -> Option<&VisualComponent> {
        self.best_in(query, index.neighbors(query.category).iter().map(|(c, _)| *c))
    }

    /// Checks that the grouping indices agree with the stored entries.
    pub fn check_consistency(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.slots.len() > self.capacity {
            return fail(format!("{} entries exceed capacity {}", self.slots.len(), self.capacity));
        }
        let grouped: usize = self.by_category.values().map(Vec::len).sum();
        if grouped != self.slots.len() || self.by_instance.len() != self.slots.len() {
            return fail("index sizes disagree with entry count".into());
        }
        for (cat, list) in &self.by_category {
            for &slot in list {
                if self.slots[slot].component.category != *cat {
                    return fail(format!("slot {slot} filed under wrong category"));
                }
            }
        }
        for (id, &slot) in &self.by_instance {
            if self.slots[slot].component.instance_id != *id {
                return fail(format!("instance {id} points to wrong slot"));
            }
        }
        Ok(())
    }
}

/// Per category, the most similar other categories by cosine similarity of
/// their word embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryNeighborIndex {
    neighbors: Vec<Vec<(CategoryId, f64)>>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
}

impl CategoryNeighborIndex {
    pub fn neighbors(&self, category: CategoryId) -> &[(CategoryId, f64)] {
        self.neighbors.get(category.0).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Keeps the `k` most similar categories per category (self excluded, ties by
/// lower index). With `min_similarity`, neighbors below it are dropped.
pub fn build_neighbor_index(
    embeddings: &EmbeddingTable,
    k: usize,
    min_similarity: Option<f64>,
) -> Result<CategoryNeighborIndex> {
    if k == 0 {
        return Err(Error::Config("neighbor count k must be at least 1".into()));
    }
    let vecs = embeddings.vectors();
    for (i, v) in vecs.iter().enumerate() {
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::Vocabulary(format!("embedding of category {i} has zero norm")));
        }
    }
    let neighbors = (0..vecs.len())
        .map(|i| {
            let mut ranked: Vec<(CategoryId, f64)> = (0..vecs.len())
                .filter(|&j| j != i)
                .map(|j| (CategoryId(j), cosine(&vecs[i], &vecs[j])))
                .filter(|&(_, s)| min_similarity.is_none_or(|t| s >= t))
                .collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.truncate(k);
            ranked
        })
        .collect();
    Ok(CategoryNeighborIndex { neighbors })
}
