//! Relation composition: the unessential element of an anchor triple is
//! swapped for a retrieved component while the anchor's predicate label is
//! kept.
//!
//! The swap happens at the pair level. The composed slot takes the visual
//! block of the replacement, keeps the spatial block of the element it
//! replaces (the replacement is placed where the removed object stood) and
//! uses the word embedding of the replacement's category.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{AnchorDecision, Decomposed, Slot};
use crate::dictionary::{CategoryNeighborIndex, ComponentDictionary};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::schema::{
    CategoryId, ComponentStore, Dataset, EmbeddingTable, ImageId, InstanceId, PairFeature,
    PredicateId, RelationTriple, VisualComponent,
};

/// Desk-scale corpus budget.
pub const DEFAULT_BUDGET: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionKind {
    Intra,
    Inter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedRelation {
    pub anchor: RelationTriple,
    pub decomposed_slot: Slot,
    pub replacement: InstanceId,
    pub kind: CompositionKind,
    pub predicate_label: PredicateId,
    /// `(subject category, object category)` after composition.
    pub composed_categories: (CategoryId, CategoryId),
    /// Classifier input in (subject, object) order.
    pub pair_feature: PairFeature,
}

impl ComposedRelation {
    pub fn kept_feature(&self) -> &[f64] {
        match self.decomposed_slot {
            Slot::Subject => &self.pair_feature.object,
            Slot::Object => &self.pair_feature.subject,
        }
    }

    pub fn composed_feature(&self) -> &[f64] {
        match self.decomposed_slot {
            Slot::Subject => &self.pair_feature.subject,
            Slot::Object => &self.pair_feature.object,
        }
    }

    /// `(subject category, predicate, object category)` of the new triple.
    pub fn combination(&self) -> (CategoryId, PredicateId, CategoryId) {
        (self.composed_categories.0, self.predicate_label, self.composed_categories.1)
    }
}

/// Composes one triple from an anchor decision. `subject` and `object` are the
/// anchor's own components.
pub fn compose(
    decision: &AnchorDecision,
    subject: &VisualComponent,
    object: &VisualComponent,
    replacement: &VisualComponent,
    kind: CompositionKind,
    embeddings: &EmbeddingTable,
    neighbors: &CategoryNeighborIndex,
) -> Result<ComposedRelation> {
    let slot = decision.decomposed.slot().ok_or_else(|| {
        Error::Validation("cannot compose from a triple that is not an anchor".into())
    })?;
    if subject.instance_id != decision.triple.subject || object.instance_id != decision.triple.object {
        return Err(Error::Validation("anchor components do not match the triple".into()));
    }
    let (removed, kept) = match slot {
        Slot::Subject => (subject, object),
        Slot::Object => (object, subject),
    };
    match kind {
        CompositionKind::Intra if replacement.category != removed.category => {
            return Err(Error::Validation(format!(
                "intra-class replacement has category {} but the removed element has {}",
                replacement.category.0, removed.category.0
            )));
        }
        CompositionKind::Inter
            if !neighbors
                .neighbors(removed.category)
                .iter()
                .any(|(c, _)| *c == replacement.category) =>
        {
            return Err(Error::Validation(format!(
                "inter-class replacement category {} is not a neighbor of {}",
                replacement.category.0, removed.category.0
            )));
        }
        _ => {}
    }
    let word = embeddings.get(replacement.category).ok_or_else(|| {
        Error::Vocabulary(format!("no embedding for category index {}", replacement.category.0))
    })?;
    if replacement.visual().len() != removed.visual().len() || word.len() != removed.word().len() {
        return Err(Error::Dimension {
            what: "replacement component".into(),
            expected: removed.feature().len(),
            found: replacement.visual().len() + removed.spatial().len() + word.len(),
        });
    }
    let mut composed = Vec::with_capacity(removed.feature().len());
    composed.extend_from_slice(replacement.visual());
    composed.extend_from_slice(removed.spatial());
    composed.extend_from_slice(word);
    let kept = kept.feature().to_vec();
    let (pair_feature, composed_categories) = match slot {
        Slot::Subject => (
            PairFeature { subject: composed, object: kept },
            (replacement.category, object.category),
        ),
        Slot::Object => (
            PairFeature { subject: kept, object: composed },
            (subject.category, replacement.category),
        ),
    };
    Ok(ComposedRelation {
        anchor: decision.triple,
        decomposed_slot: slot,
        replacement: replacement.instance_id,
        kind,
        predicate_label: decision.triple.predicate,
        composed_categories,
        pair_feature,
    })
}

/// Checks the invariants of a composed relation against its sources.
pub fn validate(
    item: &ComposedRelation,
    dataset: &Dataset,
    components: &ComponentStore,
    embeddings: &EmbeddingTable,
) -> Result<()> {
    let fail = |m: &str| Err(Error::Validation(format!("composed relation {:?}: {m}", item.anchor)));
    if item.predicate_label != item.anchor.predicate {
        return fail("label differs from the anchor predicate");
    }
    let (s_cat, _, o_cat) = dataset
        .combination(&item.anchor)
        .ok_or_else(|| Error::Reference(format!("anchor {:?} not in dataset", item.anchor)))?;
    let (cs, co) = item.composed_categories;
    let slot_differs = match item.decomposed_slot {
        Slot::Subject => (cs != s_cat, co != o_cat),
        Slot::Object => (co != o_cat, cs != s_cat),
    };
    match item.kind {
        CompositionKind::Intra if slot_differs != (false, false) => {
            return fail("intra composition changed a category")
        }
        CompositionKind::Inter if slot_differs != (true, false) => {
            return fail("inter composition must change exactly the decomposed slot's category")
        }
        _ => {}
    }
    let (removed_id, kept_id) = match item.decomposed_slot {
        Slot::Subject => (item.anchor.subject, item.anchor.object),
        Slot::Object => (item.anchor.object, item.anchor.subject),
    };
    let removed = components.get(removed_id)?;
    let kept = components.get(kept_id)?;
    let repl = components.get(item.replacement)?;
    if item.kept_feature() != kept.feature() {
        return fail("kept element's feature was modified");
    }
    let dims = removed.dims();
    let f = item.composed_feature();
    if f.len() != dims.total() {
        return fail("composed feature has the wrong dimension");
    }
    let (v, rest) = f.split_at(dims.visual);
    let (s, w) = rest.split_at(dims.spatial);
    let composed_cat = match item.decomposed_slot {
        Slot::Subject => cs,
        Slot::Object => co,
    };
    if v != repl.visual() {
        return fail("visual block is not the replacement's");
    }
    if s != removed.spatial() {
        return fail("spatial block is not the removed element's");
    }
    if Some(w) != embeddings.get(composed_cat) {
        return fail("word block is not the composed category's embedding");
    }
    if item.replacement == removed_id && item.kind == CompositionKind::Inter {
        return fail("inter composition reused the removed element");
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub intra: usize,
    pub inter: usize,
    pub per_predicate: BTreeMap<PredicateId, usize>,
    /// Anchors for which neither kind found a candidate.
    pub skipped_anchors: usize,
    pub anchors_visited: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub items: Vec<ComposedRelation>,
    pub stats: CorpusStats,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn from_items(items: Vec<ComposedRelation>) -> Self {
        let mut stats = CorpusStats::default();
        for it in &items {
            stats.record(it);
        }
        Self { items, stats }
    }

    /// Category combinations of the corpus that do not occur among the
    /// annotated triples of `dataset`.
    pub fn novel_combinations(&self, dataset: &Dataset) -> HashSet<(CategoryId, PredicateId, CategoryId)> {
        let seen = dataset.combinations();
        self.items
            .iter()
            .map(ComposedRelation::combination)
            .filter(|c| !seen.contains(c))
            .collect()
    }
}

impl CorpusStats {
    fn record(&mut self, item: &ComposedRelation) {
        match item.kind {
            CompositionKind::Intra => self.intra += 1,
            CompositionKind::Inter => self.inter += 1,
        }
        *self.per_predicate.entry(item.predicate_label).or_default() += 1;
    }
}

/// Everything composition needs besides the anchors themselves.
pub struct CompositionContext<'a> {
    pub dataset: &'a Dataset,
    pub components: &'a ComponentStore,
    pub dictionary: &'a ComponentDictionary,
    pub neighbors: &'a CategoryNeighborIndex,
    pub embeddings: &'a EmbeddingTable,
}

const CHUNK: usize = 512;

/// Visits anchors in seeded random order, attempting one intra- and one
/// inter-class composition each, until `budget` items exist.
pub fn compose_corpus(
    ctx: &CompositionContext<'_>,
    anchors: &[AnchorDecision],
    budget: usize,
    seed: u64,
) -> Result<Corpus> {
    compose_corpus_with(ctx, anchors, budget, seed, Exec::default())
}

pub fn compose_corpus_with(
    ctx: &CompositionContext<'_>,
    anchors: &[AnchorDecision],
    budget: usize,
    seed: u64,
    exec: Exec,
) -> Result<Corpus> {
    let mut order: Vec<&AnchorDecision> = anchors.iter().filter(|a| a.is_anchor()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut corpus = Corpus::default();
    for chunk in order.chunks(CHUNK) {
        if corpus.items.len() >= budget {
            break;
        }
        let attempts = exec.map(chunk, |a| compose_anchor(ctx, a));
        for attempt in attempts {
            if corpus.items.len() >= budget {
                break;
            }
            corpus.stats.anchors_visited += 1;
            let [intra, inter] = attempt?;
            if intra.is_none() && inter.is_none() {
                corpus.stats.skipped_anchors += 1;
            }
            for item in [intra, inter].into_iter().flatten() {
                if corpus.items.len() >= budget {
                    break;
                }
                corpus.stats.record(&item);
                corpus.items.push(item);
            }
        }
    }
    Ok(corpus)
}

fn compose_anchor(
    ctx: &CompositionContext<'_>,
    decision: &AnchorDecision,
) -> Result<[Option<ComposedRelation>; 2]> {
    let subject = ctx.components.get(decision.triple.subject)?;
    let object = ctx.components.get(decision.triple.object)?;
    let removed = match decision.decomposed {
        Decomposed::Subject => subject,
        Decomposed::Object => object,
        Decomposed::NotAnchor => return Ok([None, None]),
    };
    let build = |repl: Option<&VisualComponent>, kind| {
        repl.map(|r| compose(decision, subject, object, r, kind, ctx.embeddings, ctx.neighbors))
            .transpose()
    };
    Ok([
        build(ctx.dictionary.query_intra(removed), CompositionKind::Intra)?,
        build(ctx.dictionary.query_inter(removed, ctx.neighbors), CompositionKind::Inter)?,
    ])
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusRecord {
    image_id: u64,
    subject: u64,
    object: u64,
    slot: Slot,
    replacement: u64,
    kind: CompositionKind,
    label: String,
}

/// Writes the corpus manifest, one composition per line. Features are not
/// stored; [`read_corpus`] re-derives them.
pub fn write_corpus(path: &Path, corpus: &Corpus, dataset: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for it in &corpus.items {
        let rec = CorpusRecord {
            image_id: it.anchor.image_id.0,
            subject: it.anchor.subject.0,
            object: it.anchor.object.0,
            slot: it.decomposed_slot,
            replacement: it.replacement.0,
            kind: it.kind,
            label: dataset.vocab().predicate_name(it.predicate_label).to_string(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::io(path, e.into()))?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_corpus(
    path: &Path,
    dataset: &Dataset,
    components: &ComponentStore,
    embeddings: &EmbeddingTable,
    neighbors: &CategoryNeighborIndex,
) -> Result<Corpus> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let predicate = dataset
            .vocab()
            .predicate(&rec.label)
            .ok_or_else(|| bad(format!("unknown predicate {:?}", rec.label)))?;
        let triple = RelationTriple {
            image_id: ImageId(rec.image_id),
            subject: InstanceId(rec.subject),
            object: InstanceId(rec.object),
            predicate,
        };
        let exists = dataset
            .image(triple.image_id)
            .is_some_and(|img| img.triples.contains(&triple));
        if !exists {
            return Err(bad(format!("anchor {triple:?} is not an annotated triple")));
        }
        let subject = components.get(triple.subject)?;
        let object = components.get(triple.object)?;
        let decision = AnchorDecision {
            triple,
            decomposed: match rec.slot {
                Slot::Subject => Decomposed::Subject,
                Slot::Object => Decomposed::Object,
            },
            iou: subject.bbox.iou(&object.bbox),
            subject_area: subject.bbox.area(),
            object_area: object.bbox.area(),
        };
        let repl = components.get(InstanceId(rec.replacement))?;
        let item = compose(&decision, subject, object, repl, rec.kind, embeddings, neighbors)
            .map_err(|e| bad(e.to_string()))?;
        items.push(item);
    }
    Ok(Corpus::from_items(items))
}
