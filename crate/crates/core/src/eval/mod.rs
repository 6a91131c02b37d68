//! PredCls evaluation: constrained R@K, per-predicate mean R@K and the
//! few-shot / zero-shot split generators.

mod split;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use split::{few_shot_split, full_split, verify_zero_shot, zero_shot_split, SplitKind, SplitSpec};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::schema::{ComponentStore, Dataset, ImageId, InstanceId, PairFeature, PredicateId, RelationTriple};
use crate::trainer::{forward, ClassifierParams};

/// K values reported by default.
pub const REPORT_KS: [usize; 3] = [20, 50, 100];
/// Size of the tail predicate set used for the long-tail comparison.
pub const TAIL_SIZE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject: InstanceId,
    pub object: InstanceId,
    pub predicate: PredicateId,
    pub score: f64,
}

/// Ranked predictions and ground truth of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: ImageId,
    predictions: Vec<Prediction>,
    ground_truth: Vec<RelationTriple>,
}

impl EvalRecord {
    /// Checks ordering, finiteness and the one-predicate-per-pair constraint.
    pub fn new(image_id: ImageId, predictions: Vec<Prediction>, ground_truth: Vec<RelationTriple>) -> Result<Self> {
        let mut pairs = HashSet::new();
        for (i, p) in predictions.iter().enumerate() {
            if !p.score.is_finite() {
                return Err(Error::Validation(format!("image {image_id}: non-finite score at rank {i}")));
            }
            if i > 0 && predictions[i - 1].score < p.score {
                return Err(Error::Validation(format!("image {image_id}: predictions not sorted at rank {i}")));
            }
            if !pairs.insert((p.subject, p.object)) {
                return Err(Error::Validation(format!(
                    "image {image_id}: pair ({}, {}) predicted more than once",
                    p.subject, p.object
                )));
            }
        }
        Ok(Self {
            image_id,
            predictions,
            ground_truth,
        })
    }

    pub fn predictions(&self) -> &[Prediction] {
        &self.predictions
    }

    pub fn ground_truth(&self) -> &[RelationTriple] {
        &self.ground_truth
    }

    /// Ground-truth triples hit within the top `k` predictions.
    fn matched(&self, k: usize) -> Vec<bool> {
        let top: HashSet<(InstanceId, InstanceId, PredicateId)> = self
            .predictions
            .iter()
            .take(k)
            .map(|p| (p.subject, p.object, p.predicate))
            .collect();
        self.ground_truth
            .iter()
            .map(|t| top.contains(&(t.subject, t.object, t.predicate)))
            .collect()
    }
}

/// Fraction of ground truth recovered in the top `k`. `None` for images
/// without ground truth, which are left out of every aggregate.
pub fn recall_at_k(record: &EvalRecord, k: usize) -> Option<f64> {
    if record.ground_truth.is_empty() {
        return None;
    }
    let hits = record.matched(k).into_iter().filter(|m| *m).count();
    Some(hits as f64 / record.ground_truth.len() as f64)
}

/// Mean per-image R@K over images that have ground truth.
pub fn overall_recall(records: &[EvalRecord], k: usize) -> Option<f64> {
    let values: Vec<f64> = records.iter().filter_map(|r| recall_at_k(r, k)).collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredicateRecall {
    pub matched: usize,
    pub total: usize,
}

impl PredicateRecall {
    pub fn recall(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }
}

/// What to do with predicates that the test ground truth never mentions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AbsentPredicates {
    #[default]
    Exclude,
    /// Count them as zero recall.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanRecall {
    pub k: usize,
    pub mean: f64,
    /// Counts for every predicate that occurs in the ground truth.
    pub per_predicate: BTreeMap<PredicateId, PredicateRecall>,
}

impl MeanRecall {
    pub fn recall_of(&self, p: PredicateId) -> Option<f64> {
        self.per_predicate.get(&p).map(PredicateRecall::recall)
    }

    /// Unweighted mean over `predicates`, skipping those without ground truth.
    pub fn subset_mean(&self, predicates: &[PredicateId]) -> Option<f64> {
        let v: Vec<f64> = predicates.iter().filter_map(|p| self.recall_of(*p)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Per-predicate recall pooled over images, averaged without weights.
pub fn mean_recall_at_k(records: &[EvalRecord], k: usize) -> MeanRecall {
    mean_recall_with(records, k, AbsentPredicates::Exclude, &[])
}

/// `universe` lists the predicates that count under [`AbsentPredicates::Zero`].
pub fn mean_recall_with(
    records: &[EvalRecord],
    k: usize,
    absent: AbsentPredicates,
    universe: &[PredicateId],
) -> MeanRecall {
    let mut per_predicate: BTreeMap<PredicateId, PredicateRecall> = BTreeMap::new();
    for r in records {
        for (t, hit) in r.ground_truth.iter().zip(r.matched(k)) {
            let e = per_predicate
                .entry(t.predicate)
                .or_insert(PredicateRecall { matched: 0, total: 0 });
            e.total += 1;
            e.matched += hit as usize;
        }
    }
    let mut values: Vec<f64> = per_predicate.values().map(PredicateRecall::recall).collect();
    if absent == AbsentPredicates::Zero {
        let missing = universe.iter().filter(|p| !per_predicate.contains_key(p)).count();
        values.extend(std::iter::repeat_n(0.0, missing));
    }
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    };
    MeanRecall { k, mean, per_predicate }
}

/// Ranks every ordered instance pair of every image. Each pair gets its best
/// non-background predicate, so the graph constraint holds by construction.
pub fn predict(params: &ClassifierParams, dataset: &Dataset, components: &ComponentStore) -> Result<Vec<EvalRecord>> {
    predict_with(params, dataset, components, Exec::default())
}

pub fn predict_with(
    params: &ClassifierParams,
    dataset: &Dataset,
    components: &ComponentStore,
    exec: Exec,
) -> Result<Vec<EvalRecord>> {
    exec.map(dataset.images(), |img| {
        let mut preds = Vec::new();
        for s in &img.instances {
            for o in &img.instances {
                if s.id == o.id {
                    continue;
                }
                let pair = PairFeature::new(components.get(s.id)?, components.get(o.id)?);
                let probs = forward(params, &pair)?;
                let (best, score) = probs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
                if best == 0 {
                    return Err(Error::Numeric(format!("no finite predicate score for pair ({}, {})", s.id, o.id)));
                }
                preds.push(Prediction {
                    subject: s.id,
                    object: o.id,
                    predicate: PredicateId(best),
                    score,
                });
            }
        }
        preds.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.subject.cmp(&b.subject))
                .then(a.object.cmp(&b.object))
        });
        EvalRecord::new(img.id, preds, img.triples.clone())
    })
    .into_iter()
    .collect()
}

/// Rarest `n` annotated predicates by training frequency, ties to the lower id.
pub fn tail_predicates(train: &Dataset, n: usize) -> Vec<PredicateId> {
    let counts = train.predicate_counts();
    let mut preds: Vec<PredicateId> = train.vocab().annotated_predicates().collect();
    preds.sort_by_key(|p| (counts[p.0], p.0));
    preds.truncate(n);
    preds
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredicateRow {
    pub predicate: String,
    pub train_frequency: usize,
    pub recall_at_100: Option<f64>,
}

/// One row per annotated predicate, most frequent first.
pub fn per_predicate_table(train: &Dataset, recall_at_100: &MeanRecall) -> Vec<PredicateRow> {
    let counts = train.predicate_counts();
    let mut preds: Vec<PredicateId> = train.vocab().annotated_predicates().collect();
    preds.sort_by_key(|p| (std::cmp::Reverse(counts[p.0]), p.0));
    preds
        .into_iter()
        .map(|p| PredicateRow {
            predicate: train.vocab().predicate_name(p).to_string(),
            train_frequency: counts[p.0],
            recall_at_100: recall_at_100.recall_of(p),
        })
        .collect()
}

/// Predicates without test ground truth get an empty recall cell.
pub fn write_per_predicate_csv(path: &Path, rows: &[PredicateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["predicate", "train_frequency", "recall_at_100"])
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        let recall = r.recall_at_100.map(|v| format!("{v:.6}")).unwrap_or_default();
        w.write_record([r.predicate.as_str(), &r.train_frequency.to_string(), &recall])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}
