//! Anchor relation selection: a triple is decomposable when its two boxes
//! barely overlap and their areas differ; the smaller participant is the
//! unessential element that gets replaced.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::schema::{Dataset, RelationTriple};

/// Default IoU threshold.
pub const DEFAULT_DELTA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposed {
    Subject,
    Object,
    NotAnchor,
}

/// Which slot of a composed triple was replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Subject,
    Object,
}

impl Decomposed {
    pub fn slot(self) -> Option<Slot> {
        match self {
            Decomposed::Subject => Some(Slot::Subject),
            Decomposed::Object => Some(Slot::Object),
            Decomposed::NotAnchor => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorDecision {
    pub triple: RelationTriple,
    pub decomposed: Decomposed,
    pub iou: f64,
    pub subject_area: f64,
    pub object_area: f64,
}

impl AnchorDecision {
    pub fn is_anchor(&self) -> bool {
        self.decomposed != Decomposed::NotAnchor
    }

    /// Not an anchor only because the two areas are equal.
    pub fn is_area_tie(&self, delta: f64) -> bool {
        self.iou < delta && self.subject_area == self.object_area
    }
}

/// Applies the selection rule from precomputed quantities.
pub fn decide(iou: f64, subject_area: f64, object_area: f64, delta: f64) -> Decomposed {
    if iou < delta && subject_area < object_area {
        Decomposed::Subject
    } else if iou < delta && subject_area > object_area {
        Decomposed::Object
    } else {
        Decomposed::NotAnchor
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Config(format!("delta must lie in [0, 1], got {delta}")));
    }
    Ok(())
}

pub fn select_and_decompose(
    triple: &RelationTriple,
    dataset: &Dataset,
    delta: f64,
) -> Result<AnchorDecision> {
    check_delta(delta)?;
    let lookup = |id| {
        dataset
            .instance(id)
            .ok_or_else(|| Error::Reference(format!("instance {id} not found")))
    };
    let s = lookup(triple.subject)?;
    let o = lookup(triple.object)?;
    let iou = s.bbox.iou(&o.bbox);
    let subject_area = s.bbox.area();
    let object_area = o.bbox.area();
    Ok(AnchorDecision {
        triple: *triple,
        decomposed: decide(iou, subject_area, object_area, delta),
        iou,
        subject_area,
        object_area,
    })
}

/// Result of scanning a dataset.
#[derive(Debug, Clone, Default)]
pub struct AnchorScan {
    /// Anchors in dataset order (image, then triple order).
    pub anchors: Vec<AnchorDecision>,
    /// Low-overlap triples skipped because both areas are equal.
    pub skipped_ties: usize,
    pub total_triples: usize,
}

pub fn scan_anchors(dataset: &Dataset, delta: f64) -> Result<AnchorScan> {
    scan_anchors_with(dataset, delta, Exec::default())
}

pub fn scan_anchors_with(dataset: &Dataset, delta: f64, exec: Exec) -> Result<AnchorScan> {
    check_delta(delta)?;
    let triples: Vec<&RelationTriple> = dataset.triples().collect();
    let decisions = exec.map(&triples, |t| select_and_decompose(t, dataset, delta));
    let mut scan = AnchorScan {
        total_triples: triples.len(),
        ..Default::default()
    };
    for d in decisions {
        let d = d?;
        if d.is_anchor() {
            scan.anchors.push(d);
        } else if d.is_area_tie(delta) {
            scan.skipped_ties += 1;
        }
    }
    if scan.skipped_ties > 0 {
        log::debug!("{} equal-area triples skipped as non-anchors", scan.skipped_ties);
    }
    Ok(scan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::schema::*;

    fn dataset(boxes: &[([f64; 4], [f64; 4])]) -> Dataset {
        let vocab = CategoryVocab::new(vec!["a".into()], vec!["p".into()]).unwrap();
        let images = boxes
            .iter()
            .enumerate()
            .map(|(i, (s, o))| {
                let img = ImageId(i as u64);
                let mk = |id: u64, b: &[f64; 4]| ObjectInstance {
                    id: InstanceId(id),
                    image_id: img,
                    category: CategoryId(0),
                    bbox: BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(),
                    visual: None,
                };
                Image {
                    id: img,
                    width: 100.0,
                    height: 100.0,
                    instances: vec![mk(2 * i as u64, s), mk(2 * i as u64 + 1, o)],
                    triples: vec![RelationTriple {
                        image_id: img,
                        subject: InstanceId(2 * i as u64),
                        object: InstanceId(2 * i as u64 + 1),
                        predicate: PredicateId(1),
                    }],
                }
            })
            .collect();
        Dataset::new(vocab, images).unwrap()
    }

    #[test]
    fn hand_cases() {
        let ds = dataset(&[
            ([0.0, 0.0, 2.0, 2.0], [10.0, 10.0, 20.0, 20.0]),
            ([0.0, 0.0, 10.0, 10.0], [2.0, 2.0, 8.0, 8.0]),
            ([0.0, 0.0, 5.0, 5.0], [50.0, 50.0, 55.0, 55.0]),
        ]);
        let t: Vec<_> = ds.triples().copied().collect();
        let d0 = select_and_decompose(&t[0], &ds, 0.3).unwrap();
        assert_eq!(d0.decomposed, Decomposed::Subject);
        assert_eq!((d0.iou, d0.subject_area, d0.object_area), (0.0, 4.0, 100.0));
        let d1 = select_and_decompose(&t[1], &ds, 0.3).unwrap();
        assert_eq!(d1.iou, 0.36);
        assert_eq!(d1.decomposed, Decomposed::NotAnchor);
        assert_eq!(select_and_decompose(&t[2], &ds, 0.3).unwrap().decomposed, Decomposed::NotAnchor);

        let scan = scan_anchors(&ds, 0.3).unwrap();
        assert_eq!(scan.anchors.len(), 1);
        assert_eq!(scan.anchors[0], d0);
        assert_eq!(scan.skipped_ties, 1);
        assert_eq!(scan.total_triples, 3);
    }

    #[test]
    fn heavy_overlap_gives_no_anchors() {
        let ds = dataset(&[
            ([0.0, 0.0, 10.0, 10.0], [1.0, 1.0, 10.0, 10.0]),
            ([0.0, 0.0, 50.0, 50.0], [0.0, 0.0, 40.0, 50.0]),
        ]);
        assert!(scan_anchors(&ds, 0.3).unwrap().anchors.is_empty());
    }

    #[test]
    fn object_decomposed_when_smaller() {
        assert_eq!(decide(0.1, 10.0, 5.0, 0.3), Decomposed::Object);
        assert_eq!(decide(0.3, 10.0, 5.0, 0.3), Decomposed::NotAnchor);
    }

    #[test]
    fn bad_delta_and_dangling() {
        let ds = dataset(&[([0.0, 0.0, 2.0, 2.0], [10.0, 10.0, 20.0, 20.0])]);
        let t = *ds.triples().next().unwrap();
        assert!(select_and_decompose(&t, &ds, 1.5).is_err());
        let mut dangling = t;
        dangling.object = InstanceId(999);
        assert!(matches!(select_and_decompose(&dangling, &ds, 0.3), Err(Error::Reference(_))));
    }
}
