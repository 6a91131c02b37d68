//! Seeded synthetic long-tail scene graphs.
//!
//! Object categories fall into groups. Every predicate owns a (subject
//! group, object group) pair and a preferred direction from subject to
//! object, so the label is recoverable from features plus geometry.
//! Predicates sharing a group pair differ only by direction, and their
//! frequencies follow a Zipf law, which makes head predicates crowd out
//! tail ones on ambiguous pairs.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::schema::io;
use crate::schema::{
    CategoryId, CategoryVocab, Dataset, EmbeddingTable, FeatureDims, Image, ImageId, InstanceId, ObjectInstance, PredicateId,
    RelationTriple,
};

pub const VOCAB_FILE: &str = "vocab.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const FEATURES_FILE: &str = "features.vcf";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const UNSEEN_FILE: &str = "unseen.json";

pub type Combination = (CategoryId, PredicateId, CategoryId);

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_images: usize,
    pub n_test_images: usize,
    pub n_object_categories: usize,
    pub n_groups: usize,
    /// Distinct (subject group, object group) pairs that predicates use.
    pub n_group_pairs: usize,
    pub n_predicates: usize,
    pub zipf_exponent: f64,
    /// Instance noise around each category's feature mean.
    pub feature_spread: f64,
    /// Offset of category means around their group mean.
    pub category_spread: f64,
    pub word_spread: f64,
    pub angle_noise_deg: f64,
    pub visual_dim: usize,
    pub spatial_dim: usize,
    pub word_dim: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Category combinations withheld from training and planted in test.
    pub n_unseen: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 2000,
            n_test_images: 2000,
            n_object_categories: 30,
            n_groups: 5,
            n_group_pairs: 25,
            n_predicates: 50,
            zipf_exponent: 1.0,
            feature_spread: 0.6,
            category_spread: 0.5,
            word_spread: 0.3,
            angle_noise_deg: 20.0,
            visual_dim: 32,
            spatial_dim: 16,
            word_dim: 16,
            image_width: 800.0,
            image_height: 600.0,
            min_instances: 3,
            max_instances: 8,
            n_unseen: 20,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn feature_dims(&self) -> FeatureDims {
        FeatureDims {
            visual: self.visual_dim,
            spatial: self.spatial_dim,
            word: self.word_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_images", self.n_images),
            ("n_test_images", self.n_test_images),
            ("n_object_categories", self.n_object_categories),
            ("n_groups", self.n_groups),
            ("n_group_pairs", self.n_group_pairs),
            ("n_predicates", self.n_predicates),
            ("visual_dim", self.visual_dim),
            ("word_dim", self.word_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        self.feature_dims().validate()?;
        if self.n_groups > self.n_object_categories {
            return Err(Error::Config("more groups than object categories".into()));
        }
        if self.n_group_pairs > self.n_groups * self.n_groups {
            return Err(Error::Config(format!(
                "{} group pairs requested but only {} exist",
                self.n_group_pairs,
                self.n_groups * self.n_groups
            )));
        }
        for (name, v) in [
            ("zipf_exponent", self.zipf_exponent),
            ("feature_spread", self.feature_spread),
            ("category_spread", self.category_spread),
            ("word_spread", self.word_spread),
            ("angle_noise_deg", self.angle_noise_deg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.image_width >= 400.0 && self.image_height >= 400.0) {
            return Err(Error::Config("images must be at least 400x400".into()));
        }
        if self.min_instances < 2 || self.max_instances < self.min_instances {
            return Err(Error::Config("need 2 <= min_instances <= max_instances".into()));
        }
        if self.n_unseen > self.n_test_images {
            return Err(Error::Config(format!(
                "{} unseen combinations need at least as many test images",
                self.n_unseen
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub vocab: CategoryVocab,
    /// Both datasets carry their visual features.
    pub train: Dataset,
    pub test: Dataset,
    /// Word vectors per object category, in category order.
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub unseen: Vec<Combination>,
}

impl SynthOutput {
    pub fn embedding_table(&self) -> Result<EmbeddingTable> {
        EmbeddingTable::new(self.embeddings.iter().map(|(_, v)| v.clone()).collect())
    }
}

struct Signature {
    subject_group: usize,
    object_group: usize,
    angle: f64,
}

struct World<'a> {
    config: &'a SynthConfig,
    groups: Vec<Vec<CategoryId>>,
    signatures: Vec<Signature>,
    category_means: Vec<Vec<f64>>,
    noise: Normal<f64>,
    angle_noise: Normal<f64>,
    next_instance: u64,
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_cat = config.n_object_categories;
    let categories: Vec<String> = (0..n_cat).map(|c| format!("obj_{c:02}")).collect();
    let predicates: Vec<String> = (0..config.n_predicates).map(|p| format!("pred_{p:02}")).collect();
    let vocab = CategoryVocab::new(categories.clone(), predicates)?;

    // category c belongs to group c % n_groups
    let mut groups = vec![Vec::new(); config.n_groups];
    for c in 0..n_cat {
        groups[c % config.n_groups].push(CategoryId(c));
    }

    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let gaussian = |rng: &mut ChaCha8Rng, dim: usize, scale: f64| -> Vec<f64> {
        (0..dim).map(|_| unit.sample(rng) * scale).collect()
    };

    let mut pairs: Vec<(usize, usize)> = (0..config.n_groups)
        .flat_map(|a| (0..config.n_groups).map(move |b| (a, b)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(config.n_group_pairs);
    let n_angles = config.n_predicates.div_ceil(config.n_group_pairs);
    let rotation = rng.random_range(0.0..TAU);
    let signatures: Vec<Signature> = (0..config.n_predicates)
        .map(|r| {
            let (subject_group, object_group) = pairs[r % config.n_group_pairs];
            Signature {
                subject_group,
                object_group,
                angle: rotation + TAU * (r / config.n_group_pairs) as f64 / n_angles as f64,
            }
        })
        .collect();

    let visual_group: Vec<Vec<f64>> = (0..config.n_groups).map(|_| gaussian(&mut rng, config.visual_dim, 1.0)).collect();
    let word_group: Vec<Vec<f64>> = (0..config.n_groups).map(|_| gaussian(&mut rng, config.word_dim, 1.0)).collect();
    let mut category_means = Vec::with_capacity(n_cat);
    let mut embeddings = Vec::with_capacity(n_cat);
    for (c, name) in categories.iter().enumerate() {
        let g = c % config.n_groups;
        let off = gaussian(&mut rng, config.visual_dim, config.category_spread);
        category_means.push(visual_group[g].iter().zip(off).map(|(a, b)| a + b).collect());
        let off = gaussian(&mut rng, config.word_dim, config.word_spread);
        embeddings.push((name.clone(), word_group[g].iter().zip(off).map(|(a, b)| a + b).collect()));
    }

    let unseen = pick_unseen(config, &groups, &signatures, &mut rng)?;
    let forbidden: HashSet<Combination> = unseen.iter().copied().collect();

    let weights: Vec<f64> = (0..config.n_predicates)
        .map(|r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent))
        .collect();
    let zipf = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("zipf weights: {e}")))?;

    let mut world = World {
        config,
        groups,
        signatures,
        category_means,
        noise: Normal::new(0.0, config.feature_spread).map_err(|e| Error::Config(e.to_string()))?,
        angle_noise: Normal::new(0.0, config.angle_noise_deg.to_radians())
            .map_err(|e| Error::Config(e.to_string()))?,
        next_instance: 0,
    };

    let mut train_images = Vec::with_capacity(config.n_images);
    for i in 0..config.n_images {
        train_images.push(world.image(ImageId(i as u64), None, &forbidden, &zipf, &mut rng)?);
    }
    let mut test_images = Vec::with_capacity(config.n_test_images);
    for i in 0..config.n_test_images {
        let id = ImageId((config.n_images + i) as u64);
        test_images.push(world.image(id, unseen.get(i).copied(), &HashSet::new(), &zipf, &mut rng)?);
    }
    Ok(SynthOutput {
        train: Dataset::new(vocab.clone(), train_images)?,
        test: Dataset::new(vocab.clone(), test_images)?,
        vocab,
        embeddings,
        unseen,
    })
}

/// Withholds combinations while keeping at least one allowed combination
/// per predicate.
fn pick_unseen(
    config: &SynthConfig,
    groups: &[Vec<CategoryId>],
    signatures: &[Signature],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Combination>> {
    let mut all = Vec::new();
    for (r, sig) in signatures.iter().enumerate() {
        for &s in &groups[sig.subject_group] {
            for &o in &groups[sig.object_group] {
                all.push((s, PredicateId(r + 1), o));
            }
        }
    }
    let mut left: Vec<usize> = signatures
        .iter()
        .map(|s| groups[s.subject_group].len() * groups[s.object_group].len())
        .collect();
    let capacity: usize = left.iter().map(|n| n - 1).sum();
    if config.n_unseen > capacity {
        return Err(Error::Config(format!(
            "{} unseen combinations requested but at most {capacity} can be withheld",
            config.n_unseen
        )));
    }
    all.shuffle(rng);
    let mut out = Vec::with_capacity(config.n_unseen);
    for c in all {
        if out.len() == config.n_unseen {
            break;
        }
        let p = c.1 .0 - 1;
        if left[p] > 1 {
            left[p] -= 1;
            out.push(c);
        }
    }
    Ok(out)
}

impl World<'_> {
    fn instance(&mut self, image_id: ImageId, category: CategoryId, bbox: BoundingBox, rng: &mut ChaCha8Rng) -> ObjectInstance {
        let visual = self.category_means[category.0]
            .iter()
            .map(|m| (m + self.noise.sample(rng)) as f32)
            .collect();
        let id = InstanceId(self.next_instance);
        self.next_instance += 1;
        ObjectInstance {
            id,
            image_id,
            category,
            bbox,
            visual: Some(visual),
        }
    }

    fn image(
        &mut self,
        id: ImageId,
        planted: Option<Combination>,
        forbidden: &HashSet<Combination>,
        zipf: &WeightedIndex<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Image> {
        let cfg = self.config;
        let (w, h) = (cfg.image_width, cfg.image_height);
        let n_inst = rng.random_range(cfg.min_instances..=cfg.max_instances);
        let n_triples = rng.random_range(1..=n_inst / 2);
        let mut instances = Vec::with_capacity(n_inst);
        let mut triples = Vec::with_capacity(n_triples);
        for t in 0..n_triples {
            let (s_cat, pred, o_cat) = match planted {
                Some(c) if t == 0 => c,
                _ => {
                    let p = PredicateId(zipf.sample(rng) + 1);
                    let sig = &self.signatures[p.0 - 1];
                    loop {
                        let s = *self.groups[sig.subject_group].choose(rng).expect("non-empty group");
                        let o = *self.groups[sig.object_group].choose(rng).expect("non-empty group");
                        if !forbidden.contains(&(s, p, o)) {
                            break (s, p, o);
                        }
                    }
                }
            };
            let angle = self.signatures[pred.0 - 1].angle + self.angle_noise.sample(rng);
            let (sb, ob) = place_pair(angle, w, h, rng)?;
            let s = self.instance(id, s_cat, sb, rng);
            let o = self.instance(id, o_cat, ob, rng);
            triples.push(RelationTriple {
                image_id: id,
                subject: s.id,
                object: o.id,
                predicate: pred,
            });
            instances.push(s);
            instances.push(o);
        }
        while instances.len() < n_inst {
            let cat = CategoryId(rng.random_range(0..cfg.n_object_categories));
            let bw = rng.random_range(30.0..120.0);
            let bh = rng.random_range(30.0..120.0);
            let x = rng.random_range(0.0..w - bw);
            let y = rng.random_range(0.0..h - bh);
            let b = BoundingBox::new(x, y, x + bw, y + bh)?;
            instances.push(self.instance(id, cat, b, rng));
        }
        Ok(Image {
            id,
            width: w,
            height: h,
            instances,
            triples,
        })
    }
}

/// Subject and object boxes with the object in direction `angle` from the
/// subject, distinct areas and low overlap, translated to a random spot
/// inside the image.
fn place_pair(angle: f64, w: f64, h: f64, rng: &mut ChaCha8Rng) -> Result<(BoundingBox, BoundingBox)> {
    let (sw, sh) = (rng.random_range(40.0..140.0), rng.random_range(40.0..140.0));
    let ratio: f64 = if rng.random_bool(0.5) {
        rng.random_range(0.3..0.7)
    } else {
        rng.random_range(1.45..3.0)
    };
    let aspect: f64 = rng.random_range(0.8..1.25);
    let (ow, oh) = (sw * ratio.sqrt() * aspect, sh * ratio.sqrt() / aspect);
    let dist = rng.random_range(1.4..2.4) * 0.5 * ((sw * sh).sqrt() + (ow * oh).sqrt());
    let (dx, dy) = (dist * angle.cos(), dist * angle.sin());
    // box centers relative to the subject center
    let left = (-sw / 2.0).min(dx - ow / 2.0);
    let right = (sw / 2.0).max(dx + ow / 2.0);
    let top = (-sh / 2.0).min(dy - oh / 2.0);
    let bottom = (sh / 2.0).max(dy + oh / 2.0);
    let shrink = ((w - 2.0) / (right - left)).min((h - 2.0) / (bottom - top)).min(1.0);
    let cx = rng.random_range(0.0..(w - 1.0 - (right - left) * shrink).max(f64::MIN_POSITIVE)) - left * shrink;
    let cy = rng.random_range(0.0..(h - 1.0 - (bottom - top) * shrink).max(f64::MIN_POSITIVE)) - top * shrink;
    let make = |x: f64, y: f64, bw: f64, bh: f64| {
        let (x, y, bw, bh) = (cx + x * shrink, cy + y * shrink, bw * shrink, bh * shrink);
        BoundingBox::new((x - bw / 2.0).max(0.0), (y - bh / 2.0).max(0.0), x + bw / 2.0, y + bh / 2.0)
    };
    Ok((make(0.0, 0.0, sw, sh)?, make(dx, dy, ow, oh)?))
}

#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub vocab: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub features: PathBuf,
    pub embeddings: PathBuf,
    pub unseen: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            vocab: dir.join(VOCAB_FILE),
            train: dir.join(TRAIN_FILE),
            test: dir.join(TEST_FILE),
            features: dir.join(FEATURES_FILE),
            embeddings: dir.join(EMBEDDINGS_FILE),
            unseen: dir.join(UNSEEN_FILE),
        }
    }

    pub fn all(&self) -> [&Path; 6] {
        [&self.vocab, &self.train, &self.test, &self.features, &self.embeddings, &self.unseen]
    }
}

/// Writes the standard file set. One feature file covers train and test.
pub fn write_output(dir: &Path, out: &SynthOutput) -> Result<SynthFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SynthFiles::in_dir(dir);
    io::write_vocab(&files.vocab, &out.vocab)?;
    io::write_annotations(&files.train, &out.train)?;
    io::write_annotations(&files.test, &out.test)?;
    let records = out
        .train
        .images()
        .iter()
        .chain(out.test.images())
        .flat_map(|img| &img.instances)
        .map(|inst| (inst.id.0, inst.visual.as_deref().unwrap_or(&[])));
    io::write_features(&files.features, visual_dim(out), records)?;
    io::write_embeddings(&files.embeddings, out.embeddings.iter().map(|(t, v)| (t.as_str(), v.as_slice())))?;
    let unseen: Vec<[&str; 3]> = out
        .unseen
        .iter()
        .map(|(s, p, o)| [out.vocab.category_name(*s), out.vocab.predicate_name(*p), out.vocab.category_name(*o)])
        .collect();
    let json = serde_json::to_string_pretty(&unseen).map_err(|e| Error::Validation(e.to_string()))?;
    std::fs::write(&files.unseen, json + "\n").map_err(|e| Error::io(&files.unseen, e))?;
    Ok(files)
}

fn visual_dim(out: &SynthOutput) -> usize {
    out.train
        .images()
        .iter()
        .flat_map(|i| &i.instances)
        .find_map(|i| i.visual.as_ref().map(Vec::len))
        .unwrap_or(0)
}
