//! Hyperparameters resolved from a profile, an optional `key = value` file
//! and command-line flags, in that order of precedence (flags win).

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use clap::ValueEnum;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub delta: f64,
    pub capacity: usize,
    pub neighbors: usize,
    pub min_similarity: Option<f64>,
    pub budget: usize,
    pub n_predicates: usize,
    pub k_images: usize,
    pub kl_weight: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub triple_cap: usize,
    pub negative_ratio: f64,
    pub hidden: Option<usize>,
    pub spatial_dim: usize,
    pub shots: usize,
    pub tail_size: usize,
    pub rare_size: usize,
    pub synth_images: usize,
    pub synth_test_images: usize,
    pub synth_categories: usize,
    pub synth_predicates: usize,
    pub synth_zipf: f64,
    pub synth_unseen: usize,
    pub synth_visual_dim: usize,
    pub synth_word_dim: usize,
}

impl Settings {
    pub fn for_profile(profile: Profile) -> Self {
        let synth = dec_core::synth::SynthConfig::default();
        let desk = Self {
            seed: 0,
            delta: dec_core::anchor::DEFAULT_DELTA,
            capacity: dec_core::dictionary::DEFAULT_CAPACITY,
            neighbors: dec_core::dictionary::DEFAULT_NEIGHBORS,
            min_similarity: None,
            budget: dec_core::composer::DEFAULT_BUDGET,
            n_predicates: dec_core::sampler::DEFAULT_PREDICATES_PER_BATCH,
            k_images: dec_core::sampler::DEFAULT_IMAGES_PER_PREDICATE,
            kl_weight: 1.0,
            learning_rate: 0.5,
            iterations: 5000,
            triple_cap: 256,
            negative_ratio: 1.0,
            hidden: None,
            spatial_dim: synth.spatial_dim,
            shots: 5,
            tail_size: dec_core::eval::TAIL_SIZE,
            rare_size: 5,
            synth_images: synth.n_images,
            synth_test_images: synth.n_test_images,
            synth_categories: synth.n_object_categories,
            synth_predicates: synth.n_predicates,
            synth_zipf: synth.zipf_exponent,
            synth_unseen: synth.n_unseen,
            synth_visual_dim: synth.visual_dim,
            synth_word_dim: synth.word_dim,
        };
        match profile {
            Profile::Desk => desk,
            Profile::Paper => Self {
                iterations: 130_000,
                spatial_dim: 128,
                ..desk
            },
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, UsageError>
        where
            T::Err: Display,
        {
            v.trim()
                .parse()
                .map_err(|e| UsageError(format!("bad value {v:?} for {key}: {e}")))
        }
        fn optional<T: FromStr>(key: &str, v: &str) -> Result<Option<T>, UsageError>
        where
            T::Err: Display,
        {
            if v.trim() == "none" {
                Ok(None)
            } else {
                parse(key, v).map(Some)
            }
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "capacity" => self.capacity = parse(key, value)?,
            "neighbors" => self.neighbors = parse(key, value)?,
            "min_similarity" => self.min_similarity = optional(key, value)?,
            "budget" => self.budget = parse(key, value)?,
            "n_predicates" => self.n_predicates = parse(key, value)?,
            "k_images" => self.k_images = parse(key, value)?,
            "kl_weight" => self.kl_weight = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "triple_cap" => self.triple_cap = parse(key, value)?,
            "negative_ratio" => self.negative_ratio = parse(key, value)?,
            "hidden" => self.hidden = optional(key, value)?,
            "spatial_dim" => self.spatial_dim = parse(key, value)?,
            "shots" => self.shots = parse(key, value)?,
            "tail_size" => self.tail_size = parse(key, value)?,
            "rare_size" => self.rare_size = parse(key, value)?,
            "synth_images" => self.synth_images = parse(key, value)?,
            "synth_test_images" => self.synth_test_images = parse(key, value)?,
            "synth_categories" => self.synth_categories = parse(key, value)?,
            "synth_predicates" => self.synth_predicates = parse(key, value)?,
            "synth_zipf" => self.synth_zipf = parse(key, value)?,
            "synth_unseen" => self.synth_unseen = parse(key, value)?,
            "synth_visual_dim" => self.synth_visual_dim = parse(key, value)?,
            "synth_word_dim" => self.synth_word_dim = parse(key, value)?,
            _ => return Err(UsageError(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Every setting as text, sorted by key.
    pub fn echo(&self) -> BTreeMap<String, String> {
        fn opt<T: Display>(v: &Option<T>) -> String {
            v.as_ref().map_or("none".to_string(), T::to_string)
        }
        [
            ("seed", self.seed.to_string()),
            ("delta", self.delta.to_string()),
            ("capacity", self.capacity.to_string()),
            ("neighbors", self.neighbors.to_string()),
            ("min_similarity", opt(&self.min_similarity)),
            ("budget", self.budget.to_string()),
            ("n_predicates", self.n_predicates.to_string()),
            ("k_images", self.k_images.to_string()),
            ("kl_weight", self.kl_weight.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("iterations", self.iterations.to_string()),
            ("triple_cap", self.triple_cap.to_string()),
            ("negative_ratio", self.negative_ratio.to_string()),
            ("hidden", opt(&self.hidden)),
            ("spatial_dim", self.spatial_dim.to_string()),
            ("shots", self.shots.to_string()),
            ("tail_size", self.tail_size.to_string()),
            ("rare_size", self.rare_size.to_string()),
            ("synth_images", self.synth_images.to_string()),
            ("synth_test_images", self.synth_test_images.to_string()),
            ("synth_categories", self.synth_categories.to_string()),
            ("synth_predicates", self.synth_predicates.to_string()),
            ("synth_zipf", self.synth_zipf.to_string()),
            ("synth_unseen", self.synth_unseen.to_string()),
            ("synth_visual_dim", self.synth_visual_dim.to_string()),
            ("synth_word_dim", self.synth_word_dim.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn echo_text(&self) -> String {
        self.echo().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<(String, String)>, UsageError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            UsageError(format!("{}:{}: expected `key = value`", origin.display(), i + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
