use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::settings::Profile;

#[derive(Debug, Parser)]
#[command(name = "dec", version, about = "Decomposition/composition augmentation experiments for scene-graph predicates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic long-tail dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Predicate frequency table.
    Stats {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Classify every training triple as subject/object/not an anchor.
    Anchors {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Build the composed corpus from the training set.
    Compose {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Write a few-shot, zero-shot or full split.
    Split {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        kind: SplitArg,
        /// Images per predicate for few-shot splits.
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Train the predicate classifier.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hyper: Hyper,
        /// Balanced sampling plus the composed corpus and KL term.
        #[arg(long)]
        dec: bool,
        /// Use this corpus instead of composing one (implies nothing without --dec).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Restrict training images with a split file.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hyper: Hyper,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Few-shot splits restrict training frequencies, zero-shot ones the test triples.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Compare a baseline and a DeC checkpoint per predicate.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hyper: Hyper,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long = "dec")]
        dec_checkpoint: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Repeat a recorded run into a new directory and compare artifacts.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    FewShot,
    ZeroShot,
    Full,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Directory receiving every output file.
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub profile: Profile,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory with the standard file names (vocab.json, train.jsonl, ...).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Hyper {
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub capacity: Option<usize>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub min_similarity: Option<f64>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Predicates per balanced batch (N).
    #[arg(long)]
    pub n_predicates: Option<usize>,
    /// Images per predicate (K).
    #[arg(long)]
    pub k_images: Option<usize>,
    #[arg(long = "lambda")]
    pub kl_weight: Option<f64>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub triple_cap: Option<usize>,
    #[arg(long)]
    pub negative_ratio: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub spatial_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub test_images: Option<usize>,
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub predicates: Option<usize>,
    #[arg(long)]
    pub zipf: Option<f64>,
    #[arg(long)]
    pub unseen: Option<usize>,
    #[arg(long)]
    pub visual_dim: Option<usize>,
    #[arg(long)]
    pub word_dim: Option<usize>,
}

fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key, v.to_string()));
    }
}

impl Common {
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut o = Vec::new();
        push(&mut o, "seed", &self.seed);
        o
    }
}

impl Hyper {
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut o = Vec::new();
        push(&mut o, "delta", &self.delta);
        push(&mut o, "capacity", &self.capacity);
        push(&mut o, "neighbors", &self.neighbors);
        push(&mut o, "min_similarity", &self.min_similarity);
        push(&mut o, "budget", &self.budget);
        push(&mut o, "n_predicates", &self.n_predicates);
        push(&mut o, "k_images", &self.k_images);
        push(&mut o, "kl_weight", &self.kl_weight);
        push(&mut o, "learning_rate", &self.learning_rate);
        push(&mut o, "iterations", &self.iterations);
        push(&mut o, "triple_cap", &self.triple_cap);
        push(&mut o, "negative_ratio", &self.negative_ratio);
        push(&mut o, "hidden", &self.hidden);
        push(&mut o, "spatial_dim", &self.spatial_dim);
        o
    }
}

impl SynthArgs {
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut o = Vec::new();
        push(&mut o, "synth_images", &self.images);
        push(&mut o, "synth_test_images", &self.test_images);
        push(&mut o, "synth_categories", &self.categories);
        push(&mut o, "synth_predicates", &self.predicates);
        push(&mut o, "synth_zipf", &self.zipf);
        push(&mut o, "synth_unseen", &self.unseen);
        push(&mut o, "synth_visual_dim", &self.visual_dim);
        push(&mut o, "synth_word_dim", &self.word_dim);
        o
    }
}
