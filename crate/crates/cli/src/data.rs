//! Input resolution and loading. Every file read is recorded as a run input.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dec_core::eval::SplitSpec;
use dec_core::schema::io;
use dec_core::schema::{CategoryVocab, Dataset, EmbeddingTable, FeatureDims};
use dec_core::synth::{EMBEDDINGS_FILE, FEATURES_FILE, TEST_FILE, TRAIN_FILE, VOCAB_FILE};

use crate::args::DataArgs;
use crate::commands::Run;
use crate::UsageError;

pub struct Inputs {
    data: Option<PathBuf>,
    train_path: Option<PathBuf>,
    test_path: Option<PathBuf>,
    features_path: Option<PathBuf>,
    embeddings_path: Option<PathBuf>,
    pub vocab: CategoryVocab,
    features: Option<(usize, HashMap<u64, Vec<f32>>)>,
}

fn pick(explicit: &Option<PathBuf>, data: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| data.as_ref().map(|d| d.join(name)))
}

impl Inputs {
    pub fn open(run: &mut Run, args: &DataArgs) -> Result<Self> {
        let vocab_path = pick(&args.vocab, &args.data, VOCAB_FILE)
            .ok_or_else(|| UsageError("pass --data or --vocab".into()))?;
        let vocab = io::read_vocab(&run.input(&vocab_path))?;
        Ok(Self {
            data: args.data.clone(),
            train_path: pick(&args.train, &args.data, TRAIN_FILE),
            test_path: pick(&args.test, &args.data, TEST_FILE),
            features_path: pick(&args.features, &args.data, FEATURES_FILE),
            embeddings_path: pick(&args.embeddings, &args.data, EMBEDDINGS_FILE),
            vocab,
            features: None,
        })
    }

    fn required(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
        path.clone()
            .ok_or_else(|| UsageError(format!("pass --data or --{flag}")).into())
    }

    fn load(&mut self, run: &mut Run, path: &Path, with_features: bool) -> Result<Dataset> {
        let mut ds = io::read_annotations(&run.input(path), &self.vocab)?;
        if with_features {
            let (dim, table) = self.features(run)?;
            ds.attach_features(*dim, table)?;
        }
        Ok(ds)
    }

    pub fn train(&mut self, run: &mut Run, with_features: bool) -> Result<Dataset> {
        let p = Self::required(&self.train_path, "train")?;
        self.load(run, &p, with_features)
    }

    pub fn test(&mut self, run: &mut Run, with_features: bool) -> Result<Dataset> {
        let p = Self::required(&self.test_path, "test")?;
        self.load(run, &p, with_features)
    }

    /// The test set when one was given or exists in the data directory.
    pub fn optional_test(&mut self, run: &mut Run) -> Result<Option<Dataset>> {
        match self.test_path.clone() {
            Some(p) if p.exists() || self.data.is_none() => Ok(Some(self.load(run, &p, false)?)),
            _ => Ok(None),
        }
    }

    fn features(&mut self, run: &mut Run) -> Result<&(usize, HashMap<u64, Vec<f32>>)> {
        if self.features.is_none() {
            let p = Self::required(&self.features_path, "features")?;
            self.features = Some(io::read_features(&run.input(&p))?);
        }
        Ok(self.features.as_ref().expect("loaded above"))
    }

    pub fn embeddings(&self, run: &mut Run) -> Result<EmbeddingTable> {
        let p = Self::required(&self.embeddings_path, "embeddings")?;
        Ok(io::load_embeddings(&run.input(&p), &self.vocab)?)
    }

    pub fn dims(&mut self, run: &mut Run, embeddings: &EmbeddingTable) -> Result<FeatureDims> {
        let visual = self.features(run)?.0;
        let dims = FeatureDims {
            visual,
            spatial: run.settings.spatial_dim,
            word: embeddings.dim(),
        };
        dims.validate()?;
        Ok(dims)
    }
}

pub fn read_split(run: &mut Run, path: &Path) -> Result<SplitSpec> {
    let text = std::fs::read_to_string(run.input(path)).with_context(|| format!("reading {}", path.display()))?;
    let spec: SplitSpec = serde_json::from_str(&text)
        .map_err(|e| dec_core::Error::Validation(format!("split file {}: {e}", path.display())))?;
    Ok(spec)
}
