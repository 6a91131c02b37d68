//! Run records. A manifest holds everything needed to repeat a run; it has
//! no timestamps so that repeated runs produce identical records.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Arguments after the program name, `--out` removed.
    pub args: Vec<String>,
    /// Directory relative input paths are resolved against.
    pub cwd: String,
    pub profile: String,
    pub seed: u64,
    pub settings: BTreeMap<String, String>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub status: String,
    pub error: Option<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest_all(paths: &[PathBuf], base: Option<&Path>) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            let shown = match base {
                Some(b) => p.strip_prefix(b).unwrap_or(p),
                None => p.as_path(),
            };
            Ok(FileDigest {
                path: shown.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

pub fn write(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
}

/// Drops `--out <dir>` and `--out=<dir>` from an argument list.
pub fn strip_out(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}
