//! File formats.
//!
//! * vocabulary: JSON object `{"object_categories": [..], "predicates": [..]}`
//!   (predicates without the background class).
//! * annotations: one JSON object per line, one line per image. Blank lines
//!   and lines starting with `#` are skipped.
//!   `{"image_id": 1, "width": 800, "height": 600,
//!     "instances": [{"id": 10, "category": "cup", "box": [x_t, y_t, x_b, y_b]}],
//!     "triples": [{"subject": 10, "predicate": "on", "object": 11}]}`
//! * features: `VCF1`, u32 count, u32 dim, then per instance a u64 key and
//!   `dim` f32 values, all little-endian.
//! * embeddings: one token per line followed by whitespace-separated floats.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    CategoryVocab, Dataset, EmbeddingTable, Image, ImageId, InstanceId, ObjectInstance,
    RelationTriple,
};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

pub const FEATURE_MAGIC: &[u8; 4] = b"VCF1";

#[derive(Debug, Serialize, Deserialize)]
struct VocabFile {
    object_categories: Vec<String>,
    predicates: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageRecord {
    image_id: u64,
    width: f64,
    height: f64,
    instances: Vec<InstanceRecord>,
    #[serde(default)]
    triples: Vec<TripleRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: u64,
    category: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TripleRecord {
    subject: u64,
    predicate: String,
    object: u64,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<CategoryVocab> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: VocabFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    CategoryVocab::new(file.object_categories, file.predicates)
}

pub fn write_vocab(path: &Path, vocab: &CategoryVocab) -> Result<()> {
    let file = VocabFile {
        object_categories: vocab.object_categories().to_vec(),
        predicates: vocab.predicates()[1..].to_vec(),
    };
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &file).map_err(|e| Error::io(path, e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Parses an annotation file against `vocab` without attaching features.
pub fn read_annotations(path: &Path, vocab: &CategoryVocab) -> Result<Dataset> {
    let reader = BufReader::new(open(path)?);
    let mut images = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let rec: ImageRecord = serde_json::from_str(trimmed).map_err(|e| parse_err(e.to_string()))?;
        images.push(image_from_record(rec, vocab).map_err(|e| match e {
            Error::Validation(m) => parse_err(m),
            Error::Reference(m) => Error::Reference(format!("{}:{line_no}: {m}", path.display())),
            other => other,
        })?);
    }
    Dataset::new(vocab.clone(), images)
}

fn image_from_record(rec: ImageRecord, vocab: &CategoryVocab) -> Result<Image> {
    let image_id = ImageId(rec.image_id);
    let mut instances = Vec::with_capacity(rec.instances.len());
    for inst in rec.instances {
        let category = vocab.category(&inst.category).ok_or_else(|| {
            Error::Reference(format!("unknown object category {:?}", inst.category))
        })?;
        let [x_t, y_t, x_b, y_b] = inst.bbox;
        instances.push(ObjectInstance {
            id: InstanceId(inst.id),
            image_id,
            category,
            bbox: BoundingBox::new(x_t, y_t, x_b, y_b)?,
            visual: None,
        });
    }
    let mut triples = Vec::with_capacity(rec.triples.len());
    for t in rec.triples {
        let predicate = vocab
            .predicate(&t.predicate)
            .filter(|p| !p.is_background())
            .ok_or_else(|| Error::Reference(format!("unknown predicate {:?}", t.predicate)))?;
        for id in [t.subject, t.object] {
            if !instances.iter().any(|i| i.id.0 == id) {
                return Err(Error::Reference(format!(
                    "triple references missing instance id {id}"
                )));
            }
        }
        triples.push(RelationTriple {
            image_id,
            subject: InstanceId(t.subject),
            object: InstanceId(t.object),
            predicate,
        });
    }
    Ok(Image {
        id: image_id,
        width: rec.width,
        height: rec.height,
        instances,
        triples,
    })
}

pub fn write_annotations(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    let vocab = dataset.vocab();
    for img in dataset.images() {
        let rec = ImageRecord {
            image_id: img.id.0,
            width: img.width,
            height: img.height,
            instances: img
                .instances
                .iter()
                .map(|i| InstanceRecord {
                    id: i.id.0,
                    category: vocab.category_name(i.category).to_string(),
                    bbox: i.bbox.coords(),
                })
                .collect(),
            triples: img
                .triples
                .iter()
                .map(|t| TripleRecord {
                    subject: t.subject.0,
                    predicate: vocab.predicate_name(t.predicate).to_string(),
                    object: t.object.0,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::io(path, e.into()))?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a feature file. Returns the declared dimension and the vectors by
/// instance key.
pub fn read_features(path: &Path) -> Result<(usize, HashMap<u64, Vec<f32>>)> {
    let mut buf = Vec::new();
    open(path)?.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    if buf.len() < 12 || &buf[..4] != FEATURE_MAGIC {
        return Err(bad("missing VCF1 header".into()));
    }
    let count = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let record = 8 + 4 * dim;
    let expected = 12 + count * record;
    if buf.len() != expected {
        return Err(bad(format!(
            "feature body has {} bytes, header implies {}",
            buf.len() - 12,
            expected - 12
        )));
    }
    let mut out = HashMap::with_capacity(count);
    for chunk in buf[12..].chunks_exact(record) {
        let key = u64::from_le_bytes(chunk[..8].try_into().unwrap());
        let values = chunk[8..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if out.insert(key, values).is_some() {
            return Err(bad(format!("duplicate instance key {key}")));
        }
    }
    Ok((dim, out))
}

pub fn write_features<'a>(
    path: &Path,
    dim: usize,
    records: impl IntoIterator<Item = (u64, &'a [f32])>,
) -> Result<()> {
    let records: Vec<(u64, &[f32])> = records.into_iter().collect();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(FEATURE_MAGIC).map_err(io)?;
    w.write_all(&(records.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(dim as u32).to_le_bytes()).map_err(io)?;
    for (key, values) in records {
        if values.len() != dim {
            return Err(Error::Dimension {
                what: format!("feature of instance {key}"),
                expected: dim,
                found: values.len(),
            });
        }
        w.write_all(&key.to_le_bytes()).map_err(io)?;
        for v in values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Loads annotations and, when given, attaches the visual features whose
/// dimension must equal `visual_dim`.
pub fn load_dataset(
    annotations: &Path,
    features: Option<&Path>,
    vocab: &CategoryVocab,
    visual_dim: usize,
) -> Result<Dataset> {
    let mut dataset = read_annotations(annotations, vocab)?;
    if let Some(fpath) = features {
        let (dim, table) = read_features(fpath)?;
        if dim != visual_dim {
            return Err(Error::Dimension {
                what: format!("feature file {}", fpath.display()),
                expected: visual_dim,
                found: dim,
            });
        }
        dataset.attach_features(dim, &table)?;
    }
    Ok(dataset)
}

pub fn read_embedding_tokens(path: &Path) -> Result<HashMap<String, Vec<f64>>> {
    let reader = BufReader::new(open(path)?);
    let mut out = HashMap::new();
    let mut dim = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let values = parts
            .map(|p| p.parse::<f64>().map_err(|e| bad(format!("{p:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(bad(format!("token {token:?} has no vector")));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(bad(format!("expected {d} values, found {}", values.len())))
            }
            _ => {}
        }
        out.insert(token.to_string(), values);
    }
    Ok(out)
}

pub fn load_embeddings(path: &Path, vocab: &CategoryVocab) -> Result<EmbeddingTable> {
    EmbeddingTable::from_tokens(&read_embedding_tokens(path)?, vocab)
}

/// Writes one line per `(token, vector)` with round-trippable floats.
pub fn write_embeddings<'a>(
    path: &Path,
    rows: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    let mut w = create(path)?;
    for (token, values) in rows {
        write!(w, "{token}").map_err(|e| Error::io(path, e))?;
        for v in values {
            write!(w, " {v:?}").map_err(|e| Error::io(path, e))?;
        }
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
