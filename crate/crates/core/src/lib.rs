//! Decomposition and composition augmentation for scene-graph relation
//! triples.
//!
//! Anchor triples whose participants barely overlap are split into an
//! essential and an unessential element. The unessential element is swapped
//! for a similarly shaped component from a bounded dictionary, either of the
//! same category (intra-class) or of a semantically close one (inter-class).
//! The composed triples keep the anchor's predicate and feed a predicate
//! classifier trained on balanced batches, which is evaluated with
//! graph-constrained mean Recall@K.

pub mod anchor;
pub mod composer;
pub mod dictionary;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod par;
pub mod pipeline;
pub mod sampler;
pub mod schema;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::BoundingBox;
pub use par::Exec;
