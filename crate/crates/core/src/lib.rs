//! Text semantic segmentation with cross-segment fusion.
//!
//! Documents are split into sentences, packed into length-bounded segments
//! with a separator token after every sentence, encoded by a small
//! transformer, and each separator is classified as a paragraph boundary or
//! not after being fused with a document-level summary vector. A recursive,
//! model-driven chunk splitter and a cosine top-k index sit on top for
//! retrieval use.

pub mod chunker;
pub mod csfm;
pub mod encoder;
pub mod error;
pub mod model;
pub mod par;
pub mod tensor;
pub mod textprep;
pub mod training;

mod blobfile;

pub use error::{Error, Result};
pub use model::SegmenterModel;
pub use par::Parallelism;
