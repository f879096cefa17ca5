//! Dense cosine-similarity index over chunk embeddings.

use std::path::Path;

use serde_json::{json, Value};

use super::embed::{embed, EmbedderSpec};
use super::Chunk;
use crate::blobfile;
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};

pub const INDEX_FORMAT: &str = "segcross-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub embedder: EmbedderSpec,
    pub dim: usize,
    pub chunks: Vec<Chunk>,
    /// Row-major `[n_chunks x dim]`, kept at the on-disk precision so reloads are exact.
    rows: Vec<f32>,
    norms: Vec<f64>,
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

impl RetrievalIndex {
    /// Builds from precomputed rows (one per chunk).
    pub fn from_rows(embedder: EmbedderSpec, chunks: Vec<Chunk>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if chunks.is_empty() {
            return Err(Error::Empty("an index needs at least one chunk".into()));
        }
        if chunks.len() != vectors.len() {
            return Err(Error::Shape(format!("{} chunks but {} embeddings", chunks.len(), vectors.len())));
        }
        let dim = vectors.iter().map(Vec::len).max().unwrap_or(0);
        if dim == 0 {
            return Err(Error::Input("every chunk embedded to an empty vector".into()));
        }
        let mut rows = Vec::with_capacity(chunks.len() * dim);
        for (i, v) in vectors.iter().enumerate() {
            match v.len() {
                0 => rows.extend(std::iter::repeat_n(0.0, dim)),
                n if n == dim => rows.extend(v.iter().map(|&x| x as f32)),
                n => return Err(Error::Shape(format!("chunk {i} embedded to {n} values, expected {dim}"))),
            }
        }
        let norms = rows.chunks(dim).map(row_norm).collect();
        Ok(RetrievalIndex { embedder, dim, chunks, rows, norms })
    }

    /// Embeds every chunk (in parallel when enabled) and builds the index.
    pub fn build(chunks: Vec<Chunk>, embedder: EmbedderSpec, mode: Parallelism) -> Result<Self> {
        embedder.validate()?;
        let vectors = par::try_map(&chunks, mode, |c| embed(&c.text, &embedder).map(|e| e.values))?;
        Self::from_rows(embedder, chunks, vectors)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Cosine similarity against every chunk, best first; ties go to the lower chunk id.
    pub fn retrieve_topk(&self, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(Error::Input("top-k needs k >= 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Shape(format!("query has {} dims, index has {}", query.len(), self.dim)));
        }
        let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
        if qn == 0.0 || !qn.is_finite() {
            return Err(Error::Input("query embedding has zero norm".into()));
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| {
                let n = self.norms[i];
                if n == 0.0 {
                    return (i, 0.0);
                }
                let dot: f64 = self.row(i).iter().zip(query).map(|(&r, &q)| r as f64 * q).sum();
                (i, (dot / (n * qn)).clamp(-1.0, 1.0))
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Embeds `question` with the index's own embedder, then ranks.
    pub fn query(&self, question: &str, k: usize) -> Result<Vec<(usize, f64)>> {
        let e = embed(question, &self.embedder)?;
        if e.zero {
            return Err(Error::Input("question embeds to a zero vector".into()));
        }
        self.retrieve_topk(&e.values, k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = json!({
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "embedder": self.embedder,
            "dim": self.dim,
            "chunks": self.chunks,
        });
        let Value::Object(map) = manifest else { unreachable!("json! object literal") };
        blobfile::write(path, map, &self.rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut manifest, rows) = blobfile::read(path)?;
        let corrupt = |reason: String| Error::Corrupt { path: path.to_path_buf(), reason };
        if manifest.get("format").and_then(Value::as_str) != Some(INDEX_FORMAT) {
            return Err(corrupt("not an index file".into()));
        }
        let version = manifest.get("version").and_then(Value::as_u64).unwrap_or(0) as u32;
        if version != INDEX_VERSION {
            return Err(Error::UnsupportedVersion { found: version, expected: INDEX_VERSION });
        }
        let mut take = |key: &str| manifest.remove(key).ok_or_else(|| corrupt(format!("manifest lacks {key:?}")));
        let embedder: EmbedderSpec = serde_json::from_value(take("embedder")?).map_err(|e| Error::json("index embedder", e))?;
        let dim: usize = serde_json::from_value(take("dim")?).map_err(|e| Error::json("index dim", e))?;
        let chunks: Vec<Chunk> = serde_json::from_value(take("chunks")?).map_err(|e| Error::json("index chunks", e))?;
        if dim == 0 || chunks.is_empty() || rows.len() != dim * chunks.len() {
            return Err(corrupt(format!("{} values for {} chunks of dim {dim}", rows.len(), chunks.len())));
        }
        let norms = rows.chunks(dim).map(row_norm).collect();
        Ok(RetrievalIndex { embedder, dim, chunks, rows, norms })
    }
}
