//! Text embeddings: a seeded hashed character 3-gram bag, or an external service.

use serde::{Deserialize, Serialize};

use super::endpoint::{embed_external, EndpointConfig};
use crate::error::{Error, Result};

pub const DEFAULT_HASHED_DIM: usize = 256;
const MIN_HASHED_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    HashedNgram { dim: usize, seed: u64 },
    ExternalEndpoint { endpoint: EndpointConfig },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::HashedNgram { dim: DEFAULT_HASHED_DIM, seed: 0 }
    }
}

impl EmbedderSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            EmbedderSpec::HashedNgram { dim, .. } if *dim < MIN_HASHED_DIM => {
                Err(Error::Config(format!("hashed embedder dim must be at least {MIN_HASHED_DIM}, got {dim}")))
            }
            EmbedderSpec::ExternalEndpoint { endpoint } if endpoint.url.is_empty() => {
                Err(Error::Config("external embedder needs an endpoint url".into()))
            }
            _ => Ok(()),
        }
    }

    /// Known up front only for the hashed kind.
    pub fn dim(&self) -> Option<usize> {
        match self {
            EmbedderSpec::HashedNgram { dim, .. } => Some(*dim),
            EmbedderSpec::ExternalEndpoint { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    /// Set for empty input: the vector is all zeros and cannot be normalized.
    pub zero: bool,
}

impl Embedding {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn fnv1a(seed: u64, bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Character 3-grams of the lowercased text; shorter texts yield themselves as one gram.
pub fn char_trigrams(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < 3 {
        return vec![chars.iter().collect()];
    }
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

pub fn hashed_bucket(gram: &str, dim: usize, seed: u64) -> usize {
    (fnv1a(seed, gram.bytes()) % dim as u64) as usize
}

fn embed_hashed(text: &str, dim: usize, seed: u64) -> Embedding {
    let mut values = vec![0.0; dim];
    for gram in char_trigrams(text) {
        values[hashed_bucket(&gram, dim, seed)] += 1.0;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Embedding { values, zero: true };
    }
    values.iter_mut().for_each(|v| *v /= norm);
    Embedding { values, zero: false }
}

pub fn embed(text: &str, spec: &EmbedderSpec) -> Result<Embedding> {
    spec.validate()?;
    match spec {
        EmbedderSpec::HashedNgram { dim, seed } => Ok(embed_hashed(text, *dim, *seed)),
        EmbedderSpec::ExternalEndpoint { endpoint } => {
            if text.is_empty() {
                return Ok(Embedding { values: Vec::new(), zero: true });
            }
            let values = embed_external(text, endpoint)?;
            let zero = values.iter().all(|v| *v == 0.0);
            Ok(Embedding { values, zero })
        }
    }
}
