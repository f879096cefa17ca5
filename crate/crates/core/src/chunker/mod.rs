//! Model-driven recursive chunk splitting for retrieval, plus embedding,
//! top-k retrieval and prompt assembly.

pub mod embed;
pub mod endpoint;
pub mod index;
pub mod prompt;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SegmenterModel;
use crate::par::{self, Parallelism};
use crate::textprep::word_units;

pub use embed::{embed, EmbedderSpec, Embedding, DEFAULT_HASHED_DIM};
pub use endpoint::{complete, embed_external, EndpointConfig, EndpointError};
pub use index::RetrievalIndex;
pub use prompt::{assemble_context, DEFAULT_TEMPLATE};

/// Anything that can label sentence boundaries (1 = a paragraph ends after this sentence).
pub trait BoundaryModel {
    fn predict_boundaries(&self, sentences: &[&str]) -> Result<Vec<u8>>;
}

impl BoundaryModel for SegmenterModel {
    fn predict_boundaries(&self, sentences: &[&str]) -> Result<Vec<u8>> {
        self.predict_sentences(sentences)
    }
}

impl<F> BoundaryModel for F
where
    F: Fn(&[&str]) -> Vec<u8>,
{
    fn predict_boundaries(&self, sentences: &[&str]) -> Result<Vec<u8>> {
        Ok(self(sentences))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Chars,
    Tokens,
}

impl FromStr for LengthUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chars" => Ok(LengthUnit::Chars),
            "tokens" => Ok(LengthUnit::Tokens),
            other => Err(Error::Config(format!("unknown length unit {other:?}"))),
        }
    }
}

impl LengthUnit {
    pub fn measure(self, text: &str) -> usize {
        match self {
            LengthUnit::Chars => text.chars().count(),
            LengthUnit::Tokens => word_units(text).len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkerConfig {
    pub max_chunk_len: usize,
    #[serde(default)]
    pub unit: LengthUnit,
    pub max_depth: usize,
    #[serde(default = "one")]
    pub min_sentences_per_chunk: usize,
}

fn one() -> usize {
    1
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        ChunkerConfig { max_chunk_len: 1000, unit: LengthUnit::Chars, max_depth: 4, min_sentences_per_chunk: 1 }
    }
}

impl ChunkerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_chunk_len == 0 {
            return Err(Error::Config("chunk length threshold must be positive".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if self.min_sentences_per_chunk == 0 {
            return Err(Error::Config("min_sentences_per_chunk must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub text: String,
    /// Inclusive range of sentence indices within the source document.
    pub sentence_span: (usize, usize),
    pub char_len: usize,
    pub depth: usize,
    /// Over the threshold but not splittable further (single sentence or depth limit).
    #[serde(default)]
    pub oversize: bool,
}

/// Byte ranges of sentences that tile `text` exactly. A sentence ends after a
/// newline, a CJK full stop, or a period followed by whitespace; trailing
/// whitespace stays with the sentence it follows.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let ends = match c {
            '\n' | '。' => true,
            '.' => chars.peek().is_none_or(|&(_, n)| n.is_whitespace()),
            _ => false,
        };
        if !ends {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, n)) = chars.peek() {
            if !n.is_whitespace() {
                break;
            }
            end = j + n.len_utf8();
            chars.next();
        }
        spans.push((start, end));
        start = end;
    }
    if start < text.len() {
        spans.push((start, text.len()));
    }
    merge_blank_spans(text, spans)
}

fn merge_blank_spans(text: &str, spans: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    let mut carry: Option<usize> = None;
    for (s, e) in spans {
        let blank = text[s..e].trim().is_empty();
        if blank {
            match out.last_mut() {
                Some(last) => last.1 = e,
                None => carry = Some(carry.unwrap_or(s)),
            }
        } else {
            out.push((carry.take().unwrap_or(s), e));
        }
    }
    if let Some(s) = carry {
        out.push((s, text.len()));
    }
    out
}

/// Cut points (exclusive sentence offsets) from model labels, honouring the
/// minimum piece size.
fn model_cuts(labels: &[u8], min: usize) -> Vec<usize> {
    let n = labels.len();
    let mut cuts = Vec::new();
    let mut last = 0;
    for (i, &l) in labels.iter().enumerate().take(n.saturating_sub(1)) {
        let at = i + 1;
        if l == 1 && at - last >= min && n - at >= min {
            cuts.push(at);
            last = at;
        }
    }
    cuts
}

/// Splits `text` into chunks no longer than the threshold where possible.
///
/// Pieces over the threshold are segmented by the model; when the model finds
/// no internal boundary the piece is halved by sentence count. Pieces at
/// `max_depth`, and single sentences, are emitted as they are and flagged
/// when still too long. Concatenating the chunk texts gives back `text`.
pub fn split_recursive<M: BoundaryModel + ?Sized>(text: &str, model: &M, cfg: &ChunkerConfig) -> Result<Vec<Chunk>> {
    cfg.validate()?;
    if text.is_empty() {
        return Err(Error::Empty("cannot chunk an empty document".into()));
    }
    let spans = sentence_spans(text);
    let slice = |a: usize, b: usize| &text[spans[a].0..spans[b - 1].1];

    let mut out = Vec::new();
    // (first sentence, one past last, depth); popped in document order
    let mut work = vec![(0usize, spans.len(), 0usize)];
    while let Some((a, b, depth)) = work.pop() {
        let piece = slice(a, b);
        let fits = cfg.unit.measure(piece) <= cfg.max_chunk_len;
        if fits || b - a == 1 || depth >= cfg.max_depth {
            out.push(Chunk {
                text: piece.to_string(),
                sentence_span: (a, b - 1),
                char_len: piece.chars().count(),
                depth,
                oversize: !fits,
            });
            continue;
        }
        let sentences: Vec<&str> = (a..b).map(|i| text[spans[i].0..spans[i].1].trim()).collect();
        let labels = model.predict_boundaries(&sentences)?;
        if labels.len() != sentences.len() {
            return Err(Error::Input(format!(
                "boundary model returned {} labels for {} sentences",
                labels.len(),
                sentences.len()
            )));
        }
        let mut cuts = model_cuts(&labels, cfg.min_sentences_per_chunk);
        if cuts.is_empty() {
            cuts.push((b - a) / 2);
        }
        let mut bounds = vec![a];
        bounds.extend(cuts.iter().map(|c| a + c));
        bounds.push(b);
        for w in bounds.windows(2).rev() {
            work.push((w[0], w[1], depth + 1));
        }
    }
    Ok(out)
}

/// Chunks many documents, in parallel when enabled.
pub fn split_documents<M, S>(docs: &[S], model: &M, cfg: &ChunkerConfig, mode: Parallelism) -> Result<Vec<Vec<Chunk>>>
where
    M: BoundaryModel + Sync + ?Sized,
    S: AsRef<str> + Sync,
{
    par::try_map(docs, mode, |d| split_recursive(d.as_ref(), model, cfg))
}
