//! Text preparation: sentence splitting, word-level tokenization, and packing
//! of sentence sequences into bounded `[CLS] … [SEP]` segments.

mod dataset;
mod packing;
mod sentences;
mod vocab;

pub use dataset::{convert_wiki727k, read_jsonl, write_jsonl, LabeledDocument};
pub use packing::{
    align_labels, pack_all_segments, pack_segments, pack_windows, paragraph_spans,
    reconstruct_partition, DocumentSegment, SegmentBatch,
};
pub use sentences::{split_sentences, SeparatorMode};
pub use vocab::{build_vocab, tokenize, tokenize_document, word_units, Sentence, TokenizedDocument, Vocabulary};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length limits for sentences, segments, and segments per document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Maximum tokens kept per sentence (`L`).
    pub max_sentence_tokens: usize,
    /// Maximum tokens per segment including `[CLS]`, `[SENT]` and `[SEP]` (`M`).
    pub max_segment_tokens: usize,
    /// Maximum segments per document batch (`K`).
    pub max_segments: usize,
    #[serde(default)]
    pub separator: SeparatorMode,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            max_sentence_tokens: 32,
            max_segment_tokens: 128,
            max_segments: 16,
            separator: SeparatorMode::Newline,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let (l, m) = (self.max_sentence_tokens, self.max_segment_tokens);
        if l == 0 {
            return Err(Error::Config("max_sentence_tokens must be at least 1".into()));
        }
        // a sentence costs its tokens plus [SENT]; a segment adds [CLS] and [SEP]
        if l + 3 > m {
            return Err(Error::Config(format!(
                "max_sentence_tokens ({l}) must be at most max_segment_tokens - 3 ({m} - 3)"
            )));
        }
        if self.max_segments == 0 {
            return Err(Error::Config("max_segments must be at least 1".into()));
        }
        Ok(())
    }
}
