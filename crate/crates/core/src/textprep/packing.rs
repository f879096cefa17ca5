//! Greedy left-to-right packing of sentences into `[CLS] s₁ [SENT] … [SEP]`
//! segments of at most `M` tokens.

use super::{PreprocessConfig, TokenizedDocument, Vocabulary};
use crate::error::{Error, Result};

/// One packed segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentSegment {
    /// Starts with `[CLS]`, ends with `[SEP]`.
    pub token_ids: Vec<u32>,
    /// Positions of the `[SENT]` tokens within `token_ids`.
    pub sent_positions: Vec<usize>,
    /// Document-level indices of the sentences covered, in order.
    pub sentence_indices: Vec<usize>,
}

impl DocumentSegment {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn sep_position(&self) -> usize {
        self.token_ids.len() - 1
    }
}

/// The segments of one document, plus their padded id matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentBatch {
    pub doc_id: String,
    pub segments: Vec<DocumentSegment>,
    /// `segments.len()` rows of `width()` ids, right-padded with `[PAD]`.
    pub padded_matrix: Vec<Vec<u32>>,
    /// 1 on real tokens, 0 on padding.
    pub attention_mask: Vec<Vec<u8>>,
    /// Sentences left out because the document needed more than `K` segments.
    pub dropped_sentences: usize,
}

impl SegmentBatch {
    pub fn new(doc_id: String, segments: Vec<DocumentSegment>, pad_id: u32, dropped_sentences: usize) -> Self {
        let width = segments.iter().map(DocumentSegment::len).max().unwrap_or(0);
        let mut batch = Self {
            doc_id,
            segments,
            padded_matrix: Vec::new(),
            attention_mask: Vec::new(),
            dropped_sentences,
        };
        batch.pad_to(width, pad_id);
        batch
    }

    /// Re-pads every row to `width` columns (never below the longest segment).
    pub fn pad_to(&mut self, width: usize, pad_id: u32) {
        let width = width.max(self.segments.iter().map(DocumentSegment::len).max().unwrap_or(0));
        self.padded_matrix = self
            .segments
            .iter()
            .map(|s| {
                let mut row = s.token_ids.clone();
                row.resize(width, pad_id);
                row
            })
            .collect();
        self.attention_mask = self
            .segments
            .iter()
            .map(|s| (0..width).map(|i| u8::from(i < s.len())).collect())
            .collect();
    }

    pub fn width(&self) -> usize {
        self.padded_matrix.first().map_or(0, Vec::len)
    }

    /// Number of `[SENT]` positions across all segments.
    pub fn n_scored(&self) -> usize {
        self.segments.iter().map(|s| s.sent_positions.len()).sum()
    }

    /// Sentence indices covered, flattened in order.
    pub fn sentence_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().flat_map(|s| s.sentence_indices.iter().copied())
    }
}

/// Packs every sentence, ignoring the `K` cap.
pub fn pack_all_segments(
    doc: &TokenizedDocument,
    cfg: &PreprocessConfig,
    vocab: &Vocabulary,
) -> Result<Vec<DocumentSegment>> {
    cfg.validate()?;
    let max_len = cfg.max_segment_tokens;
    let mut segments = Vec::new();
    let mut current: Option<DocumentSegment> = None;

    for (i, sentence) in doc.sentences.iter().enumerate() {
        let n = sentence.token_ids.len();
        if n > cfg.max_sentence_tokens {
            return Err(Error::Input(format!(
                "sentence {i} of {} has {n} tokens, more than max_sentence_tokens={}",
                doc.doc_id, cfg.max_sentence_tokens
            )));
        }
        let cost = n + 1;
        if let Some(seg) = current.as_ref() {
            // payload = len - 1 (the leading [CLS]); +2 covers [CLS] and [SEP]
            if (seg.len() - 1) + cost + 2 > max_len {
                let mut done = current.take().expect("checked above");
                done.token_ids.push(vocab.sep());
                segments.push(done);
            }
        }
        let seg = current.get_or_insert_with(|| DocumentSegment {
            token_ids: vec![vocab.cls()],
            sent_positions: Vec::new(),
            sentence_indices: Vec::new(),
        });
        seg.token_ids.extend_from_slice(&sentence.token_ids);
        seg.sent_positions.push(seg.token_ids.len());
        seg.token_ids.push(vocab.sent());
        seg.sentence_indices.push(i);
    }
    if let Some(mut seg) = current {
        seg.token_ids.push(vocab.sep());
        segments.push(seg);
    }
    Ok(segments)
}

/// Training-side packing: keeps the first `K` segments and counts the
/// sentences that fell off the end.
pub fn pack_segments(doc: &TokenizedDocument, cfg: &PreprocessConfig, vocab: &Vocabulary) -> Result<SegmentBatch> {
    let mut segments = pack_all_segments(doc, cfg, vocab)?;
    let dropped = segments
        .iter()
        .skip(cfg.max_segments)
        .map(|s| s.sentence_indices.len())
        .sum();
    segments.truncate(cfg.max_segments);
    Ok(SegmentBatch::new(doc.doc_id.clone(), segments, vocab.pad(), dropped))
}

/// Inference-side packing: consecutive windows of at most `K` segments so that
/// every sentence is scored.
pub fn pack_windows(doc: &TokenizedDocument, cfg: &PreprocessConfig, vocab: &Vocabulary) -> Result<Vec<SegmentBatch>> {
    let segments = pack_all_segments(doc, cfg, vocab)?;
    Ok(segments
        .chunks(cfg.max_segments)
        .map(|w| SegmentBatch::new(doc.doc_id.clone(), w.to_vec(), vocab.pad(), 0))
        .collect())
}

/// Per-segment gold labels for each `[SENT]` position.
pub fn align_labels(batch: &SegmentBatch, doc: &TokenizedDocument) -> Result<Vec<Vec<u8>>> {
    if batch.doc_id != doc.doc_id {
        return Err(Error::Alignment(format!("batch is for {:?}, document is {:?}", batch.doc_id, doc.doc_id)));
    }
    if doc.labels.len() != doc.sentences.len() {
        return Err(Error::Alignment(format!(
            "{}: {} labels for {} sentences",
            doc.doc_id,
            doc.labels.len(),
            doc.sentences.len()
        )));
    }
    batch
        .segments
        .iter()
        .map(|seg| {
            if seg.sent_positions.len() != seg.sentence_indices.len() {
                return Err(Error::Alignment("segment sentence/position count mismatch".into()));
            }
            seg.sentence_indices
                .iter()
                .map(|&i| {
                    doc.labels
                        .get(i)
                        .copied()
                        .ok_or_else(|| Error::Alignment(format!("sentence index {i} out of range")))
                })
                .collect()
        })
        .collect()
}

/// Inclusive `(first, last)` sentence spans of the paragraphs implied by
/// boundary labels. A trailing run without a closing 1 forms the last paragraph.
pub fn paragraph_spans(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, &y) in labels.iter().enumerate() {
        if y == 1 {
            spans.push((start, i));
            start = i + 1;
        }
    }
    if start < labels.len() {
        spans.push((start, labels.len() - 1));
    }
    spans
}

/// Groups `sentences` into the paragraphs implied by `labels`.
pub fn reconstruct_partition<'a, T>(sentences: &'a [T], labels: &[u8]) -> Result<Vec<&'a [T]>> {
    if sentences.len() != labels.len() {
        return Err(Error::Input(format!("{} labels for {} sentences", labels.len(), sentences.len())));
    }
    Ok(paragraph_spans(labels).into_iter().map(|(a, b)| &sentences[a..=b]).collect())
}
