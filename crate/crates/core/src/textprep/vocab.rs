use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const SENT: &str = "[SENT]";

const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, SENT];

/// Word-level vocabulary. Ids are dense; the five special tokens occupy ids 0..5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list. The first five entries
    /// must be the special tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(Error::Input("vocabulary must start with [PAD] [UNK] [CLS] [SEP] [SENT]".into()));
        }
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, token_to_id })
    }

    pub fn specials_only() -> Self {
        Self::from_tokens(SPECIALS.iter().map(|s| s.to_string()).collect()).expect("specials are valid")
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn pad(&self) -> u32 {
        0
    }
    pub fn unk(&self) -> u32 {
        1
    }
    pub fn cls(&self) -> u32 {
        2
    }
    pub fn sep(&self) -> u32 {
        3
    }
    pub fn sent(&self) -> u32 {
        4
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Looks up a token, mapping misses to `[UNK]`.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(self.unk())
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Stable 64-bit FNV-1a digest of the ordered token list.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(0xff)) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Lowercased word units; whitespace and punctuation both separate words and
/// are discarded.
pub fn word_units(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// A sentence with its (possibly truncated) token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub token_ids: Vec<u32>,
    pub original_index: usize,
}

/// Tokenizes one sentence and truncates it to its first `max_tokens` ids.
/// Non-empty text with no word units yields a single `[UNK]`.
pub fn tokenize(sentence_text: &str, vocab: &Vocabulary, max_tokens: usize) -> Sentence {
    let mut token_ids: Vec<u32> = word_units(sentence_text)
        .iter()
        .take(max_tokens)
        .map(|w| vocab.id_or_unk(w))
        .collect();
    if token_ids.is_empty() && !sentence_text.trim().is_empty() && max_tokens > 0 {
        token_ids.push(vocab.unk());
    }
    Sentence { text: sentence_text.to_string(), token_ids, original_index: 0 }
}

/// Counts word units across the corpus and keeps those seen at least
/// `min_freq` times, ordered by descending frequency then lexicographically.
pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for w in word_units(text) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_freq.max(1) && !SPECIALS.contains(&w.as_str()))
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(entries.into_iter().map(|(w, _)| w))
        .collect();
    Vocabulary::from_tokens(tokens).expect("specials first, no duplicates")
}

/// A labeled document after tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDocument {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
    pub labels: Vec<u8>,
    pub total_tokens: usize,
    /// [`Vocabulary::fingerprint`] of the vocabulary used to produce the ids.
    pub vocab_fingerprint: u64,
}

impl TokenizedDocument {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Tokenizes every sentence of a labeled document.
pub fn tokenize_document(
    doc: &super::LabeledDocument,
    vocab: &Vocabulary,
    max_sentence_tokens: usize,
) -> Result<TokenizedDocument> {
    doc.validate()?;
    let sentences: Vec<Sentence> = doc
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| Sentence { original_index: i, ..tokenize(s, vocab, max_sentence_tokens) })
        .collect();
    let total_tokens = sentences.iter().map(|s| s.token_ids.len()).sum();
    Ok(TokenizedDocument {
        doc_id: doc.id.clone(),
        sentences,
        labels: doc.labels.clone(),
        total_tokens,
        vocab_fingerprint: vocab.fingerprint(),
    })
}
