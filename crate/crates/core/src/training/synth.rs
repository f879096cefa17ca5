//! Synthetic corpora with vocabulary-disjoint topics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::LabeledDocument;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub n_topics: usize,
    /// Inclusive range of sentences per topic block.
    pub sentences_per_topic: (usize, usize),
    /// Distinct words available to each topic.
    pub vocab_per_topic: usize,
    /// Inclusive range of words per sentence.
    pub words_per_sentence: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_docs: 100,
            n_topics: 2,
            sentences_per_topic: (3, 8),
            vocab_per_topic: 40,
            words_per_sentence: (3, 8),
            seed: 0,
        }
    }
}

/// The word pool of topic `t`; pools of different topics never overlap.
pub fn topic_word(topic: usize, index: usize) -> String {
    format!("t{topic}w{index}")
}

/// Each document visits every topic once, in a random order, as one block of
/// sentences; the last sentence of each block is labeled 1.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Vec<LabeledDocument>> {
    if cfg.n_topics < 2 {
        return Err(Error::Config("synthetic corpus needs at least 2 topics".into()));
    }
    let (smin, smax) = cfg.sentences_per_topic;
    let (wmin, wmax) = cfg.words_per_sentence;
    if smin == 0 || smin > smax || wmin == 0 || wmin > wmax || cfg.vocab_per_topic == 0 {
        return Err(Error::Config("synthetic corpus ranges must be non-empty and positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut docs = Vec::with_capacity(cfg.n_docs);
    for d in 0..cfg.n_docs {
        let mut topics: Vec<usize> = (0..cfg.n_topics).collect();
        topics.shuffle(&mut rng);
        let mut sentences = Vec::new();
        let mut labels = Vec::new();
        for &topic in &topics {
            let n = rng.random_range(smin..=smax);
            for s in 0..n {
                let words = rng.random_range(wmin..=wmax);
                let text: Vec<String> = (0..words)
                    .map(|_| topic_word(topic, rng.random_range(0..cfg.vocab_per_topic)))
                    .collect();
                sentences.push(text.join(" "));
                labels.push(u8::from(s + 1 == n));
            }
        }
        docs.push(LabeledDocument { id: format!("synth-{d:05}"), sentences, labels });
    }
    Ok(docs)
}
