//! Training loop, boundary evaluation, checkpoints, synthetic data, and the
//! input-length sweep.

mod checkpoint;
mod metrics;
mod sweep;
mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use metrics::Metrics;
pub use sweep::{sweep_csv, sweep_input_length, write_sweep_csv, SweepMode, SweepRow};
pub use synth::{synth_corpus, topic_word, SynthConfig};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csfm::CsfmConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::SegmenterModel;
use crate::par::{self, Parallelism};
use crate::tensor::{Adam, AdamConfig, Tape};
use crate::textprep::{align_labels, build_vocab, pack_segments, LabeledDocument, PreprocessConfig, TokenizedDocument, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    pub encoder: EncoderConfig,
    pub csfm: CsfmConfig,
    pub eval_exclude_final_boundary: bool,
    /// Loss weight of boundary (label 1) sentences.
    pub positive_weight: f64,
    /// Minimum corpus frequency for a word to enter the vocabulary.
    pub min_freq: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            epochs: 10,
            seed: 0,
            preprocess: PreprocessConfig::default(),
            encoder: EncoderConfig::default(),
            csfm: CsfmConfig::default(),
            eval_exclude_final_boundary: true,
            positive_weight: 1.0,
            min_freq: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.optimizer.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.positive_weight > 0.0) {
            return Err(Error::Config("positive_weight must be positive".into()));
        }
        self.preprocess.validate()
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions { exclude_final_boundary: self.eval_exclude_final_boundary, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 0 is the loss of the freshly initialized model.
    pub epoch: usize,
    pub mean_loss: f64,
    pub documents: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SegmenterModel,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.log[0].mean_loss
    }

    pub fn final_loss(&self) -> f64 {
        self.log.last().expect("log is never empty").mean_loss
    }
}

/// Builds the vocabulary from the training sentences.
pub fn vocab_for(docs: &[LabeledDocument], min_freq: usize) -> Vocabulary {
    build_vocab(docs.iter().flat_map(|d| d.sentences.iter().map(String::as_str)), min_freq)
}

pub fn tokenize_all(docs: &[LabeledDocument], vocab: &Vocabulary, cfg: &PreprocessConfig) -> Result<Vec<TokenizedDocument>> {
    docs.iter()
        .map(|d| crate::textprep::tokenize_document(d, vocab, cfg.max_sentence_tokens))
        .collect()
}

/// Gold labels of the sentences that survive the training-side `K` cap.
fn scored_labels(model: &SegmenterModel, doc: &TokenizedDocument) -> Result<(crate::textprep::SegmentBatch, Vec<u8>)> {
    let batch = pack_segments(doc, &model.preprocess, &model.vocab)?;
    let labels = align_labels(&batch, doc)?.concat();
    Ok((batch, labels))
}

/// Mean cross-entropy over the document's scored sentences, or `None` when
/// the document has none.
pub fn document_loss(model: &SegmenterModel, doc: &TokenizedDocument, positive_weight: f64) -> Result<Option<f64>> {
    let (batch, labels) = scored_labels(model, doc)?;
    if labels.is_empty() {
        return Ok(None);
    }
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let logits = model.forward_on_tape(&mut tape, &vars, &batch)?;
    let loss = tape.weighted_cross_entropy(logits, &labels, positive_weight)?;
    Ok(Some(tape.value(loss).data()[0]))
}

fn mean_loss(model: &SegmenterModel, docs: &[TokenizedDocument], positive_weight: f64) -> Result<(f64, usize)> {
    let losses = par::try_map(docs, Parallelism::Parallel, |d| document_loss(model, d, positive_weight))?;
    let scored: Vec<f64> = losses.into_iter().flatten().collect();
    let mean = if scored.is_empty() { 0.0 } else { scored.iter().sum::<f64>() / scored.len() as f64 };
    Ok((mean, scored.len()))
}

/// Per-document training with seeded shuffling. Each step packs one document
/// (dropping sentences beyond `K` segments), takes the mean cross-entropy over
/// its `[SENT]` labels, back-propagates, and applies one Adam update.
pub fn train(data: &[TokenizedDocument], vocab: &Vocabulary, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("no training documents".into()));
    }
    let encoder = EncoderConfig { seed: cfg.seed, ..cfg.encoder.clone() };
    let mut model = SegmenterModel::new(vocab.clone(), cfg.preprocess.clone(), encoder, cfg.csfm.clone())?;
    for doc in data {
        model.check_vocab(doc)?;
    }

    let (initial, n0) = mean_loss(&model, data, cfg.positive_weight)?;
    let mut log = vec![EpochLog { epoch: 0, mean_loss: initial, documents: n0, skipped: data.len() - n0 }];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut seen, mut skipped) = (0.0, 0, 0);
        for &i in &order {
            let (batch, labels) = scored_labels(&model, &data[i])?;
            if labels.is_empty() {
                skipped += 1;
                continue;
            }
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let logits = model.forward_on_tape(&mut tape, &vars, &batch)?;
            let loss = tape.weighted_cross_entropy(logits, &labels, cfg.positive_weight)?;
            total += tape.value(loss).data()[0];
            seen += 1;
            let grads = tape.backward(loss)?;
            let grads: Vec<_> = vars.all().into_iter().map(|v| grads.wrt(v)).collect();
            opt.step(&mut model.parameters_mut(), &grads)?;
        }
        if skipped > 0 {
            log::warn!("epoch {epoch}: skipped {skipped} documents with no scored sentences");
        }
        let mean_loss = if seen == 0 { 0.0 } else { total / seen as f64 };
        log::info!("epoch {epoch}: mean loss {mean_loss:.6} over {seen} documents");
        log.push(EpochLog { epoch, mean_loss, documents: seen, skipped });
    }
    Ok(TrainOutcome { model, log })
}

pub fn write_loss_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,mean_loss,documents,skipped\n");
    for e in log {
        out.push_str(&format!("{},{:.8},{},{}\n", e.epoch, e.mean_loss, e.documents, e.skipped));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Leave each document's last scored sentence out of the counts.
    pub exclude_final_boundary: bool,
    /// Overrides the model's fusion switch when set.
    pub csfm_enabled: Option<bool>,
    pub parallelism: Parallelism,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { exclude_final_boundary: true, csfm_enabled: None, parallelism: Parallelism::Parallel }
    }
}

/// Boundary-class precision/recall/F1 over all scored sentences.
pub fn evaluate(data: &[TokenizedDocument], model: &SegmenterModel, opts: &EvalOptions) -> Result<Metrics> {
    let overridden;
    let model = match opts.csfm_enabled {
        Some(enabled) if enabled != model.csfm_config.enabled => {
            let mut m = model.clone();
            m.csfm_config.enabled = enabled;
            overridden = m;
            &overridden
        }
        _ => model,
    };
    let per_doc = par::try_map(data, opts.parallelism, |doc| {
        let pred = model.predict_document(doc)?;
        let mut n = pred.labels.len();
        if opts.exclude_final_boundary {
            n = n.saturating_sub(1);
        }
        Ok::<_, Error>(Metrics::count(&doc.labels[..n], &pred.labels[..n]))
    })?;
    Ok(per_doc.into_iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Vec<TokenizedDocument>, Vocabulary, TrainConfig) {
        let docs = synth_corpus(&SynthConfig { n_docs: 4, sentences_per_topic: (2, 3), vocab_per_topic: 6, seed: 1, ..Default::default() })
            .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            preprocess: PreprocessConfig { max_sentence_tokens: 8, max_segment_tokens: 24, max_segments: 4, ..Default::default() },
            encoder: EncoderConfig { d_model: 8, n_heads: 2, n_layers: 1, d_ff: 8, max_positions: 32, ..Default::default() },
            ..Default::default()
        };
        let vocab = vocab_for(&docs, 1);
        (tokenize_all(&docs, &vocab, &cfg.preprocess).unwrap(), vocab, cfg)
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let (docs, vocab, mut cfg) = setup();
        cfg.optimizer.lr = 0.0;
        let out = train(&docs, &vocab, &cfg).unwrap();
        let init = SegmenterModel::new(
            vocab,
            cfg.preprocess.clone(),
            EncoderConfig { seed: cfg.seed, ..cfg.encoder.clone() },
            cfg.csfm.clone(),
        )
        .unwrap();
        assert_eq!(out.model, init);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (docs, vocab, mut cfg) = setup();
        cfg.epochs = 2;
        let a = train(&docs, &vocab, &cfg).unwrap();
        let b = train(&docs, &vocab, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        assert_eq!(a.log.len(), 3);
    }

    #[test]
    fn empty_documents_are_skipped() {
        let (mut docs, vocab, cfg) = setup();
        let mut empty = docs[0].clone();
        empty.sentences.clear();
        empty.labels.clear();
        docs.push(empty);
        let out = train(&docs, &vocab, &cfg).unwrap();
        assert_eq!(out.log[1].skipped, 1);
        assert_eq!(out.log[1].documents, docs.len() - 1);
    }

    #[test]
    fn config_validation() {
        let (docs, vocab, mut cfg) = setup();
        cfg.optimizer.lr = -1.0;
        assert!(matches!(train(&docs, &vocab, &cfg), Err(Error::Config(_))));
        cfg.optimizer.lr = 1e-3;
        cfg.epochs = 0;
        assert!(train(&docs, &vocab, &cfg).is_err());
        cfg.epochs = 1;
        assert!(matches!(train(&[], &vocab, &cfg), Err(Error::Empty(_))));
    }

    #[test]
    fn evaluation_ignores_document_order_and_checks_vocab() {
        let (docs, vocab, cfg) = setup();
        let model = train(&docs, &vocab, &cfg).unwrap().model;
        let fwd = evaluate(&docs, &model, &EvalOptions::default()).unwrap();
        let mut rev = docs.clone();
        rev.reverse();
        assert_eq!(fwd, evaluate(&rev, &model, &EvalOptions { parallelism: Parallelism::Sequential, ..Default::default() }).unwrap());

        let other = build_vocab(["t0w1 t1w1"], 1);
        let foreign = tokenize_all(&synth_corpus(&SynthConfig { n_docs: 1, ..Default::default() }).unwrap(), &other, &cfg.preprocess).unwrap();
        assert!(matches!(evaluate(&foreign, &model, &EvalOptions::default()), Err(Error::VocabMismatch(_))));
    }
}
