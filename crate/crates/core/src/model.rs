//! The full segmenter: vocabulary, packing limits, encoder and fusion head.

use crate::csfm::{self, BoundaryPrediction, CsfmConfig, CsfmVars, CsfmWeights};
use crate::encoder::{self, EncoderConfig, EncoderVars, EncoderWeights};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::textprep::{
    self, pack_windows, LabeledDocument, PreprocessConfig, SegmentBatch, TokenizedDocument, Vocabulary,
};

/// Everything needed to score sentences: this is what a checkpoint stores.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmenterModel {
    pub vocab: Vocabulary,
    pub preprocess: PreprocessConfig,
    pub encoder_config: EncoderConfig,
    pub csfm_config: CsfmConfig,
    pub encoder: EncoderWeights,
    pub csfm: CsfmWeights,
}

/// Model parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub csfm: CsfmVars,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.encoder.all();
        v.extend(self.csfm.all());
        v
    }
}

impl SegmenterModel {
    /// Fresh model with weights drawn from `encoder_config.seed`.
    /// `encoder_config.vocab_size` is taken from the vocabulary.
    pub fn new(
        vocab: Vocabulary,
        preprocess: PreprocessConfig,
        mut encoder_config: EncoderConfig,
        csfm_config: CsfmConfig,
    ) -> Result<Self> {
        preprocess.validate()?;
        encoder_config.vocab_size = vocab.size();
        if encoder_config.max_positions < preprocess.max_segment_tokens {
            return Err(Error::Config(format!(
                "max_positions {} is smaller than max_segment_tokens {}",
                encoder_config.max_positions, preprocess.max_segment_tokens
            )));
        }
        let encoder = encoder::init_weights(&encoder_config)?;
        let csfm = CsfmWeights::init(encoder_config.d_model, encoder_config.seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Self { vocab, preprocess, encoder_config, csfm_config, encoder, csfm })
    }

    /// Parameter names and tensors in serialization order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.encoder.named();
        v.extend(self.csfm.named());
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.csfm.tensors_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> ModelVars {
        ModelVars { encoder: self.encoder.bind(tape, requires_grad), csfm: self.csfm.bind(tape, requires_grad) }
    }

    /// Logits `[n_scored × 2]` for one batch.
    pub fn forward_on_tape(&self, tape: &mut Tape, vars: &ModelVars, batch: &SegmentBatch) -> Result<Var> {
        let hidden = encoder::encode_on_tape(tape, &vars.encoder, batch, &self.encoder_config)?;
        csfm::forward_on_tape(tape, &hidden, batch, &vars.csfm, &self.csfm_config)
    }

    pub fn predict_batch(&self, batch: &SegmentBatch) -> Result<BoundaryPrediction> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let logits = self.forward_on_tape(&mut tape, &vars, batch)?;
        Ok(BoundaryPrediction::from_logits(tape.value(logits)))
    }

    pub fn tokenize(&self, doc: &LabeledDocument) -> Result<TokenizedDocument> {
        textprep::tokenize_document(doc, &self.vocab, self.preprocess.max_sentence_tokens)
    }

    pub fn check_vocab(&self, doc: &TokenizedDocument) -> Result<()> {
        if doc.vocab_fingerprint != self.vocab.fingerprint() {
            return Err(Error::VocabMismatch(format!(
                "document {:?} was tokenized with a different vocabulary",
                doc.doc_id
            )));
        }
        Ok(())
    }

    /// Scores every sentence of a document, processing it in windows of at
    /// most `max_segments` segments so nothing is dropped.
    pub fn predict_document(&self, doc: &TokenizedDocument) -> Result<BoundaryPrediction> {
        self.check_vocab(doc)?;
        let mut out = BoundaryPrediction { logits: vec![], probs: vec![], labels: vec![] };
        for batch in pack_windows(doc, &self.preprocess, &self.vocab)? {
            out.extend(self.predict_batch(&batch)?);
        }
        Ok(out)
    }

    /// Boundary labels for raw sentence strings.
    pub fn predict_sentences(&self, sentences: &[&str]) -> Result<Vec<u8>> {
        if sentences.is_empty() {
            return Ok(Vec::new());
        }
        let doc = LabeledDocument {
            id: String::new(),
            sentences: sentences.iter().map(|s| s.to_string()).collect(),
            labels: vec![0; sentences.len()],
        };
        Ok(self.predict_document(&self.tokenize(&doc)?)?.labels)
    }
}
