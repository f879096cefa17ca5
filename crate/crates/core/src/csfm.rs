//! Cross-segment fusion and the boundary classifier.
//!
//! Each segment is summarized as `h_cls - h_sep`; the element-wise maximum
//! over a document's segment summaries gives a document-level vector that is
//! concatenated onto every `[SENT]` hidden state before two linear layers and
//! a two-way softmax classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::uniform_matrix;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::textprep::SegmentBatch;

/// Nonlinearity between the two fusion layers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsfmConfig {
    /// When false, the document vector is replaced by zeros (same parameter shapes).
    pub enabled: bool,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for CsfmConfig {
    fn default() -> Self {
        Self { enabled: true, activation: Activation::Relu }
    }
}

/// Fusion layers (`2d → d → d`) and the `d → 2` classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct CsfmWeights {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub wc: Tensor,
    pub bc: Tensor,
}

const NAMES: [&str; 6] = ["csfm.w1", "csfm.b1", "csfm.w2", "csfm.b2", "classifier.w", "classifier.b"];

impl CsfmWeights {
    pub fn init(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w1: uniform_matrix(&mut rng, 2 * d, d, 2 * d),
            b1: Tensor::zeros(&[d]),
            w2: uniform_matrix(&mut rng, d, d, d),
            b2: Tensor::zeros(&[d]),
            wc: uniform_matrix(&mut rng, d, 2, d),
            bc: Tensor::zeros(&[2]),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            w1: Tensor::zeros(&[2 * d, d]),
            b1: Tensor::zeros(&[d]),
            w2: Tensor::zeros(&[d, d]),
            b2: Tensor::zeros(&[d]),
            wc: Tensor::zeros(&[d, 2]),
            bc: Tensor::zeros(&[2]),
        }
    }

    pub fn dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let t = [&self.w1, &self.b1, &self.w2, &self.b2, &self.wc, &self.bc];
        NAMES.iter().map(|n| n.to_string()).zip(t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.wc, &mut self.bc]
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> CsfmVars {
        let mut leaf = |t: &Tensor| tape.leaf(t.clone(), requires_grad);
        CsfmVars {
            w1: leaf(&self.w1),
            b1: leaf(&self.b1),
            w2: leaf(&self.w2),
            b2: leaf(&self.b2),
            wc: leaf(&self.wc),
            bc: leaf(&self.bc),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CsfmVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub wc: Var,
    pub bc: Var,
}

impl CsfmVars {
    pub fn all(&self) -> Vec<Var> {
        vec![self.w1, self.b1, self.w2, self.b2, self.wc, self.bc]
    }
}

/// Per-sentence boundary scores for one document, in sentence order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPrediction {
    pub logits: Vec<[f64; 2]>,
    pub probs: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
}

impl BoundaryPrediction {
    pub fn from_logits(logits: &Tensor) -> Self {
        let mut out = Self { logits: Vec::new(), probs: Vec::new(), labels: Vec::new() };
        for r in 0..logits.rows() {
            let (logits, probs, label) = classify_logits([logits.at(r, 0), logits.at(r, 1)]);
            out.logits.push(logits);
            out.probs.push(probs);
            out.labels.push(label);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn extend(&mut self, other: BoundaryPrediction) {
        self.logits.extend(other.logits);
        self.probs.extend(other.probs);
        self.labels.extend(other.labels);
    }
}

fn classify_logits(logits: [f64; 2]) -> ([f64; 2], [f64; 2], u8) {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    // ties resolve to "no boundary"
    let label = u8::from(logits[1] > logits[0]);
    (logits, [e[0] / s, e[1] / s], label)
}

/// Document-level vector `[1×d]` from the `[CLS]`/`[SEP]` rows of the stacked
/// hidden states.
fn global_on_tape(tape: &mut Tape, hidden: Var, cls_rows: &[usize], sep_rows: &[usize]) -> Result<Var> {
    let h_cls = tape.gather_rows(hidden, cls_rows)?;
    let h_sep = tape.gather_rows(hidden, sep_rows)?;
    let h_seg = tape.sub(h_cls, h_sep)?;
    tape.max_over_rows(h_seg)
}

/// `Linear₂(act(Linear₁([h_global ; h_sent])))` for `[n×d]` inputs.
fn fuse_on_tape(tape: &mut Tape, h_global: Var, h_sent: Var, w: &CsfmVars, act: Activation) -> Result<Var> {
    let concat = tape.concat_cols(&[h_global, h_sent])?;
    let z = tape.linear(concat, w.w1, w.b1)?;
    let z = match act {
        Activation::Relu => tape.relu(z),
        Activation::None => z,
    };
    tape.linear(z, w.w2, w.b2)
}

/// Boundary logits `[n_scored × 2]` for a batch whose segments were encoded
/// into `hidden` (one `[width × d]` matrix per segment).
pub fn forward_on_tape(
    tape: &mut Tape,
    hidden: &[Var],
    batch: &SegmentBatch,
    w: &CsfmVars,
    cfg: &CsfmConfig,
) -> Result<Var> {
    if hidden.len() != batch.segments.len() || hidden.is_empty() {
        return Err(Error::Shape(format!(
            "{} hidden matrices for {} segments",
            hidden.len(),
            batch.segments.len()
        )));
    }
    let width = batch.width();
    if hidden.iter().any(|&h| tape.value(h).rows() != width) {
        return Err(Error::Shape("hidden state rows do not match batch width".into()));
    }
    let d = tape.value(hidden[0]).cols();
    let stacked = tape.concat_rows(hidden)?;

    let mut cls_rows = Vec::new();
    let mut sep_rows = Vec::new();
    let mut sent_rows = Vec::new();
    for (j, seg) in batch.segments.iter().enumerate() {
        cls_rows.push(j * width);
        sep_rows.push(j * width + seg.sep_position());
        sent_rows.extend(seg.sent_positions.iter().map(|p| j * width + p));
    }
    if sent_rows.is_empty() {
        return Err(Error::Empty(format!("document {:?} has no [SENT] positions", batch.doc_id)));
    }

    let h_global = if cfg.enabled {
        global_on_tape(tape, stacked, &cls_rows, &sep_rows)?
    } else {
        tape.constant(Tensor::zeros(&[1, d]))
    };
    let repeated = tape.gather_rows(h_global, &vec![0; sent_rows.len()])?;
    let h_sent = tape.gather_rows(stacked, &sent_rows)?;
    let fea = fuse_on_tape(tape, repeated, h_sent, w, cfg.activation)?;
    tape.linear(fea, w.wc, w.bc)
}

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("zero-length vector".into()));
    }
    Ok(())
}

/// `h_cls - h_sep`.
pub fn segment_repr(h_cls: &[f64], h_sep: &[f64]) -> Result<Vec<f64>> {
    check_same_len(h_cls, h_sep)?;
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(h_cls.to_vec()));
    let b = tape.constant(Tensor::vector(h_sep.to_vec()));
    let s = tape.sub(a, b)?;
    Ok(tape.value(s).data().to_vec())
}

/// Element-wise maximum over a document's segment summaries.
pub fn global_repr(seg_reprs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if seg_reprs.is_empty() {
        return Err(Error::Empty("global_repr over zero segments".into()));
    }
    let m = Tensor::from_rows(seg_reprs)?;
    let mut tape = Tape::new();
    let x = tape.constant(m);
    let g = tape.max_over_rows(x)?;
    Ok(tape.value(g).data().to_vec())
}

/// Fuses a document vector with one `[SENT]` hidden state.
pub fn fuse(h_global: &[f64], h_sent: &[f64], w: &CsfmWeights, act: Activation) -> Result<Vec<f64>> {
    check_same_len(h_global, h_sent)?;
    if h_global.len() != w.dim() {
        return Err(Error::Shape(format!("vectors of length {} for fusion width {}", h_global.len(), w.dim())));
    }
    let mut tape = Tape::new();
    let vars = w.bind(&mut tape, false);
    let g = tape.constant(Tensor::new(vec![1, h_global.len()], h_global.to_vec())?);
    let s = tape.constant(Tensor::new(vec![1, h_sent.len()], h_sent.to_vec())?);
    let f = fuse_on_tape(&mut tape, g, s, &vars, act)?;
    Ok(tape.value(f).data().to_vec())
}

/// Classifier logits, softmax probabilities, and the arg-max label (ties → 0).
pub fn classify(h_fea: &[f64], w: &CsfmWeights) -> Result<([f64; 2], [f64; 2], u8)> {
    if h_fea.len() != w.dim() {
        return Err(Error::Shape(format!("feature of length {} for classifier width {}", h_fea.len(), w.dim())));
    }
    let mut tape = Tape::new();
    let vars = w.bind(&mut tape, false);
    let x = tape.constant(Tensor::new(vec![1, h_fea.len()], h_fea.to_vec())?);
    let z = tape.linear(x, vars.wc, vars.bc)?;
    let z = tape.value(z).data();
    Ok(classify_logits([z[0], z[1]]))
}

/// Predictions for one batch from precomputed `[k × width × d]` hidden states.
pub fn forward_document(
    batch: &SegmentBatch,
    hidden: &Tensor,
    w: &CsfmWeights,
    cfg: &CsfmConfig,
) -> Result<BoundaryPrediction> {
    let [k, width, d] = hidden.shape() else {
        return Err(Error::Shape(format!("expected [k × width × d] hidden states, got {:?}", hidden.shape())));
    };
    if *k != batch.segments.len() || *width != batch.width() {
        return Err(Error::Shape("hidden states do not match the batch".into()));
    }
    let mut tape = Tape::new();
    let vars = w.bind(&mut tape, false);
    let per_seg: Vec<Var> = hidden
        .data()
        .chunks(width * d)
        .map(|c| Tensor::new(vec![*width, *d], c.to_vec()).map(|t| tape.constant(t)))
        .collect::<Result<_>>()?;
    let logits = forward_on_tape(&mut tape, &per_seg, batch, &vars, cfg)?;
    Ok(BoundaryPrediction::from_logits(tape.value(logits)))
}
