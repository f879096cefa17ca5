//! Pre-norm transformer encoder with learned positional embeddings.
//!
//! Each segment of a [`SegmentBatch`] is encoded independently; attention
//! never looks at padded key positions, so appending padding leaves the
//! hidden states of real tokens untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use crate::textprep::SegmentBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub seed: u64,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            max_positions: 512,
            seed: 0,
            layer_norm_eps: default_ln_eps(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_positions == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Parameters of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w_ff1: Tensor,
    pub b_ff1: Tensor,
    pub w_ff2: Tensor,
    pub b_ff2: Tensor,
}

const LAYER_FIELDS: [&str; 16] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo",
    "attn.bo", "ln2.gain", "ln2.bias", "ff.w1", "ff.b1", "ff.w2", "ff.b2",
];

impl LayerWeights {
    fn fields(&self) -> [&Tensor; 16] {
        [
            &self.ln1_gain, &self.ln1_bias, &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo,
            &self.bo, &self.ln2_gain, &self.ln2_bias, &self.w_ff1, &self.b_ff1, &self.w_ff2, &self.b_ff2,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
}

impl EncoderWeights {
    /// Parameter names and tensors in serialization order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("encoder.token_embedding".to_string(), &self.token_embedding),
            ("encoder.position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_FIELDS.iter().zip(layer.fields()) {
                out.push((format!("encoder.layers.{i}.{name}"), t));
            }
        }
        out.push(("encoder.final.gain".into(), &self.final_gain));
        out.push(("encoder.final.bias".into(), &self.final_bias));
        out
    }

    /// Mutable tensors in the same order as [`EncoderWeights::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for layer in &mut self.layers {
            out.extend(layer.fields_mut());
        }
        out.push(&mut self.final_gain);
        out.push(&mut self.final_bias);
        out
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> EncoderVars {
        let mut leaf = |t: &Tensor| tape.leaf(t.clone(), requires_grad);
        let token_embedding = leaf(&self.token_embedding);
        let position_embedding = leaf(&self.position_embedding);
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let v: Vec<Var> = l.fields().into_iter().map(&mut leaf).collect();
                LayerVars {
                    ln1_gain: v[0],
                    ln1_bias: v[1],
                    wq: v[2],
                    bq: v[3],
                    wk: v[4],
                    bk: v[5],
                    wv: v[6],
                    bv: v[7],
                    wo: v[8],
                    bo: v[9],
                    ln2_gain: v[10],
                    ln2_bias: v[11],
                    w_ff1: v[12],
                    b_ff1: v[13],
                    w_ff2: v[14],
                    b_ff2: v[15],
                }
            })
            .collect();
        let final_gain = leaf(&self.final_gain);
        let final_bias = leaf(&self.final_bias);
        EncoderVars { token_embedding, position_embedding, layers, final_gain, final_bias }
    }
}

#[derive(Debug, Clone)]
pub struct LayerVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub w_ff1: Var,
    pub b_ff1: Var,
    pub w_ff2: Var,
    pub b_ff2: Var,
}

/// Encoder parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub token_embedding: Var,
    pub position_embedding: Var,
    pub layers: Vec<LayerVars>,
    pub final_gain: Var,
    pub final_bias: Var,
}

impl EncoderVars {
    /// Vars in the same order as [`EncoderWeights::named`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.token_embedding, self.position_embedding];
        for l in &self.layers {
            out.extend([
                l.ln1_gain, l.ln1_bias, l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln2_gain, l.ln2_bias,
                l.w_ff1, l.b_ff1, l.w_ff2, l.b_ff2,
            ]);
        }
        out.push(self.final_gain);
        out.push(self.final_bias);
        out
    }
}

/// Uniform in `±1/sqrt(fan_in)`.
pub(crate) fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive extents")
}

/// Deterministic initialization from `cfg.seed`. Weight matrices are uniform
/// in `±1/sqrt(fan_in)` (embedding tables use `fan_in = d_model`); biases are
/// zero and layer-norm gains one.
pub fn init_weights(cfg: &EncoderConfig) -> Result<EncoderWeights> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.d_model;
    let ones = || Tensor::full(&[d], 1.0);
    let zeros = |n: usize| Tensor::zeros(&[n]);
    let token_embedding = uniform_matrix(&mut rng, cfg.vocab_size, d, d);
    let position_embedding = uniform_matrix(&mut rng, cfg.max_positions, d, d);
    let layers = (0..cfg.n_layers)
        .map(|_| LayerWeights {
            ln1_gain: ones(),
            ln1_bias: zeros(d),
            wq: uniform_matrix(&mut rng, d, d, d),
            bq: zeros(d),
            wk: uniform_matrix(&mut rng, d, d, d),
            bk: zeros(d),
            wv: uniform_matrix(&mut rng, d, d, d),
            bv: zeros(d),
            wo: uniform_matrix(&mut rng, d, d, d),
            bo: zeros(d),
            ln2_gain: ones(),
            ln2_bias: zeros(d),
            w_ff1: uniform_matrix(&mut rng, d, cfg.d_ff, d),
            b_ff1: zeros(cfg.d_ff),
            w_ff2: uniform_matrix(&mut rng, cfg.d_ff, d, cfg.d_ff),
            b_ff2: zeros(d),
        })
        .collect();
    Ok(EncoderWeights { token_embedding, position_embedding, layers, final_gain: ones(), final_bias: zeros(d) })
}

fn check_batch(batch: &SegmentBatch, cfg: &EncoderConfig) -> Result<()> {
    if batch.segments.is_empty() {
        return Err(Error::Empty(format!("document {:?} has no segments", batch.doc_id)));
    }
    if batch.width() > cfg.max_positions {
        return Err(Error::Contract(format!(
            "segment width {} exceeds max_positions {}",
            batch.width(),
            cfg.max_positions
        )));
    }
    if let Some(bad) = batch.padded_matrix.iter().flatten().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::Contract(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    Ok(())
}

/// Encodes every segment row of the batch; returns one `[width × d_model]`
/// hidden-state matrix per segment.
pub fn encode_on_tape(tape: &mut Tape, vars: &EncoderVars, batch: &SegmentBatch, cfg: &EncoderConfig) -> Result<Vec<Var>> {
    check_batch(batch, cfg)?;
    let width = batch.width();
    let positions: Vec<usize> = (0..width).collect();
    let pos = tape.gather_rows(vars.position_embedding, &positions)?;
    batch
        .padded_matrix
        .iter()
        .zip(&batch.attention_mask)
        .map(|(ids, mask)| {
            let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
            let keep: Vec<bool> = mask.iter().map(|&m| m == 1).collect();
            let tok = tape.gather_rows(vars.token_embedding, &ids)?;
            let mut x = tape.add(tok, pos)?;
            for layer in &vars.layers {
                x = block(tape, layer, x, &keep, cfg)?;
            }
            tape.layer_norm(x, vars.final_gain, vars.final_bias, cfg.layer_norm_eps)
        })
        .collect()
}

fn block(tape: &mut Tape, l: &LayerVars, x: Var, keep: &[bool], cfg: &EncoderConfig) -> Result<Var> {
    let h = tape.layer_norm(x, l.ln1_gain, l.ln1_bias, cfg.layer_norm_eps)?;
    let q = tape.linear(h, l.wq, l.bq)?;
    let k = tape.linear(h, l.wk, l.bk)?;
    let v = tape.linear(h, l.wv, l.bv)?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for head in 0..cfg.n_heads {
        let (a, b) = (head * dh, (head + 1) * dh);
        let qh = tape.slice_cols(q, a, b)?;
        let kh = tape.slice_cols(k, a, b)?;
        let vh = tape.slice_cols(v, a, b)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores, Some(keep))?;
        heads.push(tape.matmul(attn, vh)?);
    }
    let merged = tape.concat_cols(&heads)?;
    let attn_out = tape.linear(merged, l.wo, l.bo)?;
    let x = tape.add(x, attn_out)?;
    let h = tape.layer_norm(x, l.ln2_gain, l.ln2_bias, cfg.layer_norm_eps)?;
    let f = tape.linear(h, l.w_ff1, l.b_ff1)?;
    let f = tape.relu(f);
    let f = tape.linear(f, l.w_ff2, l.b_ff2)?;
    tape.add(x, f)
}

/// Hidden states for a batch as a `[k × width × d_model]` tensor.
pub fn encode(batch: &SegmentBatch, weights: &EncoderWeights, cfg: &EncoderConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = weights.bind(&mut tape, false);
    let hidden = encode_on_tape(&mut tape, &vars, batch, cfg)?;
    let data: Vec<f64> = hidden.iter().flat_map(|&h| tape.value(h).data().iter().copied()).collect();
    Tensor::new(vec![hidden.len(), batch.width(), cfg.d_model], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::DocumentSegment;

    fn cfg(layers: usize) -> EncoderConfig {
        EncoderConfig { vocab_size: 20, d_model: 8, n_heads: 2, n_layers: layers, d_ff: 16, max_positions: 32, seed: 3, ..Default::default() }
    }

    fn batch(rows: &[Vec<u32>]) -> SegmentBatch {
        let segments = rows
            .iter()
            .map(|r| DocumentSegment { token_ids: r.clone(), sent_positions: vec![], sentence_indices: vec![] })
            .collect();
        SegmentBatch::new("d".into(), segments, 0, 0)
    }

    #[test]
    fn output_shape() {
        let w = init_weights(&cfg(2)).unwrap();
        let b = batch(&[vec![2, 7, 8, 4, 3], vec![2, 9, 4, 3]]);
        let h = encode(&b, &w, &cfg(2)).unwrap();
        assert_eq!(h.shape(), &[2, 5, 8]);
        assert!(h.is_finite());
    }

    #[test]
    fn identical_segments_identical_rows() {
        let w = init_weights(&cfg(2)).unwrap();
        let b = batch(&[vec![2, 7, 8, 4, 3], vec![2, 7, 8, 4, 3]]);
        let h = encode(&b, &w, &cfg(2)).unwrap();
        let half = h.numel() / 2;
        assert_eq!(h.data()[..half], h.data()[half..]);
    }

    #[test]
    fn seeding() {
        let a = init_weights(&cfg(1)).unwrap();
        assert_eq!(a, init_weights(&cfg(1)).unwrap());
        let other = EncoderConfig { seed: 4, ..cfg(1) };
        assert_ne!(a, init_weights(&other).unwrap());
    }

    #[test]
    fn init_spread_matches_uniform_bound() {
        let c = EncoderConfig { d_model: 64, d_ff: 128, n_heads: 4, ..cfg(1) };
        let w = init_weights(&c).unwrap();
        let data = w.layers[0].w_ff2.data();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let sd = (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let expected = 1.0 / (3.0 * 128.0f64).sqrt();
        assert!((sd - expected).abs() / expected < 0.2, "sd {sd} vs {expected}");
        assert!(w.layers[0].b_ff2.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn contract_checks() {
        let w = init_weights(&cfg(1)).unwrap();
        assert!(matches!(encode(&batch(&[vec![2, 25, 3]]), &w, &cfg(1)), Err(Error::Contract(_))));
        let long = batch(&[vec![5; 40]]);
        assert!(matches!(encode(&long, &w, &cfg(1)), Err(Error::Contract(_))));
        let bad = EncoderConfig { n_heads: 3, ..cfg(1) };
        assert!(matches!(init_weights(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn named_and_mutable_orders_agree() {
        let mut w = init_weights(&cfg(2)).unwrap();
        let shapes: Vec<Vec<usize>> = w.named().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let shapes_mut: Vec<Vec<usize>> = w.tensors_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, shapes_mut);
        let mut tape = Tape::new();
        let vars = w.bind(&mut tape, true);
        let bound: Vec<Vec<usize>> = vars.all().iter().map(|&v| tape.value(v).shape().to_vec()).collect();
        assert_eq!(shapes, bound);
    }
}
