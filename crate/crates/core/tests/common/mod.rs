//! Shared helpers for integration tests: a central-difference gradient oracle,
//! random tensors, and small model fixtures.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segcross::csfm::CsfmConfig;
use segcross::encoder::EncoderConfig;
use segcross::tensor::{Tape, Tensor, Var};
use segcross::textprep::{self, LabeledDocument, PreprocessConfig, SegmentBatch, TokenizedDocument};
use segcross::{Result, SegmenterModel};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries bounded away from zero, for kinked ops like relu.
pub fn random_nonzero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.05 + v.abs());
    }
    t
}

/// Floor for the denominator: central differences at `FD_STEP` carry about
/// 1e-11 of rounding noise, so gradients that are identically zero (the
/// attention key bias, for one) are judged on absolute error instead.
pub const GRAD_NORM_FLOOR: f64 = 1e-6;

/// ||a - n|| / max(||a||, ||n||, GRAD_NORM_FLOOR)
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(GRAD_NORM_FLOOR)
}

/// Scalarizes `out` with a fixed random projection so every output entry matters.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let r = random_tensor(&mut rng(seed), &shape);
    let r = tape.constant(r);
    let prod = tape.mul(out, r)?;
    Ok(tape.sum(prod))
}

pub type Build<'a> = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a>;

/// Worst relative error over all inputs between tape gradients and central
/// differences of the same graph.
pub fn gradient_error(inputs: &[Tensor], build: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = build(&mut t, &vs)?;
        Ok(t.value(l).data()[0])
    };

    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]);
        let mut numeric = vec![0.0; x.numel()];
        let mut probe = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = x.data()[j];
            probe[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    Ok(worst)
}

/// One named gradient case per registered primitive, on random shapes.
pub fn primitive_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor>, Build<'static>)> {
    let mut r = rng(seed);
    let rows = r.random_range(1..5usize);
    let cols = r.random_range(2..6usize);
    let inner = r.random_range(1..5usize);
    let s = seed;
    let m = |r: &mut ChaCha8Rng| random_tensor(r, &[rows, cols]);

    let mut cases: Vec<(&'static str, Vec<Tensor>, Build<'static>)> = Vec::new();
    cases.push(("add", vec![m(&mut r), m(&mut r)], Box::new(move |t, v| {
        let o = t.add(v[0], v[1])?;
        project(t, o, s)
    })));
    cases.push(("sub", vec![m(&mut r), m(&mut r)], Box::new(move |t, v| {
        let o = t.sub(v[0], v[1])?;
        project(t, o, s)
    })));
    cases.push(("mul", vec![m(&mut r), m(&mut r)], Box::new(move |t, v| {
        let o = t.mul(v[0], v[1])?;
        project(t, o, s)
    })));
    cases.push(("add_row_bias", vec![m(&mut r), random_tensor(&mut r, &[cols])], Box::new(move |t, v| {
        let o = t.add_row_bias(v[0], v[1])?;
        project(t, o, s)
    })));
    cases.push(("scale", vec![m(&mut r)], Box::new(move |t, v| {
        let o = t.scale(v[0], -1.7);
        project(t, o, s)
    })));
    cases.push((
        "matmul",
        vec![random_tensor(&mut r, &[rows, inner]), random_tensor(&mut r, &[inner, cols])],
        Box::new(move |t, v| {
            let o = t.matmul(v[0], v[1])?;
            project(t, o, s)
        }),
    ));
    cases.push((
        "linear",
        vec![random_tensor(&mut r, &[rows, inner]), random_tensor(&mut r, &[inner, cols]), random_tensor(&mut r, &[cols])],
        Box::new(move |t, v| {
            let o = t.linear(v[0], v[1], v[2])?;
            project(t, o, s)
        }),
    ));
    cases.push(("transpose", vec![m(&mut r)], Box::new(move |t, v| {
        let o = t.transpose(v[0])?;
        project(t, o, s)
    })));
    cases.push(("relu", vec![random_nonzero(&mut r, &[rows, cols])], Box::new(move |t, v| {
        let o = t.relu(v[0]);
        project(t, o, s)
    })));
    cases.push((
        "concat_cols",
        vec![m(&mut r), random_tensor(&mut r, &[rows, inner])],
        Box::new(move |t, v| {
            let o = t.concat_cols(&[v[0], v[1]])?;
            project(t, o, s)
        }),
    ));
    cases.push(("slice_cols", vec![m(&mut r)], Box::new(move |t, v| {
        let o = t.slice_cols(v[0], 1, cols)?;
        project(t, o, s)
    })));
    cases.push((
        "concat_rows",
        vec![m(&mut r), random_tensor(&mut r, &[inner, cols])],
        Box::new(move |t, v| {
            let o = t.concat_rows(&[v[0], v[1]])?;
            project(t, o, s)
        }),
    ));
    // embedding lookup, with a repeated index so rows accumulate
    let picks: Vec<usize> = (0..rows + 2).map(|i| (i * 3) % rows).collect();
    cases.push(("gather_rows", vec![m(&mut r)], Box::new(move |t, v| {
        let o = t.gather_rows(v[0], &picks)?;
        project(t, o, s)
    })));
    cases.push(("softmax_rows", vec![m(&mut r)], Box::new(move |t, v| {
        let o = t.softmax_rows(v[0], None)?;
        project(t, o, s)
    })));
    let keep: Vec<bool> = (0..cols).map(|c| c != cols - 1).collect();
    cases.push(("softmax_rows_masked", vec![m(&mut r)], Box::new(move |t, v| {
        let o = t.softmax_rows(v[0], Some(&keep))?;
        project(t, o, s)
    })));
    cases.push((
        "layer_norm",
        vec![m(&mut r), random_tensor(&mut r, &[cols]), random_tensor(&mut r, &[cols])],
        Box::new(move |t, v| {
            let o = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(t, o, s)
        }),
    ));
    cases.push(("max_over_rows", vec![m(&mut r)], Box::new(move |t, v| {
        let o = t.max_over_rows(v[0])?;
        project(t, o, s)
    })));
    cases.push(("sum", vec![m(&mut r)], Box::new(|t, v| {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.sum(sq))
    })));
    cases.push(("mean", vec![m(&mut r)], Box::new(|t, v| {
        let sq = t.mul(v[0], v[0])?;
        Ok(t.mean(sq))
    })));
    let labels: Vec<u8> = (0..rows).map(|i| (i % 2) as u8).collect();
    let labels2 = labels.clone();
    cases.push(("cross_entropy", vec![random_tensor(&mut r, &[rows, 2])], Box::new(move |t, v| t.cross_entropy(v[0], &labels))));
    cases.push((
        "weighted_cross_entropy",
        vec![random_tensor(&mut r, &[rows, 2])],
        Box::new(move |t, v| t.weighted_cross_entropy(v[0], &labels2, 2.5)),
    ));
    cases.push(("shared_consumer", vec![m(&mut r)], Box::new(move |t, v| {
        let a = t.relu(v[0]);
        let b = t.mul(v[0], v[0])?;
        let c = t.add(a, b)?;
        let d = t.add(c, v[0])?;
        project(t, d, s)
    })));
    cases
}

/// A small labeled document: `n_par` paragraphs of `per` sentences over a fixed alphabet.
pub fn small_doc(id: &str, n_par: usize, per: usize, seed: u64) -> LabeledDocument {
    let mut r = rng(seed);
    let words = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
    let mut sentences = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n_par {
        for j in 0..per {
            let n = r.random_range(1..4usize);
            sentences.push((0..n).map(|_| words[r.random_range(0..words.len())]).collect::<Vec<_>>().join(" "));
            labels.push(u8::from(j + 1 == per));
        }
    }
    LabeledDocument { id: id.into(), sentences, labels }
}

pub fn tiny_model(doc: &LabeledDocument, n_layers: usize, pre: PreprocessConfig, seed: u64) -> SegmenterModel {
    let vocab = textprep::build_vocab(doc.sentences.iter().map(String::as_str), 1);
    let enc = EncoderConfig {
        d_model: 8,
        n_heads: 2,
        n_layers,
        d_ff: 16,
        max_positions: pre.max_segment_tokens.max(16),
        seed,
        ..Default::default()
    };
    SegmenterModel::new(vocab, pre, enc, CsfmConfig::default()).unwrap()
}

pub fn batch_for(model: &SegmenterModel, doc: &LabeledDocument) -> (TokenizedDocument, SegmentBatch) {
    let tok = model.tokenize(doc).unwrap();
    let batch = textprep::pack_segments(&tok, &model.preprocess, &model.vocab).unwrap();
    (tok, batch)
}

/// Cross-entropy of the full model on one batch.
pub fn model_loss(model: &SegmenterModel, batch: &SegmentBatch, labels: &[u8]) -> f64 {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let logits = model.forward_on_tape(&mut tape, &vars, batch).unwrap();
    let loss = tape.cross_entropy(logits, labels).unwrap();
    tape.value(loss).data()[0]
}

/// Worst per-parameter relative error of the composed encoder + fusion +
/// cross-entropy graph, checking every parameter entry.
pub fn model_gradient_error(model: &SegmenterModel, batch: &SegmentBatch, labels: &[u8]) -> f64 {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let logits = model.forward_on_tape(&mut tape, &vars, batch).unwrap();
    let loss = tape.cross_entropy(logits, labels).unwrap();
    let grads = tape.backward(loss).unwrap();
    let params = vars.all();

    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let n_params = model.named_parameters().len();
    assert_eq!(params.len(), n_params);
    for p in 0..n_params {
        let analytic = grads.wrt(params[p]);
        let n = analytic.numel();
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.parameters_mut()[p].data()[j];
            probe.parameters_mut()[p].data_mut()[j] = orig + FD_STEP;
            let up = model_loss(&probe, batch, labels);
            probe.parameters_mut()[p].data_mut()[j] = orig - FD_STEP;
            let down = model_loss(&probe, batch, labels);
            probe.parameters_mut()[p].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    worst
}

/// Pass/fail line in the acceptance report format.
pub fn report(name: &str, ok: bool, detail: &str) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}
