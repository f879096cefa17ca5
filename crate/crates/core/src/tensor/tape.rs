use super::kernels::{gemm_nt, gemm_tn, normalize_row, softmax_row};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Relu(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    MaxOverRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, labels: Vec<u8>, weights: Vec<f64>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of primitive applications. Nodes are stored in creation
/// order, which is a topological order of the computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when nothing downstream of the loss reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when it did not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        super::kernels::check_2d(self.value(v), what)
    }

    /// Records an input. Gradients are tracked only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |p, q| p + q))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |p, q| p - q))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |p, q| p * q))
    }

    /// `x[m×n] + bias[n]` broadcast over rows; the only broadcast supported.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.value(bias).numel() != n {
            return Err(Error::Shape(format!("bias of {} for {n} columns", self.value(bias).numel())));
        }
        let b = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let data = xv.data().chunks(n).flat_map(|r| r.iter().zip(&b).map(|(p, q)| p + q)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddRowBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v * s).collect()).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, s), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = super::kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `x · w + b` for a `[m×k]` input, `[k×n]` weight and `[n]` bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row_bias(y, b)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|v| v.max(0.0)).collect()).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// Concatenates 2-D tensors with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat of nothing".into()));
        }
        let m = self.dims2(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != m {
                return Err(Error::Shape(format!("concat_cols row counts {m} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![m, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start >= end || end > n {
            return Err(Error::Shape(format!("column slice {start}..{end} of {n}")));
        }
        let src = self.value(x);
        let out: Vec<f64> = (0..m).flat_map(|r| src.row(r)[start..end].iter().copied()).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![m, end - start], out)?, Op::SliceCols(x, start), rg))
    }

    /// Stacks 2-D tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat of nothing".into()));
        }
        let n = self.dims2(parts[0], "concat_rows")?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != n {
                return Err(Error::Shape(format!("concat_rows column counts {n} vs {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![rows, n], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Selects rows of a 2-D tensor (repeats allowed). Serves as embedding lookup.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x, "gather_rows")?;
        if indices.is_empty() {
            return Err(Error::Empty("gather of no rows".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Shape(format!("row {bad} out of range for {m} rows")));
        }
        let src = self.value(x);
        let out: Vec<f64> = indices.iter().flat_map(|&i| src.row(i).iter().copied()).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![indices.len(), n], out)?, Op::GatherRows(x, indices.to_vec()), rg))
    }

    /// Row-wise softmax. `keep_cols[j] == false` masks column `j` to probability 0.
    pub fn softmax_rows(&mut self, x: Var, keep_cols: Option<&[bool]>) -> Result<Var> {
        let (_, n) = self.dims2(x, "softmax_rows")?;
        if let Some(k) = keep_cols {
            if k.len() != n {
                return Err(Error::Shape(format!("mask of {} for {n} columns", k.len())));
            }
            if !k.iter().any(|&b| b) {
                return Err(Error::Input("softmax with every column masked".into()));
            }
        }
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_row(row, keep_cols);
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SoftmaxRows(x), rg))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).cols();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::Shape(format!("layer_norm gain/bias for {d} features")));
        }
        let xv = self.value(x);
        let mut xhat = vec![0.0; xv.numel()];
        let mut inv_std = Vec::with_capacity(xv.rows());
        for (src, dst) in xv.data().chunks(d).zip(xhat.chunks_mut(d)) {
            inv_std.push(normalize_row(src, dst, eps));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let out: Vec<f64> = xhat.chunks(d).flat_map(|r| (0..d).map(move |j| r[j] * g[j] + b[j])).collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, inv_std }, rg))
    }

    /// Column-wise max over the rows of `[k×d]`, producing `[1×d]`.
    pub fn max_over_rows(&mut self, x: Var) -> Result<Var> {
        self.dims2(x, "max_over_rows")?;
        let (values, argmax) = super::kernels::max_over_rows(self.value(x))?;
        let d = values.numel();
        let rg = self.rg(&[x]);
        Ok(self.push(values.reshape(vec![1, d])?, Op::MaxOverRows(x, argmax), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean negative log-likelihood over rows of `logits[n×c]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        self.weighted_cross_entropy(logits, labels, 1.0)
    }

    /// Cross-entropy where rows labeled 1 carry weight `positive_weight`; the
    /// result is normalized by the total weight.
    pub fn weighted_cross_entropy(&mut self, logits: Var, labels: &[u8], positive_weight: f64) -> Result<Var> {
        let (n, c) = self.dims2(logits, "cross_entropy")?;
        if n != labels.len() {
            return Err(Error::Shape(format!("{n} logit rows for {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= c) {
            return Err(Error::Input(format!("label {bad} outside 0..{c}")));
        }
        let weights: Vec<f64> = labels.iter().map(|&y| if y == 1 { positive_weight } else { 1.0 }).collect();
        let wsum: f64 = weights.iter().sum();
        if wsum <= 0.0 {
            return Err(Error::Input("cross-entropy weights sum to zero".into()));
        }
        let lv = self.value(logits);
        let mut probs = lv.data().to_vec();
        let mut total = 0.0;
        for (r, row) in probs.chunks_mut(c).enumerate() {
            total += weights[r] * super::kernels::neg_log_softmax(lv.row(r), labels[r] as usize);
            softmax_row(row, None);
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / wsum),
            Op::CrossEntropy { logits, labels: labels.to_vec(), weights, probs },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!("backward from non-scalar {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out: Vec<Option<Tensor>> = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                g.filter(|_| node.requires_grad)
                    .map(|d| Tensor::new(node.value.shape().to_vec(), d).expect("grad matches shape"))
            })
            .collect();
        out.resize(self.nodes.len(), None);
        Ok(Gradients { grads: out, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |s| {
                    s.iter_mut().zip(g).zip(bv).for_each(|((x, gy), bb)| *x += gy * bb)
                });
                self.accumulate(grads, *b, |s| {
                    s.iter_mut().zip(g).zip(av).for_each(|((x, gy), aa)| *x += gy * aa)
                });
            }
            Op::AddRowBias(x, b) => {
                self.accumulate(grads, *x, |s| add_into(s, g));
                let n = self.value(*b).numel();
                self.accumulate(grads, *b, |s| {
                    for row in g.chunks(n) {
                        add_into(s, row);
                    }
                });
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |s| gemm_nt(g, bv, s, m, n, k));
                self.accumulate(grads, *b, |s| gemm_tn(av, g, s, m, k, n));
            }
            Op::Transpose(x) => {
                let (m, n) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                self.accumulate(grads, *x, |s| {
                    for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |s| {
                    for ((sx, gy), xx) in s.iter_mut().zip(g).zip(xv) {
                        if *xx > 0.0 {
                            *sx += gy;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accumulate(grads, p, |s| {
                        for (r, row) in s.chunks_mut(w).enumerate() {
                            add_into(row, &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let n = self.value(*x).cols();
                let w = node.value.cols();
                self.accumulate(grads, *x, |s| {
                    for (r, grow) in g.chunks(w).enumerate() {
                        add_into(&mut s[r * n + start..r * n + start + w], grow);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    self.accumulate(grads, p, |s| add_into(s, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::GatherRows(x, indices) => {
                let n = self.value(*x).cols();
                self.accumulate(grads, *x, |s| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut s[i * n..(i + 1) * n], &g[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.cols();
                let y = node.value.data();
                self.accumulate(grads, *x, |s| {
                    for ((srow, grow), yrow) in s.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((sx, gy), yy) in srow.iter_mut().zip(grow).zip(yrow) {
                            *sx += yy * (gy - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let d = node.value.cols();
                let gv = self.value(*gain).data();
                self.accumulate(grads, *x, |s| {
                    let mut dxhat = vec![0.0; d];
                    for (r, (srow, grow)) in s.chunks_mut(d).zip(g.chunks(d)).enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = grow[j] * gv[j];
                        }
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let scale = inv_std[r] / d as f64;
                        for j in 0..d {
                            srow[j] += scale * (d as f64 * dxhat[j] - sum_d - xh[j] * sum_dx);
                        }
                    }
                });
                self.accumulate(grads, *gain, |s| {
                    for (grow, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                        s.iter_mut().zip(grow).zip(xh).for_each(|((sx, gy), h)| *sx += gy * h);
                    }
                });
                self.accumulate(grads, *bias, |s| {
                    for grow in g.chunks(d) {
                        add_into(s, grow);
                    }
                });
            }
            Op::MaxOverRows(x, argmax) => {
                let d = argmax.len();
                self.accumulate(grads, *x, |s| {
                    for (c, &r) in argmax.iter().enumerate() {
                        s[r * d + c] += g[c];
                    }
                });
            }
            Op::Sum(x) => self.accumulate(grads, *x, |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                self.accumulate(grads, *x, |s| s.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::CrossEntropy { logits, labels, weights, probs } => {
                let c = self.value(*logits).cols();
                let wsum: f64 = weights.iter().sum();
                self.accumulate(grads, *logits, |s| {
                    for (r, (srow, prow)) in s.chunks_mut(c).zip(probs.chunks(c)).enumerate() {
                        let coef = g[0] * weights[r] / wsum;
                        for (j, (sx, p)) in srow.iter_mut().zip(prow).enumerate() {
                            let onehot = if j == labels[r] as usize { 1.0 } else { 0.0 };
                            *sx += coef * (p - onehot);
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
