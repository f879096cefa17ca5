//! Value-level numeric kernels shared by the tape and by inference helpers.

use super::Tensor;
use crate::error::{Error, Result};

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            c[i * k + p] += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in c_row.iter_mut().zip(b_row) {
                *cj += aip * bj;
            }
        }
    }
}

pub(crate) fn check_2d(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{what} expects a 2-D tensor, got {s:?}"))),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = check_2d(a, "matmul")?;
    let (k2, n) = check_2d(b, "matmul")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul {:?} · {:?}", a.shape(), b.shape())));
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

/// Max-subtracted softmax of one row, in place. Entries where `keep` is false
/// are treated as `-inf` logits and get probability exactly 0.
pub(crate) fn softmax_row(row: &mut [f64], keep: Option<&[bool]>) {
    let kept = |j: usize| keep.is_none_or(|k| k[j]);
    let max = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| kept(j))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (j, x) in row.iter_mut().enumerate() {
        if kept(j) {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = 0.0;
        }
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Softmax along `axis`, stabilized by subtracting the maximum.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
    }
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.data().to_vec();
    let mut buf = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = out[idx(j)];
            }
            softmax_row(&mut buf, None);
            for (j, b) in buf.iter().enumerate() {
                out[idx(j)] = *b;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Normalizes `row` to zero mean and unit variance; returns `1/sqrt(var+eps)`.
pub(crate) fn normalize_row(row: &[f64], out: &mut [f64], eps: f64) -> f64 {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    for (o, x) in out.iter_mut().zip(row) {
        *o = (x - mean) * inv_std;
    }
    inv_std
}

/// Row-wise layer normalization over the last axis, then `gain * x̂ + bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.cols();
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::Shape(format!("layer_norm over {d} features with gain/bias {}/{}", gain.numel(), bias.numel())));
    }
    let mut out = vec![0.0; x.numel()];
    for (src, dst) in x.data().chunks(d).zip(out.chunks_mut(d)) {
        normalize_row(src, dst, eps);
        for ((o, g), b) in dst.iter_mut().zip(gain.data()).zip(bias.data()) {
            *o = *o * g + b;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Column-wise maximum over the rows of a `[k×d]` matrix. Ties go to the
/// first row holding the maximum.
pub fn max_over_rows(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (k, d) = match x.shape() {
        [k, d] => (*k, *d),
        [d] => (1, *d),
        s => return Err(Error::Shape(format!("max_over_rows expects [k×d], got {s:?}"))),
    };
    if k == 0 {
        return Err(Error::Empty("max_over_rows over zero rows".into()));
    }
    let mut values = x.data()[..d].to_vec();
    let mut argmax = vec![0; d];
    for r in 1..k {
        for (c, v) in x.data()[r * d..(r + 1) * d].iter().enumerate() {
            if *v > values[c] {
                values[c] = *v;
                argmax[c] = r;
            }
        }
    }
    Ok((Tensor::vector(values), argmax))
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of
/// `logits[n×2]`.
pub fn cross_entropy_value(logits: &Tensor, labels: &[u8]) -> Result<f64> {
    let (n, c) = check_2d(logits, "cross_entropy")?;
    if n != labels.len() {
        return Err(Error::Shape(format!("{n} logit rows for {} labels", labels.len())));
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y as usize >= c {
            return Err(Error::Input(format!("label {y} outside 0..{c}")));
        }
        total += neg_log_softmax(logits.row(r), y as usize);
    }
    Ok(total / n as f64)
}

pub(crate) fn neg_log_softmax(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    lse - row[target]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut c = vec![vec![0.0; b[0].len()]; a.len()];
        for i in 0..a.len() {
            for j in 0..b[0].len() {
                for p in 0..b.len() {
                    c[i][j] += a[i][p] * b[p][j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_examples() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let b = vec![vec![5.0, 6.0], vec![7.0, 8.0]];
        let expected = naive_matmul(&a, &b);
        assert_eq!(expected, vec![vec![19.0, 22.0], vec![43.0, 50.0]]);
        let c = matmul(&Tensor::from_rows(&a).unwrap(), &Tensor::from_rows(&b).unwrap()).unwrap();
        assert_eq!(c, Tensor::from_rows(&expected).unwrap());

        let m = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 9.0], vec![7.0, 1.0, -1.0]]).unwrap();
        assert_eq!(matmul(&m, &Tensor::identity(3)).unwrap(), m);
        assert_eq!(matmul(&m, &Tensor::zeros(&[3, 3])).unwrap(), Tensor::zeros(&[3, 3]));
        assert!(matches!(matmul(&m, &Tensor::zeros(&[2, 3])), Err(Error::Shape(_))));
    }

    #[test]
    fn transposed_gemms_agree_with_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [0.5, -1.0, 2.0, 1.5, 0.0, 3.0]; // 2×3
        let mut c = vec![0.0; 4];
        gemm_nt(&a, &b, &mut c, 2, 3, 2);
        let bt = vec![vec![0.5, 1.5], vec![-1.0, 0.0], vec![2.0, 3.0]];
        let expect = naive_matmul(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], &bt);
        assert_eq!(c, expect.concat());
        let mut d = vec![0.0; 9];
        gemm_tn(&a, &b, &mut d, 2, 3, 3);
        let at = vec![vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 6.0]];
        let expect = naive_matmul(&at, &[vec![0.5, -1.0, 2.0], vec![1.5, 0.0, 3.0]]);
        assert_eq!(d, expect.concat());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::vector(vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::vector(vec![1000.0, 1000.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::vector(vec![0.0, 3f64.ln()]), 0).unwrap();
        // closed form: e^0 / (e^0 + 3)
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let s = softmax(&x, 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn masked_row_softmax() {
        let mut row = [1.0, 5.0, 1.0];
        softmax_row(&mut row, Some(&[true, false, true]));
        assert_eq!(row, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn layer_norm_examples() {
        let g = Tensor::full(&[3], 1.0);
        let b = Tensor::zeros(&[3]);
        let y = layer_norm(&Tensor::full(&[1, 3], 4.2), &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = layer_norm(
            &Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap(),
            &Tensor::full(&[2], 1.0),
            &Tensor::zeros(&[2]),
            0.0,
        )
        .unwrap();
        assert_eq!(y.data(), &[1.0, -1.0]);
        let x = Tensor::from_rows(&[vec![0.3, -2.0, 7.5, 1.25, 0.0]]).unwrap();
        let y = layer_norm(&x, &Tensor::full(&[5], 1.0), &Tensor::zeros(&[5]), 0.0).unwrap();
        let mean = y.data().iter().sum::<f64>() / 5.0;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        assert!(layer_norm(&x, &g, &b, 0.0).is_err());
    }

    #[test]
    fn max_over_rows_examples() {
        let (v, a) = max_over_rows(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!((v.data(), a.as_slice()), (&[1.0, 2.0][..], &[0, 0][..]));
        let (v, a) = max_over_rows(&Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(v.data(), &[3.0, 2.0]);
        assert_eq!(a, vec![1, 0]);
        let (_, a) = max_over_rows(&Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap()).unwrap();
        assert_eq!(a, vec![0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let l = cross_entropy_value(&Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap(), &[1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let l = cross_entropy_value(&Tensor::from_rows(&[vec![30.0, -30.0]]).unwrap(), &[0]).unwrap();
        assert!(l < 1e-20);
        let rows = [vec![1.0, -1.0], vec![-1.0, 1.0]];
        let both = cross_entropy_value(&Tensor::from_rows(&rows).unwrap(), &[0, 1]).unwrap();
        let a = cross_entropy_value(&Tensor::from_rows(&rows[..1]).unwrap(), &[0]).unwrap();
        let b = cross_entropy_value(&Tensor::from_rows(&rows[1..]).unwrap(), &[1]).unwrap();
        assert!((both - (a + b) / 2.0).abs() < 1e-15);
        assert!(matches!(
            cross_entropy_value(&Tensor::from_rows(&rows[..1]).unwrap(), &[2]),
            Err(Error::Input(_))
        ));
    }
}
