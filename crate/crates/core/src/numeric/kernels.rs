//! Raw loops over row-major slices. Shapes are checked by the callers.

use crate::error::{Error, Result};

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in row.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`
pub fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] += dot(arow, brow);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax over each row of `scores` (`rows × n`), restricted to the columns
/// where `mask` is true. Masked columns come out exactly zero.
pub fn masked_softmax(scores: &[f64], rows: usize, n: usize, mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != rows * n || mask.len() != n {
        return Err(Error::Shape(format!(
            "scores hold {} values for {rows}×{n}, mask has {} entries",
            scores.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::data("every key is masked; softmax row is undefined"));
    }
    let mut out = vec![0.0; rows * n];
    for r in 0..rows {
        softmax_row(&scores[r * n..(r + 1) * n], mask, &mut out[r * n..(r + 1) * n]);
    }
    Ok(out)
}

pub(crate) fn softmax_row(scores: &[f64], mask: &[bool], out: &mut [f64]) {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for ((o, s), &m) in out.iter_mut().zip(scores).zip(mask) {
        *o = if m { (s - max).exp() } else { 0.0 };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Backward of a softmax row: `ds = p ⊙ (dp − Σ p·dp)`.
pub(crate) fn softmax_row_backward(p: &[f64], dp: &[f64], ds: &mut [f64]) {
    let inner = dot(p, dp);
    for ((d, pi), dpi) in ds.iter_mut().zip(p).zip(dp) {
        *d += pi * (dpi - inner);
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `softplus(z) − y·z` in the overflow-free form.
#[inline]
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}
