use super::Tensor;
use crate::{Error, Result};

/// Lower clamp applied to the reference-side probability inside KL.
pub const KL_CLAMP: f64 = 1e-12;

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param("temperature", format!("{t} must be positive and finite")));
    }
    Ok(())
}

/// Row-wise softmax of `logits / t`, stabilized by subtracting the row max.
pub fn softmax_t(logits: &Tensor, t: f64) -> Result<Tensor> {
    check_temperature(t)?;
    let c = logits.cols();
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(c) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v / t));
        let start = out.len();
        let mut sum = 0.0;
        for &v in row {
            let e = (v / t - m).exp();
            sum += e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e /= sum;
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::dim("cross_entropy labels", logits.shape(), &[labels.len()]));
    }
    let c = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Index { index: bad, bound: c });
    }
    Ok(())
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let c = logits.cols();
    let mut total = 0.0;
    for (row, &l) in logits.data().chunks_exact(c).zip(labels) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        total += lse - (row[l] - m);
    }
    Ok(total / labels.len() as f64)
}

/// Cross-entropy and its gradient `(softmax − onehot) / batch`.
pub fn cross_entropy_grad(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let loss = cross_entropy(logits, labels)?;
    let mut g = softmax_t(logits, 1.0)?;
    let inv = 1.0 / labels.len() as f64;
    for (r, &l) in labels.iter().enumerate() {
        let row = g.row_mut(r);
        row[l] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok((loss, g))
}

fn check_distribution(t: &Tensor, which: &str) -> Result<()> {
    for (r, row) in t.data().chunks_exact(t.cols()).enumerate() {
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Contract(format!("{which} row {r} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("{which} row {r} sums to {s}, not 1")));
        }
    }
    Ok(())
}

/// Mean over rows of `Σ p·(ln p − ln max(q, KL_CLAMP))`, with `0·ln 0 = 0`.
///
/// Terms where `p` and `q` agree bitwise contribute exactly zero, so the
/// divergence of a distribution from itself is `0.0` even below the clamp.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::dim("kl_divergence", p.shape(), q.shape()));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    Ok(kl_rows_unchecked(p.data(), q.data(), p.cols()) / p.rows() as f64)
}

/// Sum over rows of the clamped KL, no validation.
pub(crate) fn kl_rows_unchecked(p: &[f64], q: &[f64], _cols: usize) -> f64 {
    let mut total = 0.0;
    for (&pv, &qv) in p.iter().zip(q) {
        if pv == 0.0 || pv.to_bits() == qv.to_bits() {
            continue;
        }
        total += pv * (pv.ln() - qv.max(KL_CLAMP).ln());
    }
    total
}
