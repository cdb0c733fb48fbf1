//! Shared numeric kernels.
//!
//! Both the autodiff graph ops and the closed-form loss evaluators call these
//! functions, so the two code paths agree bit-for-bit on the primitives.

use super::Mat;

/// Numerically stable `log(sum_i exp(v_i))` over `values`, optionally skipping
/// one index (used to exclude an anchor from its own denominator).
pub fn lse_skip(values: &[f64], skip: Option<usize>) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if Some(i) != skip && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if Some(i) != skip {
            sum += (v - max).exp();
        }
    }
    max + sum.ln()
}

/// Row-wise softmax, numerically stable.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Guard against division by zero when normalizing near-zero vectors.
pub const NORM_EPS: f64 = 1e-12;

/// Row-wise L2 normalization: each row is divided by `max(||row||, 1e-12)`.
pub fn l2_normalize_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    out
}

/// Row-wise layer normalization (no affine part): `(x - mean) / sqrt(var + eps)`
/// with population variance.
pub fn layer_norm_rows(x: &Mat, eps: f64) -> Mat {
    let n = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let denom = (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) / denom;
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU activation (tanh approximation, as used by transformer encoders).
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Cosine similarity between two equal-length vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine: length mismatch");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
    dot / (na * nb)
}
