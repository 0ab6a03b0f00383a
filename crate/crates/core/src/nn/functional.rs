//! Slice-level numeric kernels shared by graph ops and standalone losses.
//!
//! Graph ops and the public loss functions call the same routines here so
//! that a masked evaluation and a "delete then evaluate" evaluation perform
//! bit-identical arithmetic.

/// Sequential dot product (fixed summation order).
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Norm floor used when normalizing; rows below it map to zero.
pub const NORM_EPS: f64 = 1e-12;

/// Writes `x / max(|x|, eps)` into `out` and returns the divisor used.
pub fn normalize_into(x: &[f64], out: &mut [f64]) -> f64 {
    let norm = l2_norm(x).max(NORM_EPS);
    for (o, v) in out.iter_mut().zip(x) {
        *o = v / norm;
    }
    norm
}

/// Cosine similarity; zero-norm inputs give 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Stable `ln Σ exp(x)` over a non-empty iterator, in iteration order.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Result of one InfoNCE row evaluation.
#[derive(Debug, Clone)]
pub struct InfoNceRow {
    pub loss: f64,
    /// Softmax probability of the positive logit.
    pub p_pos: f64,
    /// Softmax probability of each kept negative, in the order given.
    pub p_neg: Vec<f64>,
}

/// InfoNCE for a single query against its positive and the kept negatives.
///
/// Logits are `q·k/τ`; the positive occupies slot 0 of the softmax.
pub fn info_nce_row<'a>(
    q: &[f64],
    k_pos: &[f64],
    kept_negatives: impl Iterator<Item = &'a [f64]>,
    temperature: f64,
) -> InfoNceRow {
    let mut logits = Vec::with_capacity(64);
    logits.push(dot(q, k_pos) / temperature);
    logits.extend(kept_negatives.map(|n| dot(q, n) / temperature));
    let lse = log_sum_exp(&logits);
    let loss = lse - logits[0];
    let mut probs = logits.iter().map(|l| (l - lse).exp());
    let p_pos = probs.next().unwrap_or(1.0);
    InfoNceRow {
        loss,
        p_pos,
        p_neg: probs.collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive() {
        let v = [0.3, -1.2, 2.5];
        let naive = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - naive).abs() < 1e-14);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn normalize_zero_row_stays_zero() {
        let mut out = [1.0; 3];
        normalize_into(&[0.0; 3], &mut out);
        assert_eq!(out, [0.0; 3]);
    }

    #[test]
    fn cosine_of_zero_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[2.0, 0.0], &[3.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
