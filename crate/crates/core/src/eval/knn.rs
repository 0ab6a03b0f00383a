use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::functional::{dot, normalize_into};
use crate::nn::Tensor;

use super::features::FeatureBank;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnConfig {
    /// Neighbour count; `None` picks `min(200, N/2)` (at least 1).
    pub k: Option<usize>,
    /// Vote temperature: each neighbour votes `exp(sim / temperature)`.
    pub temperature: f64,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: None,
            temperature: 0.07,
        }
    }
}

impl KnnConfig {
    pub fn validate(&self, field: &str) -> Result<()> {
        if self.k == Some(0) {
            return Err(Error::config(format!("{field}.k"), "must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config(format!("{field}.temperature"), "must be positive"));
        }
        Ok(())
    }

    pub fn resolve_k(&self, n: usize) -> usize {
        self.k.unwrap_or((n / 2).min(200)).clamp(1, n.max(1))
    }
}

fn unit_rows(t: &Tensor) -> Vec<f64> {
    let d = t.shape()[1];
    let mut out = vec![0.0; t.numel()];
    for (src, dst) in t.data().chunks(d).zip(out.chunks_mut(d)) {
        normalize_into(src, dst);
    }
    out
}

/// Weighted k-NN over cosine similarity.
///
/// Neighbours are the `k` largest similarities, ties resolved towards the
/// lower bank index; votes are summed in that order and the class with the
/// largest total wins, ties going to the smaller class index. Zero feature
/// rows have similarity 0 to everything. `k` is clamped to the bank size.
pub fn knn_predict(
    bank: &FeatureBank,
    queries: &Tensor,
    k: usize,
    temperature: f64,
    num_classes: usize,
) -> Result<Vec<usize>> {
    if bank.is_empty() {
        return Err(Error::Contract("k-NN over an empty bank".into()));
    }
    let (_, qd) = queries.matrix_dims()?;
    let d = bank.dim();
    if qd != d {
        return Err(Error::Contract(format!("query dim {qd} does not match bank dim {d}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::config("knn.temperature", "must be positive"));
    }
    if let Some(&bad) = bank.labels().iter().find(|&&l| l >= num_classes) {
        return Err(Error::Contract(format!("bank label {bad} outside 0..{num_classes}")));
    }
    let k = k.clamp(1, bank.len());
    let stored = unit_rows(bank.features());
    let queries = unit_rows(queries);
    let labels = bank.labels();

    let mut sims: Vec<(f64, usize)> = Vec::with_capacity(bank.len());
    let mut votes = vec![0.0; num_classes];
    let mut out = Vec::with_capacity(queries.len() / d);
    for q in queries.chunks(d) {
        sims.clear();
        sims.extend(stored.chunks(d).enumerate().map(|(i, row)| (dot(q, row), i)));
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < sims.len() {
            sims.select_nth_unstable_by(k - 1, order);
            sims.truncate(k);
        }
        sims.sort_unstable_by(order);
        votes.iter_mut().for_each(|v| *v = 0.0);
        for &(s, i) in &sims {
            votes[labels[i]] += (s / temperature).exp();
        }
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> FeatureBank {
        let d = rows[0].len();
        let n = rows.len();
        FeatureBank::new(Tensor::new(vec![n, d], rows.concat()).unwrap(), labels).unwrap()
    }

    #[test]
    fn single_point_bank_always_wins() {
        let b = bank(vec![vec![1.0, 0.0]], vec![3]);
        let q = Tensor::new(vec![2, 2], vec![-1.0, 0.0, 0.2, 0.7]).unwrap();
        assert_eq!(knn_predict(&b, &q, 5, 0.07, 4).unwrap(), vec![3, 3]);
    }

    #[test]
    fn two_term_vote() {
        // sims: A = 0.9/|q| ≈ 0.9939, B ≈ 0.1104; exp(s/0.07) favours A.
        let b = bank(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]);
        let q = Tensor::new(vec![1, 2], vec![0.9, 0.1]).unwrap();
        assert_eq!(knn_predict(&b, &q, 2, 0.07, 2).unwrap(), vec![0]);
    }

    #[test]
    fn zero_rows_have_zero_similarity() {
        let b = bank(vec![vec![0.0, 0.0], vec![-1.0, 0.0]], vec![0, 1]);
        let q = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        // sim 0 beats sim -1 for k=1.
        assert_eq!(knn_predict(&b, &q, 1, 0.07, 2).unwrap(), vec![0]);
    }

    #[test]
    fn default_k() {
        let c = KnnConfig::default();
        assert_eq!(c.resolve_k(1000), 200);
        assert_eq!(c.resolve_k(40), 20);
        assert_eq!(c.resolve_k(1), 1);
    }
}
