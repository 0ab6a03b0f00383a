//! Reference implementations shared by the integration suites. Everything
//! here is written from the definitions, independently of the library code
//! it is compared against.
#![allow(dead_code)]

use clab_core::nn::{Graph, Tensor, Var};
use clab_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut impl Rng, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, random_vec(rng, n, scale)).unwrap()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v = random_vec(rng, d, 1.0);
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-3 {
            return unit(&v);
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-ln(e^{q·k/τ} / (e^{q·k/τ} + Σ e^{q·n/τ}))` evaluated term by term.
pub fn info_nce_oracle(q: &[f64], k: &[f64], negatives: &[&[f64]], tau: f64) -> f64 {
    let pos = (dot(q, k) / tau).exp();
    let neg: f64 = negatives.iter().map(|n| (dot(q, n) / tau).exp()).sum();
    -(pos / (pos + neg)).ln()
}

/// Weighted k-NN by full sort: cosine similarity, neighbours ordered by
/// similarity then bank index, votes `exp(s/τ)`, ties to the lower class.
pub fn knn_oracle(bank: &[Vec<f64>], labels: &[usize], query: &[f64], k: usize, tau: f64, classes: usize) -> usize {
    let norm = |v: &[f64]| dot(v, v).sqrt();
    let cos = |a: &[f64], b: &[f64]| {
        let (na, nb) = (norm(a), norm(b));
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum()
        }
    };
    let mut sims: Vec<(f64, usize)> = bank.iter().enumerate().map(|(i, row)| (cos(query, row), i)).collect();
    sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = vec![0.0; classes];
    for &(s, i) in sims.iter().take(k.min(bank.len()).max(1)) {
        votes[labels[i]] += (s / tau).exp();
    }
    let mut best = 0;
    for c in 1..classes {
        if votes[c] > votes[best] {
            best = c;
        }
    }
    best
}

/// Projects any node onto fixed weights so that it becomes a scalar loss.
pub fn project(g: &mut Graph, x: Var, weights: &[f64]) -> Result<Var> {
    let n = g.value(x).numel();
    assert_eq!(n, weights.len());
    let flat = g.reshape(x, vec![1, n])?;
    let w = g.input(Tensor::new(vec![n, 1], weights.to_vec())?);
    let y = g.matmul(flat, w)?;
    g.sum(y)
}

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Largest relative error between the analytic gradient and central
/// differences over every element of every input.
///
/// `eval` returns the scalar value and, when asked, the gradient with
/// respect to each input tensor.
pub fn fd_max_error(
    inputs: &[Tensor],
    eval: impl Fn(&[Tensor], bool) -> (f64, Option<Vec<Vec<f64>>>),
) -> f64 {
    let (_, grads) = eval(inputs, true);
    let grads = grads.expect("analytic gradients requested");
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grads[i][j], numeric));
        }
    }
    worst
}

/// [`fd_max_error`] for losses built from graph inputs.
pub fn fd_graph_error(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    fd_max_error(inputs, |xs, want_grad| {
        let mut g = if want_grad { Graph::new() } else { Graph::no_grad() };
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone())).collect();
        let loss = build(&mut g, &vars).unwrap();
        let value = g.value(loss).data()[0];
        if !want_grad {
            return (value, None);
        }
        let grads = g.backward(loss).unwrap();
        let per_input = vars
            .iter()
            .zip(xs)
            .map(|(v, x)| grads.get(*v).map_or(vec![0.0; x.numel()], |g| g.to_vec()))
            .collect();
        (value, Some(per_input))
    })
}
