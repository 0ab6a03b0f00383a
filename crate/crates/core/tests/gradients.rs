//! Analytic gradients against central finite differences for every
//! differentiable operation, each over at least 20 random small instances.

mod common;

use clab_core::nn::{Activation, Encoder, EncoderConfig, Graph, ImageShape, InputNorm, Output, ParamSet, StemConfig, Tensor};
use common::*;
use rand::Rng;

const INSTANCES: u64 = 24;
const TOLERANCE: f64 = 1e-4;

fn assert_within(op: &str, seed: u64, err: f64) {
    assert!(err < TOLERANCE, "{op} instance {seed}: relative error {err:e}");
}

/// Values bounded away from zero so that no perturbation crosses a ReLU kink.
fn off_kink(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

#[test]
fn matmul() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
        let w = random_vec(&mut r, m * n, 1.0);
        let inputs = [random_tensor(&mut r, vec![m, k], 1.0), random_tensor(&mut r, vec![k, n], 1.0)];
        let err = fd_graph_error(&inputs, |g, v| {
            let c = g.matmul(v[0], v[1])?;
            project(g, c, &w)
        });
        assert_within("matmul", seed, err);
    }
}

#[test]
fn add_bias() {
    for seed in 0..INSTANCES {
        let mut r = rng(100 + seed);
        let (m, n) = (r.random_range(1..5), r.random_range(1..6));
        let w = random_vec(&mut r, m * n, 1.0);
        let inputs = [random_tensor(&mut r, vec![m, n], 1.0), random_tensor(&mut r, vec![n], 1.0)];
        let err = fd_graph_error(&inputs, |g, v| {
            let y = g.add_bias(v[0], v[1])?;
            project(g, y, &w)
        });
        assert_within("add_bias", seed, err);
    }
}

#[test]
fn relu() {
    for seed in 0..INSTANCES {
        let mut r = rng(200 + seed);
        let (m, n) = (r.random_range(1..5), r.random_range(1..6));
        let w = random_vec(&mut r, m * n, 1.0);
        let inputs = [off_kink(&mut r, vec![m, n])];
        let err = fd_graph_error(&inputs, |g, v| {
            let y = g.relu(v[0])?;
            project(g, y, &w)
        });
        assert_within("relu", seed, err);
    }
}

#[test]
fn l2_normalize() {
    for seed in 0..INSTANCES {
        let mut r = rng(300 + seed);
        let (m, n) = (r.random_range(1..5), r.random_range(2..7));
        let w = random_vec(&mut r, m * n, 1.0);
        let inputs = [off_kink(&mut r, vec![m, n])];
        let err = fd_graph_error(&inputs, |g, v| {
            let y = g.l2_normalize(v[0])?;
            project(g, y, &w)
        });
        assert_within("l2_normalize", seed, err);
    }
}

#[test]
fn reshape_sum_and_scale() {
    for seed in 0..INSTANCES {
        let mut r = rng(400 + seed);
        let (a, b) = (r.random_range(1..4), r.random_range(1..4));
        let factor = r.random_range(-3.0..3.0);
        let w = random_vec(&mut r, a * b, 1.0);
        let inputs = [random_tensor(&mut r, vec![a, b], 1.0)];
        let err = fd_graph_error(&inputs, |g, v| {
            let y = g.reshape(v[0], vec![b, a])?;
            let y = g.scale(y, factor)?;
            project(g, y, &w)
        });
        assert_within("reshape/scale", seed, err);
        let err = fd_graph_error(&inputs, |g, v| {
            let s = g.sum(v[0])?;
            g.scale(s, factor)
        });
        assert_within("sum", seed, err);
    }
}

#[test]
fn im2col() {
    for seed in 0..INSTANCES {
        let mut r = rng(500 + seed);
        let (b, h, w, c) = (r.random_range(1..3), r.random_range(1..5), r.random_range(1..5), r.random_range(1..3));
        let stride = r.random_range(1..3);
        let mut g0 = Graph::no_grad();
        let x0 = g0.input(Tensor::zeros(vec![b, h, w, c]));
        let cols0 = g0.im2col(x0, stride).unwrap();
        let n = g0.value(cols0).numel();
        let weights = random_vec(&mut r, n, 1.0);
        let inputs = [random_tensor(&mut r, vec![b, h, w, c], 1.0)];
        let err = fd_graph_error(&inputs, |g, v| {
            let cols = g.im2col(v[0], stride)?;
            project(g, cols, &weights)
        });
        assert_within("im2col", seed, err);
    }
}

#[test]
fn cross_entropy() {
    for seed in 0..INSTANCES {
        let mut r = rng(600 + seed);
        let (b, c) = (r.random_range(1..6), r.random_range(2..6));
        let labels: Vec<usize> = (0..b).map(|_| r.random_range(0..c)).collect();
        let inputs = [random_tensor(&mut r, vec![b, c], 3.0)];
        let err = fd_graph_error(&inputs, |g, v| g.cross_entropy(v[0], &labels));
        assert_within("cross_entropy", seed, err);
    }
}

#[test]
fn info_nce_through_normalization() {
    for seed in 0..INSTANCES {
        let mut r = rng(700 + seed);
        let (b, d, k) = (r.random_range(1..4), r.random_range(2..6), r.random_range(0..6));
        let tau = r.random_range(0.1..1.0);
        let negatives: Vec<f64> = (0..k).flat_map(|_| random_unit(&mut r, d)).collect();
        let keep: Vec<bool> = (0..b * k).map(|_| r.random_bool(0.7)).collect();
        let inputs = [random_tensor(&mut r, vec![b, d], 1.0), random_tensor(&mut r, vec![b, d], 1.0)];
        let err = fd_graph_error(&inputs, |g, v| {
            let q = g.l2_normalize(v[0])?;
            let kp = g.l2_normalize(v[1])?;
            g.info_nce(q, kp, negatives.clone(), keep.clone(), tau)
        });
        assert_within("info_nce", seed, err);
    }
}

#[test]
fn info_nce_query_gradient_on_the_sphere() {
    // Raw unit inputs: the gradient is taken in the ambient space.
    for seed in 0..INSTANCES {
        let mut r = rng(800 + seed);
        let (d, k) = (r.random_range(2..6), r.random_range(1..8));
        let negatives: Vec<f64> = (0..k).flat_map(|_| random_unit(&mut r, d)).collect();
        let inputs = [
            Tensor::new(vec![1, d], random_unit(&mut r, d)).unwrap(),
            Tensor::new(vec![1, d], random_unit(&mut r, d)).unwrap(),
        ];
        let err = fd_graph_error(&inputs, |g, v| g.info_nce(v[0], v[1], negatives.clone(), vec![true; k], 0.2));
        assert_within("info_nce (unit inputs)", seed, err);
    }
}

fn encoder_config(r: &mut impl Rng) -> EncoderConfig {
    let stem = r.random_bool(0.5).then(|| StemConfig {
        channels: r.random_range(1..4),
        stride: r.random_range(1..3),
    });
    EncoderConfig {
        input: ImageShape::new(r.random_range(2..5), r.random_range(2..5), r.random_range(1..3)),
        input_norm: r.random_bool(0.5).then_some(InputNorm { mean: 0.5, std: 0.25 }),
        stem,
        hidden: vec![r.random_range(2..6)],
        feature_dim: r.random_range(2..5),
        projection_hidden: vec![r.random_range(2..5)],
        projection_dim: r.random_range(2..4),
        activation: Activation::Relu,
    }
}

#[test]
fn encoder_layers_wrt_parameters() {
    for seed in 0..INSTANCES {
        let mut r = rng(900 + seed);
        let cfg = encoder_config(&mut r);
        let enc = Encoder::new(cfg.clone()).unwrap();
        let init = enc.init(seed);
        let names: Vec<String> = init.names().map(str::to_string).collect();
        let b = r.random_range(1..3);
        let batch = random_tensor(&mut r, vec![b, cfg.input.height, cfg.input.width, cfg.input.channels], 1.0);
        let output = if seed % 2 == 0 { Output::Backbone } else { Output::Projected };
        let w = random_vec(&mut r, b * enc.output_dim(output), 1.0);
        // Jitter away from the zero-bias initialization, which can put
        // pre-activations exactly on the ReLU kink.
        let tensors: Vec<Tensor> = names
            .iter()
            .map(|n| {
                let t = init.get(n).unwrap();
                let data = t.data().iter().map(|v| v + r.random_range(-0.2..0.2)).collect();
                Tensor::new(t.shape().to_vec(), data).unwrap()
            })
            .collect();
        let err = fd_max_error(&tensors, |xs, want_grad| {
            let mut params = ParamSet::new();
            for (n, t) in names.iter().zip(xs) {
                params.insert(n.clone(), t.clone()).unwrap();
            }
            let mut g = if want_grad { Graph::new() } else { Graph::no_grad() };
            let bound = g.bind(&params);
            let x = g.input(batch.clone());
            let out = enc.forward_graph(&mut g, &bound, x, output).unwrap();
            let loss = project(&mut g, out, &w).unwrap();
            let value = g.value(loss).data()[0];
            if !want_grad {
                return (value, None);
            }
            let grads = g.backward(loss).unwrap();
            let per = names
                .iter()
                .zip(xs)
                .map(|(n, t)| {
                    let v = bound.var(n).unwrap();
                    grads.get(v).map_or(vec![0.0; t.numel()], |g| g.to_vec())
                })
                .collect();
            (value, Some(per))
        });
        assert_within("encoder", seed, err);
    }
}
