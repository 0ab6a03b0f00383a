mod common;

use clab_core::nn::checkpoint::{self, TensorMap};
use clab_core::nn::*;
use clab_core::Error;
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn params_with_grads(seed: u64, grad_scale: f64) -> ParamSet {
    let mut r = rng(seed);
    let mut p = ParamSet::new();
    for i in 0..r.random_range(1..4) {
        let shape = vec![r.random_range(1..5), r.random_range(1..5)];
        let n = shape[0] * shape[1];
        let mut t = random_tensor(&mut r, shape, 1.0);
        let g: Vec<f64> = random_vec(&mut r, n, 1.0).iter().map(|v| v * grad_scale).collect();
        t.accumulate_grad(&g).unwrap();
        p.insert(format!("layer{i}"), t).unwrap();
    }
    p
}

proptest! {
    #[test]
    fn sgd_update_is_invariant_to_grad_and_lr_rescaling(seed in any::<u64>(), exp in -10i32..10, c in 0.001f64..1000.0, lr in 1e-4f64..1.0) {
        let mut base = params_with_grads(seed, 1.0);
        sgd_step(&mut base, lr, 0.0, 0.0).unwrap();
        // Power-of-two factors are exact in binary floating point.
        let p2 = 2f64.powi(exp);
        let mut exact = params_with_grads(seed, p2);
        sgd_step(&mut exact, lr / p2, 0.0, 0.0).unwrap();
        prop_assert!(exact.values_bit_equal(&base));
        let mut scaled = params_with_grads(seed, c);
        sgd_step(&mut scaled, lr / c, 0.0, 0.0).unwrap();
        for ((_, a), (_, b)) in scaled.iter().zip(base.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }
}

#[test]
fn momentum_accumulates_across_steps() {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::scalar(1.0)).unwrap();
    let mut expected = 1.0;
    let mut v = 0.0;
    for step in 0..5 {
        let g = 0.5 * step as f64 - 1.0;
        p.zero_grad();
        p.get_mut("w").unwrap().accumulate_grad(&[g]).unwrap();
        sgd_step(&mut p, 0.1, 0.9, 0.01).unwrap();
        v = 0.9 * v + g + 0.01 * expected;
        expected -= 0.1 * v;
        assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
    }
    assert_eq!(p.step(), 5);
}

#[test]
fn cosine_schedule_decays_monotonically_to_zero() {
    let s = LrSchedule::Cosine { base: 0.1, total_steps: 37 };
    let rates: Vec<f64> = (0..50).map(|t| s.rate(t, &[])).collect();
    assert_eq!(rates[0], 0.1);
    assert!(rates.windows(2).all(|w| w[1] <= w[0]));
    assert!(rates[37].abs() < 1e-18);
    assert_eq!(rates[49], rates[37]);
}

#[test]
fn plateau_schedule_hand_trace() {
    let s = LrSchedule::Plateau { base: 1.0, patience: 2, factor: 0.5, min_delta: 0.0 };
    // Improve, stall twice (halve), stall twice (halve), improve, stall once.
    let history = [1.0, 1.0, 1.1, 0.9, 0.95, 0.5, 0.6];
    let rates: Vec<f64> = (0..=history.len()).map(|i| s.rate(i as u64, &history[..i])).collect();
    assert_eq!(rates, vec![1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5]);
    let s = LrSchedule::Plateau { base: 1.0, patience: 1, factor: 0.5, min_delta: 0.0 };
    assert_eq!(s.rate(4, &[3.0, 3.0, 3.0, 3.0]), 0.125);
}

fn random_tensor_map(r: &mut impl Rng) -> TensorMap {
    let mut map = TensorMap::new();
    for i in 0..r.random_range(0..5) {
        let rank = r.random_range(0..4);
        let shape: Vec<usize> = (0..rank).map(|_| r.random_range(1..4)).collect();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| match r.random_range(0..4) {
                0 => f64::MIN_POSITIVE / 4.0,
                1 => -0.0,
                _ => r.random_range(-1e6..1e6),
            })
            .collect();
        map.insert(format!("t{i}.ünï"), Tensor::new(shape, data).unwrap());
    }
    map
}

proptest! {
    #[test]
    fn checkpoint_encoding_round_trips_bit_exactly(seed in any::<u64>()) {
        let map = random_tensor_map(&mut rng(seed));
        let bytes = checkpoint::encode(&map);
        let back = checkpoint::decode(&bytes).unwrap();
        prop_assert_eq!(back.len(), map.len());
        for ((n1, a), (n2, b)) in map.iter().zip(back.iter()) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
        prop_assert_eq!(checkpoint::encode(&back), bytes);
    }

    #[test]
    fn truncated_checkpoints_are_rejected(seed in any::<u64>(), cut in 0usize..1000) {
        let mut map = random_tensor_map(&mut rng(seed));
        map.insert("last".into(), Tensor::scalar(1.0));
        let bytes = checkpoint::encode(&map);
        let cut = cut % bytes.len();
        prop_assert!(matches!(checkpoint::decode(&bytes[..cut]), Err(Error::Format(_))));
    }
}

#[test]
fn params_with_momentum_round_trip_through_a_file() {
    let mut p = params_with_grads(3, 1.0);
    sgd_step(&mut p, 0.1, 0.9, 0.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.clab");
    let mut map = TensorMap::new();
    checkpoint::insert_params(&mut map, "enc", &p, true);
    checkpoint::save(&path, &map).unwrap();
    let back = checkpoint::extract_params(&checkpoint::load(&path).unwrap(), "enc").unwrap();
    assert!(back.values_bit_equal(&p));
    let buffers = |q: &ParamSet| q.momentum_buffers().map(|(n, t)| (n.to_string(), t.clone())).collect::<Vec<_>>();
    assert_eq!(buffers(&back), buffers(&p));
    assert_eq!(back.momentum_buffers().count(), p.len());
}

fn random_config(r: &mut impl Rng) -> EncoderConfig {
    EncoderConfig {
        input: ImageShape::new(r.random_range(2..6), r.random_range(2..6), r.random_range(1..4)),
        input_norm: r.random_bool(0.5).then_some(InputNorm { mean: 0.5, std: 0.25 }),
        stem: r.random_bool(0.5).then(|| StemConfig {
            channels: r.random_range(1..4),
            stride: r.random_range(1..3),
        }),
        hidden: (0..r.random_range(0..3)).map(|_| r.random_range(1..8)).collect(),
        feature_dim: r.random_range(2..6),
        projection_hidden: vec![r.random_range(1..6)],
        projection_dim: r.random_range(2..5),
        activation: Activation::Relu,
    }
}

proptest! {
    #[test]
    fn projected_embeddings_are_unit_norm(seed in any::<u64>()) {
        let mut r = rng(seed);
        let cfg = random_config(&mut r);
        let enc = Encoder::new(cfg.clone()).unwrap();
        let params = enc.init(seed);
        let b = r.random_range(1..5);
        let x = random_tensor(&mut r, vec![b, cfg.input.height, cfg.input.width, cfg.input.channels], 1.0);
        let z = enc.forward(&params, &x, Output::Projected).unwrap();
        prop_assert_eq!(z.shape(), &[b, cfg.projection_dim][..]);
        for i in 0..b {
            let n = dot(z.row(i), z.row(i));
            // A row can only be zero if every projected unit is dead.
            prop_assert!((n - 1.0).abs() < 1e-12 || n == 0.0, "row {} norm² {}", i, n);
        }
    }
}

/// A short supervised training loop; returns the parameters after every step.
fn train_trajectory(seed: u64) -> Vec<ParamSet> {
    let mut r = rng(77);
    let cfg = EncoderConfig {
        hidden: vec![12],
        feature_dim: 6,
        projection_hidden: vec![6],
        projection_dim: 4,
        ..EncoderConfig::desk_scale(ImageShape::new(4, 4, 3))
    };
    let enc = Encoder::new(cfg).unwrap();
    let head = LinearHead { inputs: 6, classes: 3 };
    let mut params = enc.init(seed);
    let mut head_params = head.init(seed + 1);
    let x = random_tensor(&mut r, vec![9, 4, 4, 3], 1.0);
    let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
    let mut out = Vec::new();
    for _ in 0..20 {
        let mut g = Graph::new();
        let eb = g.bind(&params);
        let hb = g.bind(&head_params);
        let xv = g.input(x.clone());
        let f = enc.forward_graph(&mut g, &eb, xv, Output::Backbone).unwrap();
        let logits = head.forward_graph(&mut g, &hb, f).unwrap();
        let loss = g.cross_entropy(logits, &labels).unwrap();
        let grads = g.backward(loss).unwrap();
        params.zero_grad();
        head_params.zero_grad();
        grads.accumulate_into(&eb, &mut params).unwrap();
        grads.accumulate_into(&hb, &mut head_params).unwrap();
        sgd_step(&mut params, 0.05, 0.9, 1e-4).unwrap();
        sgd_step(&mut head_params, 0.05, 0.9, 1e-4).unwrap();
        out.push(params.weights_only());
    }
    out
}

#[test]
fn identical_seeds_give_bit_identical_trajectories() {
    let (a, b) = (train_trajectory(5), train_trajectory(5));
    assert!(a.iter().zip(&b).all(|(x, y)| x.values_bit_equal(y)));
    let c = train_trajectory(6);
    assert!(!a[19].values_bit_equal(&c[19]));
}

#[test]
fn zero_weight_encoder_gives_zero_features() {
    let mut r = rng(8);
    for _ in 0..10 {
        let cfg = random_config(&mut r);
        let enc = Encoder::new(cfg.clone()).unwrap();
        let mut zeros = ParamSet::new();
        for (name, t) in enc.init(1).iter() {
            zeros.insert(name, Tensor::zeros(t.shape().to_vec())).unwrap();
        }
        let x = random_tensor(&mut r, vec![3, cfg.input.height, cfg.input.width, cfg.input.channels], 1.0);
        let f = enc.forward(&zeros, &x, Output::Backbone).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
        let z = enc.forward(&zeros, &x, Output::Projected).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }
}
