use std::hint::black_box;

use clab_core::contrastive::{moco_step, ContrastiveConfig, KeyQueue, MomentumPair};
use clab_core::data::{generate_synthetic, sample_pair, AugmentationPolicy, PairMode, PositivePair, SyntheticSpec};
use clab_core::eval::{knn_predict, FeatureBank};
use clab_core::nn::{Encoder, EncoderConfig, Graph, Output, SgdConfig, Tensor};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, vec![64, 768]);
    let b = random(&mut rng, vec![768, 256]);
    c.bench_function("matmul 64x768x256", |bench| {
        bench.iter(|| {
            let mut g = Graph::no_grad();
            let (x, w) = (g.input(a.clone()), g.input(b.clone()));
            let y = g.matmul(x, w).unwrap();
            black_box(g.value(y).data()[0])
        })
    });
}

fn encoder(c: &mut Criterion) {
    let spec = SyntheticSpec::new(10, 10, 4, 1);
    let enc = Encoder::new(EncoderConfig::desk_scale(spec.image_shape())).unwrap();
    let params = enc.init(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, vec![64, 16, 16, 3]);
    c.bench_function("encoder forward, batch 64", |bench| {
        bench.iter(|| black_box(enc.forward(&params, &x, Output::Projected).unwrap()))
    });
}

fn moco(c: &mut Criterion) {
    let spec = SyntheticSpec::new(10, 10, 4, 1);
    let data = generate_synthetic(&spec).unwrap().unlabeled();
    let enc = Encoder::new(EncoderConfig::desk_scale(spec.image_shape())).unwrap();
    let policy = AugmentationPolicy::pretraining_upright(16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch: Vec<PositivePair> = (0..64)
        .map(|i| sample_pair(&data, i, PairMode::Mocotp, &policy, &mut rng))
        .collect();
    let cfg = ContrastiveConfig::new(PairMode::Mocotp);
    let mut pair = MomentumPair::new(enc.init(1), 0.99).unwrap();
    let mut queue = KeyQueue::new(1024, enc.config().projection_dim).unwrap();
    // Fill the queue so every step scores against all 1024 negatives.
    for _ in 0..16 {
        moco_step(&enc, &mut pair, &mut queue, &batch, &cfg, &SgdConfig::default(), 0.0).unwrap();
    }
    c.bench_function("moco_step, batch 64, queue 1024", |bench| {
        bench.iter_batched(
            || (pair.clone(), queue.clone()),
            |(mut p, mut q)| moco_step(&enc, &mut p, &mut q, &batch, &cfg, &SgdConfig::default(), 0.03).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn knn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let labels: Vec<usize> = (0..3200).map(|i| i % 10).collect();
    let bank = FeatureBank::new(random(&mut rng, vec![3200, 128]), labels).unwrap();
    let queries = random(&mut rng, vec![800, 128]);
    c.bench_function("knn 800 queries, bank 3200x128, k 200", |bench| {
        bench.iter(|| black_box(knn_predict(&bank, &queries, 200, 0.07, 10).unwrap()))
    });
}

criterion_group!(benches, matmul, encoder, moco, knn);
criterion_main!(benches);
