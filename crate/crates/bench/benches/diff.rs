use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use cwm_core::diff::{Tape, Tensor};
use cwm_core::model::{encode, ModelConfig, ModelMode, TrainedModel};
use cwm_core::rng::Stream;
use cwm_core::sim::{render, WorldState};

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Stream::new(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn bench_matmul(c: &mut Criterion) {
    let a = random_tensor(&[128, 128], 1);
    let b = random_tensor(&[128, 128], 2);
    c.bench_function("matmul_128", |bch| {
        bch.iter(|| {
            let mut tape = Tape::new();
            let av = tape.leaf(black_box(a.clone()));
            let bv = tape.leaf(black_box(b.clone()));
            tape.matmul(av, bv).unwrap()
        })
    });
}

fn bench_conv_forward_backward(c: &mut Criterion) {
    let x = random_tensor(&[4, 3, 30, 30], 3);
    let w = random_tensor(&[16, 3, 9, 9], 4);
    let bias = Tensor::zeros(&[16]);
    c.bench_function("conv2d_fwd_bwd_4x3x30x30", |bch| {
        bch.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(w.clone());
            let bv = tape.leaf(bias.clone());
            let y = tape.conv2d(xv, wv, bv, 1, 4).unwrap();
            let loss = tape.mean_all(y).unwrap();
            tape.backward(loss).unwrap()
        })
    });
}

fn bench_encode(c: &mut Criterion) {
    let model = TrainedModel::init(
        ModelConfig {
            mode: ModelMode::Cwm,
            k_slots: 2,
            obs_channels: 3,
            resolution: 25,
            conv_channels: 16,
            hidden_dim: 128,
            ..ModelConfig::default()
        },
        7,
    )
    .unwrap();
    let state = WorldState {
        positions: vec![[0.3, 0.4], [0.7, 0.6]],
        velocities: vec![[0.0, 0.0]; 2],
        radii: vec![0.07, 0.05],
        alive: vec![true, true],
    };
    let obs = render(&state, 25).unwrap();
    c.bench_function("encode_25px", |b| {
        b.iter(|| encode(black_box(&obs), &model).unwrap())
    });
}

criterion_group!(benches, bench_matmul, bench_conv_forward_backward, bench_encode);
criterion_main!(benches);
