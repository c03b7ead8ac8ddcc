use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use cwm_core::sim::{
    generate_episode_pair, render, step_world, Confounders, EnvConfig, GravityConfig, WorldState,
};

fn crowded_scene(k: usize) -> (WorldState, Confounders) {
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for i in 0..k {
        let fx = (i % 3) as f64;
        let fy = (i / 3) as f64;
        positions.push([0.2 + 0.3 * fx, 0.2 + 0.3 * fy]);
        velocities.push([0.02 * (1.0 - fx), -0.015 * (1.0 - fy)]);
    }
    (
        WorldState {
            positions,
            velocities,
            radii: vec![0.06; k],
            alive: vec![true; k],
        },
        Confounders {
            masses: vec![1.0; k],
            frictions: vec![0.05; k],
            gravity: [0.0, -0.02],
        },
    )
}

fn bench_step(c: &mut Criterion) {
    let (state, u) = crowded_scene(8);
    c.bench_function("step_world_8_balls", |b| {
        b.iter(|| step_world(black_box(&state), black_box(&u), 1.0).unwrap())
    });
}

fn bench_render(c: &mut Criterion) {
    let (state, _) = crowded_scene(6);
    c.bench_function("render_6_balls_50px", |b| {
        b.iter(|| render(black_box(&state), 50).unwrap())
    });
}

fn bench_episode(c: &mut Criterion) {
    let cfg = EnvConfig {
        balls: 3,
        horizon_factual: 29,
        horizon_cf: 29,
        resolution: 50,
        gravity: GravityConfig::Fixed { value: [0.0, 0.0] },
        ..EnvConfig::default()
    };
    c.bench_function("generate_episode_pair_t29_50px", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            generate_episode_pair(black_box(seed), &cfg).unwrap()
        })
    });
}

criterion_group!(benches, bench_step, bench_render, bench_episode);
criterion_main!(benches);
