use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rowfollow::control::{generate_waypoints, solve_mpc, MpcConfig};
use rowfollow::estimation::RowRelativeState;
use rowfollow::geometry::{
    ground_truth, render_annotations, CameraAttitude, CameraIntrinsics, CameraPoseInRow,
};
use rowfollow::simulation::{run_suite, run_suite_sequential, FieldModel, TrialConfig};

fn short_suite() -> Vec<TrialConfig> {
    (1..=8)
        .map(|seed| TrialConfig {
            seed,
            field: FieldModel::straight(20.0, 0.75),
            ..TrialConfig::default()
        })
        .collect()
}

fn suite(c: &mut Criterion) {
    let configs = short_suite();
    let mut g = c.benchmark_group("suite_8x20m");
    g.sample_size(10);
    g.bench_function("sequential", |b| {
        b.iter(|| run_suite_sequential(black_box(&configs)))
    });
    // Identical to `sequential` when built without the `parallel` feature.
    g.bench_function("run_suite", |b| b.iter(|| run_suite(black_box(&configs))));
    g.finish();
}

fn mpc(c: &mut Criterion) {
    let cfg = MpcConfig::default();
    let state = RowRelativeState::new(0.25, 0.5, 0.2, 0.0);
    let wps = generate_waypoints(&state, 0.75, &cfg).unwrap();
    c.bench_function("mpc_solve", |b| {
        b.iter(|| solve_mpc(black_box(&wps), &cfg, black_box(0.3)).unwrap())
    });
}

fn geometry(c: &mut Criterion) {
    let cam = CameraIntrinsics::new(400.0, 1280, 960).unwrap();
    let att = CameraAttitude::new(0.05, -0.3, 0.2).unwrap();
    let pose = CameraPoseInRow::from_ratio(att, 0.3, 0.75, 0.4).unwrap();
    let horizon = render_annotations(&pose, &cam, 0).unwrap();
    let stalks = render_annotations(&pose, &cam, 6).unwrap();
    c.bench_function("ground_truth_horizon", |b| {
        b.iter(|| ground_truth(black_box(&horizon), &cam).unwrap())
    });
    c.bench_function("ground_truth_stalks", |b| {
        b.iter(|| ground_truth(black_box(&stalks), &cam).unwrap())
    });
}

criterion_group!(benches, suite, mpc, geometry);
criterion_main!(benches);
