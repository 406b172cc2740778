use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mnflow::classify::classify;
use mnflow::datasets::make_orthogonal;
use mnflow::flows::score_flow_numeric;
use mnflow::nets::{gen_noisy, loss_and_grad, LossMode};
use mnflow::{ClosedFormDenoiser, DVector, Metric, NetParams, Norms};

fn denoiser(c: &mut Criterion) {
    let spec = make_orthogonal(31, 30, &Norms::Uniform(1.0), 1).unwrap();
    let den = ClosedFormDenoiser::new(&spec, 0.2).unwrap();
    let y = DVector::from_fn(30, |i, _| 0.03 * i as f64 - 0.2);
    c.bench_function("closed_form_eval_n31", |b| b.iter(|| den.eval(black_box(&y))));
    c.bench_function("closed_form_jacobian_n31", |b| {
        b.iter(|| den.jacobian(black_box(&y), 0.095).unwrap())
    });
}

fn flows(c: &mut Criterion) {
    let spec = make_orthogonal(31, 30, &Norms::Uniform(1.0), 1).unwrap();
    let den = ClosedFormDenoiser::new(&spec, 0.2).unwrap();
    let y0 = DVector::from_fn(30, |i, _| (i as f64 * 0.7).sin() * 10.0);
    c.bench_function("score_flow_3000_iters_n31", |b| {
        b.iter(|| score_flow_numeric(|y| den.eval(y), black_box(&y0), 5e-4, 3000, 0.095).unwrap())
    });
    let end = DVector::from_fn(30, |i, _| if i % 3 == 0 { 1.0 } else { 0.01 });
    c.bench_function("classify_linf_n31", |b| {
        b.iter(|| classify(&spec, black_box(&end), Metric::Linf, 0.2))
    });
}

fn nets(c: &mut Criterion) {
    let spec = make_orthogonal(5, 8, &Norms::Uniform(1.0), 1).unwrap();
    let data = gen_noisy(&spec, 50, 0.05, 2).unwrap();
    let theta = NetParams::init(64, 8, 3);
    let mode = LossMode::Penalized { lambda: 1e-3 };
    c.bench_function("loss_and_grad_k64_m250", |b| {
        b.iter(|| loss_and_grad(black_box(&theta), &data, mode))
    });
}

criterion_group!(benches, denoiser, flows, nets);
criterion_main!(benches);
