//! Helpers shared by the integration test binaries.
#![allow(dead_code)]

use mnflow::datasets::make_orthogonal;
use mnflow::nets::{gen_noisy, loss_and_grad_batch, LossMode, NetParams};
use mnflow::{DMatrix, Norms};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tensors(p: &NetParams) -> [&[f64]; 5] {
    [
        p.w.as_slice(),
        p.b.as_slice(),
        p.a.as_slice(),
        p.v.as_slice(),
        p.c.as_slice(),
    ]
}

fn entry(p: &mut NetParams, t: usize, i: usize) -> &mut f64 {
    match t {
        0 => &mut p.w.as_mut_slice()[i],
        1 => &mut p.b.as_mut_slice()[i],
        2 => &mut p.a.as_mut_slice()[i],
        3 => &mut p.v.as_mut_slice()[i],
        _ => &mut p.c.as_mut_slice()[i],
    }
}

/// Largest `|fd − analytic| / max(|fd|, |analytic|, floor)` over every parameter.
pub fn max_relative_grad_error(theta: &NetParams, y: &DMatrix<f64>, x: &DMatrix<f64>, mode: LossMode, h: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    let (_, grad) = loss_and_grad_batch(theta, y, x, mode);
    let mut worst = 0.0f64;
    for (t, g) in tensors(&grad).iter().enumerate() {
        for (i, &an) in g.iter().enumerate() {
            let mut p = theta.clone();
            *entry(&mut p, t, i) += h;
            let up = loss_and_grad_batch(&p, y, x, mode).0;
            *entry(&mut p, t, i) -= 2.0 * h;
            let down = loss_and_grad_batch(&p, y, x, mode).0;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(FLOOR));
        }
    }
    worst
}

/// A small random instance: data batches, an initialized net, and AL multipliers.
pub struct GradInstance {
    pub theta: NetParams,
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub mu: f64,
    pub lambda: f64,
}

pub fn grad_instance(seed: u64) -> GradInstance {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.random_range(2..5);
    let d = n + r.random_range(0..3);
    let spec = make_orthogonal(n, d, &Norms::Uniform(1.0), seed).unwrap();
    let data = gen_noisy(&spec, r.random_range(2..6), 0.1, seed ^ 1).unwrap();
    let (y, x) = data.batch();
    let mut theta = NetParams::init(r.random_range(3..9), d, seed ^ 2);
    theta.b = theta.b.map(|_| r.random_range(-0.3..0.3));
    theta.c = theta.c.map(|_| r.random_range(-0.3..0.3));
    theta.v += DMatrix::from_fn(d, d, |_, _| r.random_range(-0.1..0.1));
    let q = DMatrix::from_fn(d, y.ncols(), |_, _| r.random_range(-1.0..1.0));
    GradInstance {
        theta,
        y,
        x,
        q,
        mu: r.random_range(0.5..50.0),
        lambda: r.random_range(1e-3..1.0),
    }
}
