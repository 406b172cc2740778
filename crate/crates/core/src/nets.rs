//! Shallow ReLU denoiser `h(y) = Σ_k a_k [w_k·y + b_k]_+ + V y + c` and its training.
//!
//! Batches are stored column-wise (`d × B`). Sample `(n, m)` sits at column
//! `n·M + m`. Only `a_k` and `w_k` are regularized.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;

use crate::datasets::DatasetSpec;
use crate::denoiser::ClosedFormDenoiser;
use crate::error::{Error, Result};
use crate::flows::{LevelDenoiser, NoiseSchedule};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    /// `K × d`, rows are `w_k`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `d × K`, columns are `a_k`.
    pub a: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl NetParams {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            w: DMatrix::zeros(k, d),
            b: DVector::zeros(k),
            a: DMatrix::zeros(d, k),
            v: DMatrix::zeros(d, d),
            c: DVector::zeros(d),
        }
    }

    /// `W, A ~ N(0, 1/d)`, `b = 0`, `V = I`, `c = 0`: starts as the identity map plus small ReLU terms.
    pub fn init(k: usize, d: usize, seed: u64) -> Self {
        assert!(k >= 1 && d >= 1);
        let mut r = rng::seeded(seed);
        let dist = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let mut p = Self::zeros(k, d);
        p.w = DMatrix::from_fn(k, d, |_, _| r.sample(dist));
        p.a = DMatrix::from_fn(d, k, |_, _| r.sample(dist));
        p.v = DMatrix::identity(d, d);
        p
    }

    /// Exact network form of a closed-form denoiser: its neurons, no skip, base as output bias.
    pub fn from_closed_form(den: &ClosedFormDenoiser) -> Self {
        let (neurons, base) = den.neurons();
        let d = base.len();
        let mut p = Self::zeros(neurons.len(), d);
        for (k, n) in neurons.iter().enumerate() {
            p.w.set_row(k, &n.w.transpose());
            p.a.set_column(k, &n.a);
            p.b[k] = n.b;
        }
        p.c = base;
        p
    }

    pub fn width(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn tensors(&self) -> [&[f64]; 5] {
        [
            self.w.as_slice(),
            self.b.as_slice(),
            self.a.as_slice(),
            self.v.as_slice(),
            self.c.as_slice(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w.as_mut_slice(),
            self.b.as_mut_slice(),
            self.a.as_mut_slice(),
            self.v.as_mut_slice(),
            self.c.as_mut_slice(),
        ]
    }

    pub fn forward(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut z = &self.w * y + &self.b;
        z.apply(|x| *x = x.max(0.0));
        &self.a * z + &self.v * y + &self.c
    }

    /// Forward pass on the columns of `y`.
    pub fn forward_batch(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = &self.w * y;
        for mut col in h.column_iter_mut() {
            col += &self.b;
            col.apply(|x| *x = x.max(0.0));
        }
        let mut out = &self.a * h + &self.v * y;
        for mut col in out.column_iter_mut() {
            col += &self.c;
        }
        out
    }
}

pub fn forward(theta: &NetParams, y: &DVector<f64>) -> DVector<f64> {
    theta.forward(y)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepresentationCost {
    /// `½ Σ (‖a_k‖² + ‖w_k‖²)`.
    pub raw: f64,
    /// `Σ ‖a_k‖ ‖w_k‖`, which equals `raw` at a balanced minimum.
    pub balanced: f64,
}

pub fn representation_cost(theta: &NetParams) -> RepresentationCost {
    let raw = 0.5 * (theta.a.norm_squared() + theta.w.norm_squared());
    let balanced = (0..theta.width())
        .map(|k| theta.a.column(k).norm() * theta.w.row(k).norm())
        .sum();
    RepresentationCost { raw, balanced }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyDataset {
    /// `N × d`.
    pub clean: DMatrix<f64>,
    /// `(N·M) × d`; row `n·M + m` is `x_n + ε_{n,m}`.
    pub noisy: DMatrix<f64>,
    pub m: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl NoisyDataset {
    pub fn n_clean(&self) -> usize {
        self.clean.nrows()
    }

    pub fn len(&self) -> usize {
        self.noisy.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy.nrows() == 0
    }

    /// Inputs and matching targets as `d × (N·M)` column batches.
    pub fn batch(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let y = self.noisy.transpose();
        let x = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| self.clean[(j / self.m, i)]);
        (y, x)
    }
}

/// `M` Gaussian perturbations of every point of `spec`, drawn in row order from one seeded stream.
pub fn gen_noisy(spec: &DatasetSpec, m: usize, sigma: f64, seed: u64) -> Result<NoisyDataset> {
    if m == 0 {
        return Err(Error::Precondition("M must be at least 1".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Precondition("sigma must be non-negative".into()));
    }
    let (n, d) = (spec.len(), spec.dim());
    let clean = DMatrix::from_fn(n, d, |i, j| spec.points[i][j]);
    let mut r = rng::seeded(seed);
    let mut noisy = DMatrix::zeros(n * m, d);
    for row in 0..n * m {
        for j in 0..d {
            let e: f64 = r.sample(StandardNormal);
            noisy[(row, j)] = clean[(row / m, j)] + sigma * e;
        }
    }
    Ok(NoisyDataset {
        clean,
        noisy,
        m,
        sigma,
        seed,
    })
}

#[derive(Clone, Copy, Debug)]
pub enum LossMode<'a> {
    /// `C(θ) + (1/B) Σ [(μ/2)‖h(y)−x‖² + q·(h(y)−x)]`; `q` is `d × B`.
    AugmentedLagrangian { mu: f64, q: &'a DMatrix<f64> },
    /// `(1/B) Σ ‖h(y)−x‖² + λ C(θ)`.
    Penalized { lambda: f64 },
}

/// Loss and gradient on full batches `y`, `x` (`d × B`). The ReLU derivative at 0 is 0.
pub fn loss_and_grad_batch(theta: &NetParams, y: &DMatrix<f64>, x: &DMatrix<f64>, mode: LossMode) -> (f64, NetParams) {
    let bsz = y.ncols() as f64;
    let mut z = &theta.w * y;
    for mut col in z.column_iter_mut() {
        col += &theta.b;
    }
    let h = z.map(|v| v.max(0.0));
    let mut r = &theta.a * &h + &theta.v * y - x;
    for mut col in r.column_iter_mut() {
        col += &theta.c;
    }
    let reg = 0.5 * (theta.a.norm_squared() + theta.w.norm_squared());
    let (loss, g, reg_scale) = match mode {
        LossMode::AugmentedLagrangian { mu, q } => {
            let fit = 0.5 * mu * r.norm_squared() + q.dot(&r);
            (reg + fit / bsz, (r * mu + q) / bsz, 1.0)
        }
        LossMode::Penalized { lambda } => (r.norm_squared() / bsz + lambda * reg, r * (2.0 / bsz), lambda),
    };
    // Products are arranged so the large operand is never transposed; `tr_mul` skips the blocked GEMM.
    let mut dz = theta.a.transpose() * &g;
    dz.zip_apply(&z, |d, zv| {
        if zv <= 0.0 {
            *d = 0.0
        }
    });
    let grad = NetParams {
        w: &dz * y.transpose() + &theta.w * reg_scale,
        b: dz.column_sum(),
        a: (&h * g.transpose()).transpose() + &theta.a * reg_scale,
        v: &g * y.transpose(),
        c: g.column_sum(),
    };
    (loss, grad)
}

pub fn loss_and_grad(theta: &NetParams, data: &NoisyDataset, mode: LossMode) -> (f64, NetParams) {
    let (y, x) = data.batch();
    loss_and_grad_batch(theta, &y, &x, mode)
}

/// `max_{n,m} ‖h(y_{n,m}) − x_n‖_∞`.
pub fn max_interp_error(theta: &NetParams, data: &NoisyDataset) -> f64 {
    let (y, x) = data.batch();
    (theta.forward_batch(&y) - x).amax()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for every parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: NetParams,
    v: NetParams,
    steps: i32,
}

impl Adam {
    pub fn new(k: usize, d: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: NetParams::zeros(k, d),
            v: NetParams::zeros(k, d),
            steps: 0,
        }
    }

    pub fn step(&mut self, theta: &mut NetParams, grad: &NetParams, lr: f64) {
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.steps);
        let c2 = 1.0 - beta2.powi(self.steps);
        let params = theta.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grad.tensors()).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

pub fn adam_step(opt: &mut Adam, theta: &mut NetParams, grad: &NetParams, lr: f64) {
    opt.step(theta, grad, lr);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlConfig {
    pub width: usize,
    pub lr0: f64,
    pub inner: usize,
    pub eta: f64,
    /// Last round index; rounds `0..=outer` are run.
    pub outer: usize,
    /// Initial penalty. Near 1 the first round settles on the saddle `A = W = 0`
    /// where the skip connection alone fits the noisy data in least squares.
    pub mu0: f64,
    pub seed: u64,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            width: 64,
            lr0: 1e-4,
            inner: 10_000,
            eta: 3.0,
            outer: 7,
            mu0: 1000.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlState {
    pub mu: f64,
    /// `d × (N·M)` multipliers.
    pub q: DMatrix<f64>,
    pub outer_k: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    /// Penalty weight used during this round.
    pub mu: f64,
    pub lr: f64,
    pub loss: f64,
    pub max_err: f64,
    /// `h(y) − x` at the end of the round, `d × (N·M)`.
    pub residuals: DMatrix<f64>,
}

fn check_data(spec: &DatasetSpec, data: &NoisyDataset) -> Result<()> {
    if data.clean.nrows() != spec.len() || data.clean.ncols() != spec.dim() || data.is_empty() {
        return Err(Error::Precondition(
            "noisy dataset does not match the dataset spec".into(),
        ));
    }
    Ok(())
}

pub fn train_al(spec: &DatasetSpec, data: &NoisyDataset, cfg: &AlConfig) -> Result<NetParams> {
    train_al_observed(spec, data, cfg, |_, _, _| {})
}

/// Augmented Lagrangian training. Each round minimizes the AL loss by full-batch Adam,
/// warm-started from the previous round, then updates `q += μ(h(y) − x)`, `μ *= η`, `lr /= 2`.
/// `observer` sees every round's log, the parameters, and the updated state.
pub fn train_al_observed<F>(
    spec: &DatasetSpec,
    data: &NoisyDataset,
    cfg: &AlConfig,
    mut observer: F,
) -> Result<NetParams>
where
    F: FnMut(&RoundLog, &NetParams, &AlState),
{
    check_data(spec, data)?;
    if !(cfg.mu0 > 0.0 && cfg.eta > 1.0 && cfg.lr0 > 0.0 && cfg.width >= 1) {
        return Err(Error::Precondition("need mu0 > 0, eta > 1, lr0 > 0, width >= 1".into()));
    }
    let (y, x) = data.batch();
    let d = spec.dim();
    let mut theta = NetParams::init(cfg.width, d, cfg.seed);
    let mut state = AlState {
        mu: cfg.mu0,
        q: DMatrix::zeros(d, y.ncols()),
        outer_k: 0,
        lr: cfg.lr0,
    };
    for round in 0..=cfg.outer {
        let mut opt = Adam::new(cfg.width, d, AdamConfig::default());
        let mut loss = f64::NAN;
        for step in 0..cfg.inner {
            let (l, g) = loss_and_grad_batch(
                &theta,
                &y,
                &x,
                LossMode::AugmentedLagrangian {
                    mu: state.mu,
                    q: &state.q,
                },
            );
            if !l.is_finite() {
                return Err(Error::Diverged { round, step });
            }
            loss = l;
            opt.step(&mut theta, &g, state.lr);
        }
        if !theta.is_finite() {
            return Err(Error::Diverged { round, step: cfg.inner });
        }
        let residuals = theta.forward_batch(&y) - &x;
        let log = RoundLog {
            round,
            mu: state.mu,
            lr: state.lr,
            loss,
            max_err: residuals.amax(),
            residuals,
        };
        state.q += &log.residuals * state.mu;
        state.mu *= cfg.eta;
        state.lr *= 0.5;
        state.outer_k = round + 1;
        observer(&log, &theta, &state);
    }
    Ok(theta)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenalizedConfig {
    pub width: usize,
    pub lr: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Default for PenalizedConfig {
    fn default() -> Self {
        Self {
            width: 64,
            lr: 1e-3,
            iters: 20_000,
            seed: 0,
        }
    }
}

/// Plain full-batch Adam on `MSE + λ C(θ)`; `λ = 0` is the unregularized baseline.
pub fn train_penalized(
    spec: &DatasetSpec,
    data: &NoisyDataset,
    lambda: f64,
    cfg: &PenalizedConfig,
) -> Result<NetParams> {
    check_data(spec, data)?;
    if !(lambda >= 0.0 && cfg.lr > 0.0 && cfg.width >= 1) {
        return Err(Error::Precondition("need lambda >= 0, lr > 0, width >= 1".into()));
    }
    let (y, x) = data.batch();
    let d = spec.dim();
    let mut theta = NetParams::init(cfg.width, d, cfg.seed);
    let mut opt = Adam::new(cfg.width, d, AdamConfig::default());
    for step in 0..cfg.iters {
        let (l, g) = loss_and_grad_batch(&theta, &y, &x, LossMode::Penalized { lambda });
        if !l.is_finite() {
            return Err(Error::Diverged { round: 0, step });
        }
        opt.step(&mut theta, &g, cfg.lr);
    }
    Ok(theta)
}

/// Training recipe for one net per noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Recipe {
    AugmentedLagrangian(AlConfig),
    Penalized { lambda: f64, cfg: PenalizedConfig },
}

/// Noise and initialization seeds of level `k`: streams `2k` and `2k + 1` of `seed`.
pub fn level_seeds(seed: u64, k: usize) -> (u64, u64) {
    (
        rng::task_rng(seed, 2 * k as u64).random(),
        rng::task_rng(seed, 2 * k as u64 + 1).random(),
    )
}

/// Independent nets, one per schedule level; level `k` (1-based) uses `nets[k − 1]`.
#[derive(Clone, Debug)]
pub struct TrainedFamily {
    pub nets: Vec<NetParams>,
}

impl TrainedFamily {
    /// Trains every level in parallel, seeded by [`level_seeds`].
    pub fn train(spec: &DatasetSpec, sched: &NoiseSchedule, m: usize, recipe: Recipe, seed: u64) -> Result<Self> {
        let spec = Arc::new(spec.clone());
        let nets = (1..=sched.len())
            .into_par_iter()
            .map(|k| {
                let (noise_seed, init_seed) = level_seeds(seed, k);
                let data = gen_noisy(&spec, m, sched.sigma(k), noise_seed)?;
                match recipe {
                    Recipe::AugmentedLagrangian(cfg) => train_al(&spec, &data, &AlConfig { seed: init_seed, ..cfg }),
                    Recipe::Penalized { lambda, cfg } => {
                        train_penalized(&spec, &data, lambda, &PenalizedConfig { seed: init_seed, ..cfg })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nets })
    }
}

impl LevelDenoiser for TrainedFamily {
    fn denoise(&self, y: &DVector<f64>, level: usize, _sigma: f64) -> DVector<f64> {
        self.nets[level - 1].forward(y)
    }
}

fn write_block<W: Write>(
    out: &mut W,
    label: &str,
    rows: usize,
    cols: usize,
    at: impl Fn(usize, usize) -> f64,
) -> std::io::Result<()> {
    writeln!(out, "{label}")?;
    for i in 0..rows {
        let line: Vec<String> = (0..cols).map(|j| format!("{}", at(i, j))).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Plain-text checkpoint: `K d sigma seed`, then labeled row-major blocks `W`, `b`, `A`, `V`, `c`.
/// Vectors are written as one row. Values round-trip exactly.
pub fn write_checkpoint<W: Write>(out: &mut W, theta: &NetParams, sigma: f64, seed: u64) -> Result<()> {
    let (k, d) = (theta.width(), theta.dim());
    writeln!(out, "{k} {d} {sigma} {seed}")?;
    write_block(out, "W", k, d, |i, j| theta.w[(i, j)])?;
    write_block(out, "b", 1, k, |_, j| theta.b[j])?;
    write_block(out, "A", d, k, |i, j| theta.a[(i, j)])?;
    write_block(out, "V", d, d, |i, j| theta.v[(i, j)])?;
    write_block(out, "c", 1, d, |_, j| theta.c[j])?;
    Ok(())
}

/// Inverse of [`write_checkpoint`]; returns the parameters, sigma, and seed.
pub fn read_checkpoint<R: BufRead>(input: R) -> Result<(NetParams, f64, u64)> {
    let mut lines = input.lines();
    // Comment lines carry provenance and are skipped.
    let mut next = || -> Result<String> {
        loop {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("checkpoint ends early".into()))??;
            if !line.starts_with('#') {
                return Ok(line);
            }
        }
    };
    let header = next()?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [k, d, sigma, seed] = fields.as_slice() else {
        return Err(Error::Parse(format!("bad checkpoint header {header:?}")));
    };
    let bad = |what: &str| Error::Parse(format!("bad checkpoint {what}"));
    let k: usize = k.parse().map_err(|_| bad("K"))?;
    let d: usize = d.parse().map_err(|_| bad("d"))?;
    let sigma: f64 = sigma.parse().map_err(|_| bad("sigma"))?;
    let seed: u64 = seed.parse().map_err(|_| bad("seed"))?;
    let mut block = |label: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
        if next()?.trim() != label {
            return Err(Error::Parse(format!("expected block {label}")));
        }
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            let line = next()?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| bad(&format!("value {s:?} in {label}"))))
                .collect::<Result<_>>()?;
            if vals.len() != cols {
                return Err(Error::Parse(format!(
                    "block {label} row {i} has {} values, expected {cols}",
                    vals.len()
                )));
            }
            m.row_mut(i).copy_from_slice(&vals);
        }
        Ok(m)
    };
    let w = block("W", k, d)?;
    let b = DVector::from_column_slice(block("b", 1, k)?.as_slice());
    let a = block("A", d, k)?;
    let v = block("V", d, d)?;
    let c = DVector::from_column_slice(block("c", 1, d)?.as_slice());
    Ok((NetParams { w, b, a, v, c }, sigma, seed))
}
