//! One driver per CLI subcommand. Each writes provenance-stamped files under
//! `output.dir` and returns the numbers it reported.
//!
//! Parallel work uses the ambient rayon pool; results are collected in task
//! order so reruns reproduce every CSV byte for byte.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;

use super::config::{DenoiserSource, ExperimentConfig, FlowChoice, TrainConfig, TrainMode};
use super::output::{self, Quiver};
use crate::classify::{self, classify_with, ConvergenceLabel, Metric, StatsReport, CATEGORIES};
use crate::datasets::{
    augment_boundary_points, make_equilateral_triangle, make_obtuse_simplex, make_orthogonal, virtual_point,
    write_spec, DatasetKind, DatasetSpec, Norms,
};
use crate::denoiser::{default_rho, taylor_eval_orthogonal, ClosedFormDenoiser, ClosedFormFamily};
use crate::error::{Error, Result};
use crate::flows::{
    make_schedule, prob_flow_numeric_with, score_flow_numeric_with, LevelDenoiser, NoiseSchedule, Record, Trajectory,
};
use crate::nets::{
    gen_noisy, level_seeds, read_checkpoint, representation_cost, train_al_observed, train_penalized, write_checkpoint,
    AlConfig, NetParams, PenalizedConfig, Recipe, TrainedFamily,
};
use crate::rng;
use crate::stability::{classify_stability, fixed_point_iterate, obtuse_sum_stability, subsets_of_size};

/// Files written and a few human-readable result lines.
pub trait Outcome {
    fn files(&self) -> &[PathBuf];
    fn summary(&self) -> Vec<String>;
}

/// Dataset described by `[dataset]` with `n` points (base included). The triangle ignores `n`.
pub fn build_dataset(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<DatasetSpec> {
    let ds = &cfg.dataset;
    let spec = match ds.kind {
        DatasetKind::Orthogonal => make_orthogonal(n, ds.d, &Norms::Uniform(ds.norm), seed)?,
        DatasetKind::ObtuseSimplex => make_obtuse_simplex(n, ds.d, seed)?,
        DatasetKind::EquilateralTriangle => make_equilateral_triangle(ds.d, ds.side)?,
    };
    if ds.augment == 0 {
        return Ok(spec);
    }
    augment_boundary_points(&spec, ds.augment, rng::task_rng(seed, 0).random())
}

/// Ball radius of the fixed-level denoiser: the configured value, else `√d σ` capped at `rho_cap · min‖x‖`.
pub fn score_rho(cfg: &ExperimentConfig, spec: &DatasetSpec) -> f64 {
    cfg.flow
        .rho
        .unwrap_or_else(|| default_rho(spec.dim(), cfg.flow.sigma).min(cfg.flow.rho_cap * spec.min_norm()))
}

/// `α` of `ρ_t = α σ_t`: the configured value, else `√d`.
pub fn flow_alpha(cfg: &ExperimentConfig, spec: &DatasetSpec) -> f64 {
    cfg.flow.alpha.unwrap_or_else(|| (spec.dim() as f64).sqrt())
}

pub fn schedule(cfg: &ExperimentConfig, spec: &DatasetSpec) -> Result<NoiseSchedule> {
    make_schedule(cfg.flow.t_final, cfg.flow.steps, cfg.flow.split, flow_alpha(cfg, spec))
}

fn require_kind(spec: &DatasetSpec, kind: DatasetKind, command: &str) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::Config(format!(
            "{command} needs a {kind} dataset, got {}",
            spec.kind
        )));
    }
    Ok(())
}

/// Denoiser at the single level `flow.sigma`.
pub enum FixedDenoiser {
    ClosedForm(ClosedFormDenoiser),
    Net(NetParams),
}

impl FixedDenoiser {
    pub fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            FixedDenoiser::ClosedForm(den) => den.eval(y),
            FixedDenoiser::Net(theta) => theta.forward(y),
        }
    }
}

fn recipe(tr: &TrainConfig) -> Recipe {
    match tr.mode {
        TrainMode::AugmentedLagrangian => Recipe::AugmentedLagrangian(AlConfig {
            width: tr.width,
            lr0: tr.lr0,
            inner: tr.inner,
            eta: tr.eta,
            outer: tr.outer,
            mu0: tr.mu0,
            seed: tr.seed,
        }),
        TrainMode::Penalized => Recipe::Penalized {
            lambda: tr.lambda,
            cfg: PenalizedConfig {
                width: tr.width,
                lr: tr.lr,
                iters: tr.iters,
                seed: tr.seed,
            },
        },
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    /// NaN for penalized training.
    pub mu: f64,
    pub lr: f64,
    pub loss: f64,
    pub max_err: f64,
    pub cost_raw: f64,
    pub cost_balanced: f64,
}

/// Trains one net on `M` noisy copies per point at noise `sigma`.
/// Level `k` draws from [`level_seeds`]`(seed, k)`, the same streams [`TrainedFamily::train`] uses.
pub fn train_level(
    spec: &DatasetSpec,
    tr: &TrainConfig,
    m: usize,
    sigma: f64,
    k: usize,
) -> Result<(NetParams, Vec<RoundRow>)> {
    let (noise_seed, init_seed) = level_seeds(tr.seed, k);
    let data = gen_noisy(spec, m, sigma, noise_seed)?;
    let mut rows = Vec::new();
    let theta = match recipe(tr) {
        Recipe::AugmentedLagrangian(cfg) => {
            train_al_observed(spec, &data, &AlConfig { seed: init_seed, ..cfg }, |log, theta, _| {
                let cost = representation_cost(theta);
                rows.push(RoundRow {
                    round: log.round,
                    mu: log.mu,
                    lr: log.lr,
                    loss: log.loss,
                    max_err: log.max_err,
                    cost_raw: cost.raw,
                    cost_balanced: cost.balanced,
                });
            })?
        }
        Recipe::Penalized { lambda, cfg } => {
            let cfg = PenalizedConfig { seed: init_seed, ..cfg };
            let theta = train_penalized(spec, &data, lambda, &cfg)?;
            let (y, x) = data.batch();
            let resid = theta.forward_batch(&y) - x;
            let cost = representation_cost(&theta);
            let mse = resid.norm_squared() / y.ncols() as f64;
            rows.push(RoundRow {
                round: 0,
                mu: f64::NAN,
                lr: cfg.lr,
                loss: mse + lambda * cost.raw,
                max_err: resid.amax(),
                cost_raw: cost.raw,
                cost_balanced: cost.balanced,
            });
            theta
        }
    };
    Ok((theta, rows))
}

fn checkpoint_name(level: usize) -> String {
    format!("level_{level:04}.txt")
}

/// Every `level_*.txt` in `dir`, in level order, with its noise std.
pub fn load_checkpoints(dir: &Path, d: usize) -> Result<Vec<(NetParams, f64)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Config(format!("checkpoint dir {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("level_") && n.ends_with(".txt"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no checkpoints in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let (theta, sigma, _) = read_checkpoint(BufReader::new(fs::File::open(p)?))?;
            if theta.dim() != d {
                return Err(Error::Config(format!(
                    "{} has dimension {}, dataset has {d}",
                    p.display(),
                    theta.dim()
                )));
            }
            Ok((theta, sigma))
        })
        .collect()
}

/// Resolves the configured denoiser at `flow.sigma`. Loaded checkpoints supply the level nearest in σ.
pub fn fixed_denoiser(cfg: &ExperimentConfig, spec: &DatasetSpec, m: usize) -> Result<FixedDenoiser> {
    let sigma = cfg.flow.sigma;
    match &cfg.flow.denoiser {
        DenoiserSource::ClosedForm => Ok(FixedDenoiser::ClosedForm(ClosedFormDenoiser::new(
            spec,
            score_rho(cfg, spec),
        )?)),
        DenoiserSource::Train => Ok(FixedDenoiser::Net(train_level(spec, &cfg.train, m, sigma, 0)?.0)),
        DenoiserSource::Trained(dir) => {
            let nets = load_checkpoints(dir, spec.dim())?;
            let best = nets
                .into_iter()
                .min_by(|a, b| (a.1 - sigma).abs().total_cmp(&(b.1 - sigma).abs()))
                .expect("at least one checkpoint");
            Ok(FixedDenoiser::Net(best.0))
        }
    }
}

/// Resolves the configured denoiser family over `sched`.
pub fn level_denoiser(
    cfg: &ExperimentConfig,
    spec: &DatasetSpec,
    sched: &NoiseSchedule,
    m: usize,
) -> Result<Box<dyn LevelDenoiser>> {
    match &cfg.flow.denoiser {
        DenoiserSource::ClosedForm => Ok(Box::new(ClosedFormFamily::new(
            spec,
            flow_alpha(cfg, spec),
            cfg.flow.rho_cap,
        ))),
        DenoiserSource::Train => Ok(Box::new(TrainedFamily::train(
            spec,
            sched,
            m,
            recipe(&cfg.train),
            cfg.train.seed,
        )?)),
        DenoiserSource::Trained(dir) => {
            let nets = load_checkpoints(dir, spec.dim())?;
            if nets.len() != sched.len() {
                return Err(Error::Config(format!(
                    "{} checkpoints for {} levels",
                    nets.len(),
                    sched.len()
                )));
            }
            for (k, (_, s)) in nets.iter().enumerate() {
                if (s - sched.sigma(k + 1)).abs() > 1e-9 * sched.sigma(k + 1) {
                    return Err(Error::Config(format!(
                        "checkpoint {} has sigma {s}, schedule has {}",
                        k + 1,
                        sched.sigma(k + 1)
                    )));
                }
            }
            Ok(Box::new(TrainedFamily {
                nets: nets.into_iter().map(|n| n.0).collect(),
            }))
        }
    }
}

/// The flow a sampling run integrates.
pub enum Sampler {
    Score(FixedDenoiser),
    Prob(Box<dyn LevelDenoiser>, NoiseSchedule),
}

impl Sampler {
    pub fn resolve(cfg: &ExperimentConfig, spec: &DatasetSpec, m: usize) -> Result<Self> {
        Ok(match cfg.flow.kind {
            FlowChoice::Score => Sampler::Score(fixed_denoiser(cfg, spec, m)?),
            FlowChoice::Prob => {
                let sched = schedule(cfg, spec)?;
                Sampler::Prob(level_denoiser(cfg, spec, &sched, m)?, sched)
            }
        })
    }
}

/// Terminal states of a batch of flows. Non-finite runs are listed by id and have no terminal.
pub struct SampleRun {
    pub ids: Vec<usize>,
    pub terminals: Vec<DVector<f64>>,
    pub nonfinite: Vec<usize>,
    /// Thinned trajectories, filled only when requested.
    pub dumps: Vec<(usize, Trajectory)>,
}

/// Starts trajectory `i` from stream `i` of `seed`: `N(0, start_std² I)` for the
/// score flow, `N(0, T I)` for the probability flow.
pub fn run_flows(
    cfg: &ExperimentConfig,
    spec: &DatasetSpec,
    sampler: &Sampler,
    seed: u64,
    dump: bool,
) -> Result<SampleRun> {
    let fl = &cfg.flow;
    let d = spec.dim();
    let std = match sampler {
        Sampler::Score(_) => fl.start_std,
        Sampler::Prob(..) => fl.t_final.sqrt(),
    };
    let record = match (dump, sampler) {
        (false, _) => Record::Terminal,
        (true, Sampler::Score(_)) => Record::Every((fl.iters / 200).max(1)),
        (true, Sampler::Prob(..)) => Record::All,
    };
    let results: Vec<Result<Option<Trajectory>>> = (0..fl.samples)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::task_rng(seed, i as u64);
            let y0 = DVector::from_fn(d, |_, _| std * Distribution::<f64>::sample(&StandardNormal, &mut r));
            let out = match sampler {
                Sampler::Score(den) => {
                    score_flow_numeric_with(|y| den.eval(y), &y0, fl.gamma, fl.iters, fl.sigma, record)
                }
                Sampler::Prob(den, sched) => prob_flow_numeric_with(den.as_ref(), &y0, sched, record),
            };
            match out {
                Ok(t) => Ok(Some(t)),
                Err(Error::NonFinite { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut run = SampleRun {
        ids: Vec::new(),
        terminals: Vec::new(),
        nonfinite: Vec::new(),
        dumps: Vec::new(),
    };
    for (i, res) in results.into_iter().enumerate() {
        match res? {
            Some(t) => {
                run.ids.push(i);
                run.terminals.push(t.terminal().clone());
                if dump {
                    run.dumps.push((i, t));
                }
            }
            None => run.nonfinite.push(i),
        }
    }
    Ok(run)
}

/// Labels for every configured `(metric, threshold)` pair, in config order.
pub fn label_terminals(
    cfg: &ExperimentConfig,
    spec: &DatasetSpec,
    terminals: &[DVector<f64>],
) -> Vec<(Metric, f64, Vec<ConvergenceLabel>)> {
    let mut out = Vec::new();
    for &metric in &cfg.classify.metrics {
        for &thr in &cfg.classify.thresholds {
            let labels = terminals
                .par_iter()
                .map(|y| classify_with(spec, y, metric, thr, &cfg.classify.precedence))
                .collect();
            out.push((metric, thr, labels));
        }
    }
    out
}

fn category_legend(spec: &DatasetSpec) -> (Vec<usize>, Vec<&'static str>) {
    let idx: Vec<usize> = (0..CATEGORIES.len())
        .filter(|&i| i != 2 || spec.n_augmented() > 0)
        .collect();
    let names = idx.iter().map(|&i| CATEGORIES[i]).collect();
    (idx, names)
}

const STATS_HEADER: [&str; 9] = [
    "metric",
    "threshold",
    "total",
    "nonfinite",
    "training",
    "virtual",
    "augmented",
    "boundary",
    "other",
];

fn stats_record(st: &StatsReport, nonfinite: usize) -> Vec<String> {
    let mut rec = vec![
        st.metric.to_string(),
        st.threshold.to_string(),
        st.total.to_string(),
        nonfinite.to_string(),
    ];
    rec.extend(st.fractions.iter().map(|f| f.to_string()));
    rec
}

pub struct SampleReport {
    pub stats: Vec<StatsReport>,
    pub nonfinite: Vec<usize>,
    pub files: Vec<PathBuf>,
}

impl Outcome for SampleReport {
    fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn summary(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .stats
            .iter()
            .map(|st| {
                let parts: Vec<String> = CATEGORIES
                    .iter()
                    .zip(&st.fractions)
                    .map(|(c, f)| format!("{c}={:.3}", f))
                    .collect();
                format!("{} <= {}: {}", st.metric, st.threshold, parts.join(" "))
            })
            .collect();
        if !self.nonfinite.is_empty() {
            lines.push(format!(
                "{} non-finite trajectories excluded: {:?}",
                self.nonfinite.len(),
                self.nonfinite
            ));
        }
        lines
    }
}

pub fn cmd_sample(cfg: &ExperimentConfig) -> Result<SampleReport> {
    let prov = cfg.provenance("sample");
    let dir = &cfg.output.dir;
    let spec = build_dataset(cfg, cfg.dataset.n, cfg.dataset.seed)?;
    require_kind(&spec, DatasetKind::Orthogonal, "sample")?;
    let sampler = Sampler::resolve(cfg, &spec, cfg.train.samples_for(spec.len() - 1))?;
    let run = run_flows(cfg, &spec, &sampler, cfg.flow.seed, cfg.output.dump_trajectories)?;
    let labelled = label_terminals(cfg, &spec, &run.terminals);
    let mut files = Vec::new();

    let stats: Vec<StatsReport> = labelled
        .iter()
        .map(|(_, _, l)| classify::aggregate(l))
        .collect::<Result<_>>()?;
    let path = dir.join("stats.csv");
    let mut w = output::csv_writer(&path, &prov)?;
    w.write_record(STATS_HEADER)?;
    for st in &stats {
        w.write_record(stats_record(st, run.nonfinite.len()))?;
    }
    w.flush()?;
    files.push(path);

    let path = dir.join("labels.csv");
    let mut w = output::csv_writer(&path, &prov)?;
    w.write_record(["traj_id", "metric", "threshold", "kind", "detail", "distance"])?;
    for (metric, thr, labels) in &labelled {
        for (id, l) in run.ids.iter().zip(labels) {
            w.write_record([
                id.to_string(),
                metric.to_string(),
                thr.to_string(),
                l.kind.name().to_string(),
                l.kind.detail(),
                l.distance.to_string(),
            ])?;
        }
    }
    for id in &run.nonfinite {
        w.write_record([
            id.to_string(),
            String::new(),
            String::new(),
            "nonfinite".into(),
            String::new(),
            String::new(),
        ])?;
    }
    w.flush()?;
    files.push(path);

    if cfg.output.dump_trajectories {
        let path = dir.join("trajectories.csv");
        write_trajectories(&path, &prov, spec.dim(), &run.dumps)?;
        files.push(path);
    }

    if spec.n_dirs() >= 3 {
        let axes = cfg.classify.axes;
        let first = &labelled[0].2;
        let path = dir.join("projection.csv");
        let mut w = output::csv_writer(&path, &prov)?;
        w.write_record([
            "traj_id".to_string(),
            format!("u{}", axes[0]),
            format!("u{}", axes[1]),
            format!("u{}", axes[2]),
            "kind".into(),
        ])?;
        let mut series: Vec<output::Series> = CATEGORIES
            .iter()
            .zip(&cfg.output.colors)
            .map(|(c, col)| (c.to_string(), col.clone(), Vec::new()))
            .collect();
        for ((id, y), l) in run.ids.iter().zip(&run.terminals).zip(first) {
            let p = classify::project3(&spec, y, axes)?;
            w.write_record([
                id.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                p[2].to_string(),
                l.kind.name().into(),
            ])?;
            series[l.kind.category()].2.push((p[0], p[1]));
        }
        w.flush()?;
        files.push(path);
        series.retain(|s| !s.2.is_empty());
        let path = dir.join("projection.svg");
        output::scatter(
            &path,
            &prov,
            "terminal states",
            (&format!("u{}", axes[0]), &format!("u{}", axes[1])),
            &series,
        )?;
        files.push(path);
    }

    let (idx, legend) = category_legend(&spec);
    let groups: Vec<(String, Vec<f64>)> = stats
        .iter()
        .map(|st| {
            (
                format!("{} {}", st.metric, st.threshold),
                idx.iter().map(|&i| st.fractions[i]).collect(),
            )
        })
        .collect();
    let colors: Vec<String> = idx.iter().map(|&i| cfg.output.colors[i].clone()).collect();
    let path = dir.join("stats.svg");
    output::stacked_bars(&path, &prov, "convergence categories", &groups, &legend, &colors)?;
    files.push(path);

    Ok(SampleReport {
        stats,
        nonfinite: run.nonfinite,
        files,
    })
}

fn write_trajectories(path: &Path, prov: &str, d: usize, dumps: &[(usize, Trajectory)]) -> Result<()> {
    let mut w = output::csv_writer(path, prov)?;
    let mut header = vec!["traj_id".to_string(), "step".into(), "t".into(), "sigma".into()];
    header.extend((0..d).map(|j| format!("coord_{j}")));
    w.write_record(&header)?;
    for (id, t) in dumps {
        for (k, y) in t.states.iter().enumerate() {
            let mut rec = vec![
                id.to_string(),
                k.to_string(),
                t.times[k].to_string(),
                t.sigmas[k].to_string(),
            ];
            rec.extend(y.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointRow {
    pub cardinality: usize,
    pub threshold: f64,
    pub total: usize,
    pub stable: usize,
    /// Largest L∞ drift from the start over all subsets of this cardinality.
    pub max_drift: f64,
}

impl FixedPointRow {
    pub fn percent(&self) -> f64 {
        100.0 * self.stable as f64 / self.total as f64
    }
}

pub struct FixedPointReport {
    pub rows: Vec<FixedPointRow>,
    pub files: Vec<PathBuf>,
}

impl Outcome for FixedPointReport {
    fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn summary(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "cardinality {}: {}/{} stable ({:.1}%) at L_inf {}, max drift {:.3e}",
                    r.cardinality,
                    r.stable,
                    r.total,
                    r.percent(),
                    r.threshold,
                    r.max_drift
                )
            })
            .collect()
    }
}

/// L∞ drift of every subset sum of the given cardinality after the fixed-point budget.
/// Non-finite iterations count as infinite drift.
pub fn fixed_point_drifts(
    den: &FixedDenoiser,
    spec: &DatasetSpec,
    cardinality: usize,
    iters: usize,
) -> Result<Vec<f64>> {
    let mut subsets = Vec::new();
    subsets_of_size(spec.n_dirs(), cardinality, &mut subsets);
    subsets
        .par_iter()
        .map(|s| {
            let p = virtual_point(spec, s)?;
            match fixed_point_iterate(|y| den.eval(y), &p, iters) {
                Ok(t) => Ok((t.terminal() - &p).amax()),
                Err(Error::NonFinite { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
        .collect()
}

pub fn cmd_fixed_point(cfg: &ExperimentConfig) -> Result<FixedPointReport> {
    let prov = cfg.provenance("fixed-point");
    let dir = &cfg.output.dir;
    let spec = build_dataset(cfg, cfg.dataset.n, cfg.dataset.seed)?;
    require_kind(&spec, DatasetKind::Orthogonal, "fixed-point")?;
    let den = fixed_denoiser(cfg, &spec, cfg.train.samples_for(spec.len() - 1))?;
    let mut rows = Vec::new();
    for k in 2..=cfg.flow.max_cardinality.min(spec.n_dirs()) {
        let drifts = fixed_point_drifts(&den, &spec, k, cfg.flow.fixed_point_iters)?;
        let max_drift = drifts.iter().copied().fold(0.0, f64::max);
        for &thr in &cfg.classify.thresholds {
            let stable = drifts.iter().filter(|&&x| x <= thr).count();
            rows.push(FixedPointRow {
                cardinality: k,
                threshold: thr,
                total: drifts.len(),
                stable,
                max_drift,
            });
        }
    }
    let mut files = Vec::new();
    let path = dir.join("fixed_point.csv");
    let mut w = output::csv_writer(&path, &prov)?;
    w.write_record(["cardinality", "threshold", "total", "stable", "percent", "max_drift"])?;
    for r in &rows {
        w.write_record([
            r.cardinality.to_string(),
            r.threshold.to_string(),
            r.total.to_string(),
            r.stable.to_string(),
            r.percent().to_string(),
            r.max_drift.to_string(),
        ])?;
    }
    w.flush()?;
    files.push(path);

    let thr = cfg.classify.thresholds[0];
    let groups: Vec<(String, Vec<f64>)> = rows
        .iter()
        .filter(|r| r.threshold == thr)
        .map(|r| {
            let f = r.stable as f64 / r.total as f64;
            (format!("k={}", r.cardinality), vec![f, 1.0 - f])
        })
        .collect();
    let colors = vec![cfg.output.colors[1].clone(), cfg.output.colors[4].clone()];
    let path = dir.join("fixed_point.svg");
    output::stacked_bars(
        &path,
        &prov,
        &format!("subset sums within {thr} (L_inf)"),
        &groups,
        &["stable", "moved"],
        &colors,
    )?;
    files.push(path);
    Ok(FixedPointReport { rows, files })
}

/// Mean category fractions over the seeds of one `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepMean {
    pub n: usize,
    pub metric: Metric,
    pub threshold: f64,
    pub runs: usize,
    pub fractions: [f64; 5],
}

pub struct SweepReport {
    /// `(N, seed index, stats per (metric, threshold))`.
    pub runs: Vec<(usize, usize, Vec<StatsReport>)>,
    pub means: Vec<SweepMean>,
    pub files: Vec<PathBuf>,
}

impl Outcome for SweepReport {
    fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn summary(&self) -> Vec<String> {
        self.means
            .iter()
            .map(|m| {
                let parts: Vec<String> = CATEGORIES
                    .iter()
                    .zip(&m.fractions)
                    .map(|(c, f)| format!("{c}={f:.3}"))
                    .collect();
                format!(
                    "N={} {} <= {} ({} seeds): {}",
                    m.n,
                    m.metric,
                    m.threshold,
                    m.runs,
                    parts.join(" ")
                )
            })
            .collect()
    }
}

/// `n_values` count non-base points; run `s` uses dataset seed `dataset.seed + s` and flow seed `flow.seed + s`.
pub fn cmd_sweep_n(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let prov = cfg.provenance("sweep-n");
    let dir = &cfg.output.dir;
    let mut runs = Vec::new();
    let mut nonfinite = Vec::new();
    for &n in &cfg.dataset.n_values {
        for s in 0..cfg.dataset.sweep_seeds {
            let spec = build_dataset(cfg, n + 1, cfg.dataset.seed + s as u64)?;
            require_kind(&spec, DatasetKind::Orthogonal, "sweep-n")?;
            let sampler = Sampler::resolve(cfg, &spec, cfg.train.samples_for(n))?;
            let run = run_flows(cfg, &spec, &sampler, cfg.flow.seed + s as u64, false)?;
            let stats = label_terminals(cfg, &spec, &run.terminals)
                .iter()
                .map(|(_, _, l)| classify::aggregate(l))
                .collect::<Result<Vec<_>>>()?;
            nonfinite.push(run.nonfinite.len());
            runs.push((n, s, stats));
        }
    }
    let mut means = Vec::new();
    for &n in &cfg.dataset.n_values {
        let group: Vec<&Vec<StatsReport>> = runs.iter().filter(|r| r.0 == n).map(|r| &r.2).collect();
        for (j, first) in group[0].iter().enumerate() {
            let mut fractions = [0.0; 5];
            for stats in &group {
                for (acc, f) in fractions.iter_mut().zip(&stats[j].fractions) {
                    *acc += f / group.len() as f64;
                }
            }
            means.push(SweepMean {
                n,
                metric: first.metric,
                threshold: first.threshold,
                runs: group.len(),
                fractions,
            });
        }
    }

    let mut files = Vec::new();
    let path = dir.join("sweep_runs.csv");
    let mut w = output::csv_writer(&path, &prov)?;
    let mut header = vec!["n", "seed"];
    header.extend(STATS_HEADER);
    w.write_record(&header)?;
    for ((n, s, stats), nf) in runs.iter().zip(&nonfinite) {
        for st in stats {
            let mut rec = vec![n.to_string(), s.to_string()];
            rec.extend(stats_record(st, *nf));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    files.push(path);

    let path = dir.join("sweep_mean.csv");
    let mut w = output::csv_writer(&path, &prov)?;
    let mut header = vec!["n", "metric", "threshold", "runs"];
    header.extend(CATEGORIES);
    w.write_record(&header)?;
    for m in &means {
        let mut rec = vec![
            m.n.to_string(),
            m.metric.to_string(),
            m.threshold.to_string(),
            m.runs.to_string(),
        ];
        rec.extend(m.fractions.iter().map(|f| f.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    files.push(path);

    let (m0, t0) = (cfg.classify.metrics[0], cfg.classify.thresholds[0]);
    let augmented = cfg.dataset.augment > 0 && cfg.dataset.kind == DatasetKind::Orthogonal;
    let idx: Vec<usize> = (0..5).filter(|&i| i != 2 || augmented).collect();
    let legend: Vec<&str> = idx.iter().map(|&i| CATEGORIES[i]).collect();
    let colors: Vec<String> = idx.iter().map(|&i| cfg.output.colors[i].clone()).collect();
    let groups: Vec<(String, Vec<f64>)> = means
        .iter()
        .filter(|m| m.metric == m0 && m.threshold == t0)
        .map(|m| (format!("N={}", m.n), idx.iter().map(|&i| m.fractions[i]).collect()))
        .collect();
    let path = dir.join("sweep.svg");
    output::stacked_bars(
        &path,
        &prov,
        &format!("categories by N ({m0} <= {t0})"),
        &groups,
        &legend,
        &colors,
    )?;
    files.push(path);
    Ok(SweepReport { runs, means, files })
}

/// Orthonormal `(e1, e2)` spanning the directions of a planar dataset.
pub fn plane_basis(spec: &DatasetSpec) -> Result<(DVector<f64>, DVector<f64>)> {
    const TOL: f64 = 1e-9;
    let d = spec.dim();
    if d < 2 {
        return Err(Error::NotPlanar);
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let candidates = (0..spec.n_dirs())
        .map(|i| spec.unit(i))
        .chain((0..d).map(|j| DVector::from_fn(d, |i, _| f64::from(u8::from(i == j)))));
    for (pos, v) in candidates.enumerate() {
        let mut r = v.clone();
        for e in &basis {
            r -= e * e.dot(&v);
        }
        let norm = r.norm();
        if norm > TOL {
            if basis.len() == 2 {
                if pos < spec.n_dirs() {
                    return Err(Error::NotPlanar);
                }
                break;
            }
            basis.push(r / norm);
        }
    }
    Ok((basis[0].clone(), basis[1].clone()))
}

/// Score of `den`, optionally reshaped to `s · ln‖s‖ / ‖s‖` (zero where the score vanishes).
pub fn field_vector(den: &ClosedFormDenoiser, y: &DVector<f64>, sigma: f64, normalize: bool) -> DVector<f64> {
    let s = den.score(y, sigma);
    let n = s.norm();
    if !normalize {
        s
    } else if n == 0.0 {
        s * 0.0
    } else {
        s * (n.ln() / n)
    }
}

/// Part of the line `{p : n·p = c}` inside the rectangle, if any.
fn clip_line(
    n: (f64, f64),
    c: f64,
    ((x0, y0), (x1, y1)): ((f64, f64), (f64, f64)),
) -> Option<((f64, f64), (f64, f64))> {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    if n.1.abs() > 1e-12 {
        for x in [x0, x1] {
            let y = (c - n.0 * x) / n.1;
            if y >= y0 && y <= y1 {
                pts.push((x, y));
            }
        }
    }
    if n.0.abs() > 1e-12 {
        for y in [y0, y1] {
            let x = (c - n.1 * y) / n.0;
            if x >= x0 && x <= x1 {
                pts.push((x, y));
            }
        }
    }
    let a = *pts.first()?;
    let b = pts.iter().copied().max_by(|p, q| {
        let dp = (p.0 - a.0).hypot(p.1 - a.1);
        let dq = (q.0 - a.0).hypot(q.1 - a.1);
        dp.total_cmp(&dq)
    })?;
    Some((a, b))
}

pub struct FieldReport {
    /// `(x, y, fx, fy)` in plane coordinates around the base point.
    pub grid: Vec<(f64, f64, f64, f64)>,
    /// Boundary lines clipped to the plotted window.
    pub lines: Vec<((f64, f64), (f64, f64))>,
    pub files: Vec<PathBuf>,
}

impl Outcome for FieldReport {
    fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn summary(&self) -> Vec<String> {
        vec![format!(
            "{} grid points, {} boundary lines",
            self.grid.len(),
            self.lines.len()
        )]
    }
}

/// Plane coordinates are `(e1·(y − base), e2·(y − base))` with [`plane_basis`].
pub fn cmd_field(cfg: &ExperimentConfig) -> Result<FieldReport> {
    let prov = cfg.provenance("field");
    let dir = &cfg.output.dir;
    let spec = build_dataset(cfg, cfg.dataset.n, cfg.dataset.seed)?;
    let (e1, e2) = plane_basis(&spec)?;
    let den = ClosedFormDenoiser::new(&spec, score_rho(cfg, &spec))?;
    let to_plane = |y: &DVector<f64>| {
        let v = y - &spec.base;
        (e1.dot(&v), e2.dot(&v))
    };
    let pts: Vec<(f64, f64)> = spec.points.iter().map(to_plane).collect();
    let (mut lo, mut hi) = ((0.0f64, 0.0f64), (0.0f64, 0.0f64));
    for p in &pts {
        lo = (lo.0.min(p.0), lo.1.min(p.1));
        hi = (hi.0.max(p.0), hi.1.max(p.1));
    }
    let pad = 0.25 * (hi.0 - lo.0).max(hi.1 - lo.1);
    let extent = ((lo.0 - pad, lo.1 - pad), (hi.0 + pad, hi.1 + pad));
    let g = cfg.flow.grid.max(2);
    let at = |i: usize, a: f64, b: f64| a + (b - a) * i as f64 / (g - 1) as f64;
    let grid: Vec<(f64, f64, f64, f64)> = (0..g * g)
        .into_par_iter()
        .map(|idx| {
            let (x, y) = (
                at(idx % g, extent.0 .0, extent.1 .0),
                at(idx / g, extent.0 .1, extent.1 .1),
            );
            let p = &spec.base + &e1 * x + &e2 * y;
            let f = field_vector(&den, &p, cfg.flow.sigma, cfg.flow.normalize);
            (x, y, e1.dot(&f), e2.dot(&f))
        })
        .collect();
    let lines: Vec<_> = (0..spec.n_dirs())
        .flat_map(|i| {
            let u = spec.unit(i);
            let n = (u.dot(&e1), u.dot(&e2));
            let (lo, hi, _) = den.branch(i);
            [lo, hi].into_iter().filter_map(move |c| clip_line(n, c, extent))
        })
        .collect();

    let mut files = Vec::new();
    let path = dir.join("field.csv");
    let mut w = output::csv_writer(&path, &prov)?;
    w.write_record(["x", "y", "fx", "fy"])?;
    for (x, y, fx, fy) in &grid {
        w.write_record([x.to_string(), y.to_string(), fx.to_string(), fy.to_string()])?;
    }
    w.flush()?;
    files.push(path);

    // The SVG thins the grid to at most ~25 arrows per side to stay small.
    let stride = g.div_ceil(25);
    let cell = (extent.1 .0 - extent.0 .0) / (g - 1) as f64 * stride as f64;
    let shown: Vec<_> = grid
        .iter()
        .enumerate()
        .filter(|(idx, _)| (idx % g).is_multiple_of(stride) && (idx / g).is_multiple_of(stride))
        .map(|(_, v)| *v)
        .collect();
    let longest = shown
        .iter()
        .map(|v| v.2.hypot(v.3))
        .filter(|l| l.is_finite())
        .fold(0.0, f64::max);
    let scale = if longest > 0.0 { 0.9 * cell / longest } else { 0.0 };
    let arrows: Vec<_> = shown
        .iter()
        .map(|&(x, y, fx, fy)| (x, y, fx * scale, fy * scale))
        .collect();
    let path = dir.join("field.svg");
    let title = if cfg.flow.normalize {
        "score field (log-normalized)"
    } else {
        "score field"
    };
    output::quiver(
        &path,
        &prov,
        &Quiver {
            title,
            extent,
            arrows: &arrows,
            lines: &lines,
            points: &pts,
        },
    )?;
    files.push(path);
    Ok(FieldReport { grid, lines, files })
}

/// Symmetric Hausdorff distance between two sampled curves (Euclidean).
pub fn hausdorff(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    let one_way = |p: &[DVector<f64>], q: &[DVector<f64>]| {
        p.par_iter()
            .enumerate()
            .map(|(i, x)| {
                // Seed with the equal-time state, then abandon candidates once their partial sum loses.
                let mut best = sq_dist_below(x, &q[i.min(q.len() - 1)], f64::INFINITY);
                for y in q {
                    best = best.min(sq_dist_below(x, y, best));
                }
                best
            })
            .reduce(|| 0.0, f64::max)
    };
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    one_way(a, b).max(one_way(b, a)).sqrt()
}

/// Squared distance, or some value `>= bound` as soon as it is known to exceed it.
fn sq_dist_below(x: &DVector<f64>, y: &DVector<f64>, bound: f64) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        acc += (a - b) * (a - b);
        if acc >= bound {
            break;
        }
    }
    acc
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajGap {
    pub start: usize,
    /// Largest Euclidean distance between states at equal times.
    pub max_gap: f64,
    pub hausdorff: f64,
}

pub struct CompareReport {
    pub gaps: Vec<TrajGap>,
    pub min_norm: f64,
    pub files: Vec<PathBuf>,
}

impl Outcome for CompareReport {
    fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn summary(&self) -> Vec<String> {
        let worst = |f: fn(&TrajGap) -> f64| self.gaps.iter().map(f).fold(0.0, f64::max);
        vec![format!(
            "{} starts: max pointwise gap {:.4e}, max Hausdorff {:.4e} ({:.3}% of min norm)",
            self.gaps.len(),
            worst(|g| g.max_gap),
            worst(|g| g.hausdorff),
            100.0 * worst(|g| g.hausdorff) / self.min_norm
        )]
    }
}

/// Exact and linearized score flows from the same starts, frame coordinates
/// drawn from `U(−0.25, 1.25) · ‖x_n‖` (stream `i` of `flow.seed`).
pub fn compare_trajectories(cfg: &ExperimentConfig, spec: &DatasetSpec) -> Result<Vec<(Trajectory, Trajectory)>> {
    require_kind(spec, DatasetKind::Orthogonal, "compare-traj")?;
    let fl = &cfg.flow;
    let rho = score_rho(cfg, spec);
    let den = ClosedFormDenoiser::new(spec, rho)?;
    // Validates ρ for the linearization up front.
    taylor_eval_orthogonal(spec, &spec.base, rho)?;
    let frac = Uniform::new(-0.25, 1.25).expect("valid range");
    (0..fl.compare_starts)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::task_rng(fl.seed, i as u64);
            let z = DVector::from_fn(spec.n_dirs(), |n, _| frac.sample(&mut r) * spec.norms[n]);
            let y0 = &spec.base + &spec.units * z;
            let exact = score_flow_numeric_with(|y| den.eval(y), &y0, fl.gamma, fl.iters, fl.sigma, Record::All)?;
            let taylor = score_flow_numeric_with(
                |y| taylor_eval_orthogonal(spec, y, rho).expect("rho validated"),
                &y0,
                fl.gamma,
                fl.iters,
                fl.sigma,
                Record::All,
            )?;
            Ok((exact, taylor))
        })
        .collect()
}

pub fn cmd_compare_traj(cfg: &ExperimentConfig) -> Result<CompareReport> {
    let prov = cfg.provenance("compare-traj");
    let dir = &cfg.output.dir;
    let spec = build_dataset(cfg, cfg.dataset.n, cfg.dataset.seed)?;
    let pairs = compare_trajectories(cfg, &spec)?;
    let gaps: Vec<TrajGap> = pairs
        .iter()
        .enumerate()
        .map(|(start, (a, b))| TrajGap {
            start,
            max_gap: a
                .states
                .iter()
                .zip(&b.states)
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max),
            hausdorff: hausdorff(&a.states, &b.states),
        })
        .collect();

    let mut files = Vec::new();
    let path = dir.join("compare_gaps.csv");
    let mut w = output::csv_writer(&path, &prov)?;
    w.write_record(["start", "max_gap", "hausdorff", "hausdorff_over_min_norm"])?;
    for g in &gaps {
        w.write_record([
            g.start.to_string(),
            g.max_gap.to_string(),
            g.hausdorff.to_string(),
            (g.hausdorff / spec.min_norm()).to_string(),
        ])?;
    }
    w.flush()?;
    files.push(path);

    let stride = (cfg.flow.iters / 300).max(1);
    let path = dir.join("compare_paths.csv");
    let mut w = output::csv_writer(&path, &prov)?;
    let mut header = vec!["start".to_string(), "flow".into(), "step".into(), "t".into()];
    header.extend((0..spec.n_dirs()).map(|n| format!("u{n}")));
    w.write_record(&header)?;
    let [ax, ay, _] = cfg.classify.axes;
    let mut curves = Vec::new();
    for (i, (a, b)) in pairs.iter().enumerate() {
        for (name, t, color) in [
            ("exact", a, &cfg.output.colors[3]),
            ("taylor", b, &cfg.output.colors[0]),
        ] {
            let mut pts = Vec::new();
            for k in (0..t.len()).step_by(stride).chain(std::iter::once(t.len() - 1)) {
                let z = spec.project(&t.states[k]);
                let mut rec = vec![i.to_string(), name.to_string(), k.to_string(), t.times[k].to_string()];
                rec.extend(z.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
                if ax < z.len() && ay < z.len() {
                    pts.push((z[ax], z[ay]));
                }
            }
            let label = if i == 0 { name.to_string() } else { String::new() };
            curves.push((label, color.clone(), pts));
        }
    }
    w.flush()?;
    files.push(path);
    let path = dir.join("compare_paths.svg");
    output::paths(&path, &prov, "exact vs linearized score flow", &curves)?;
    files.push(path);
    Ok(CompareReport {
        gaps,
        min_norm: spec.min_norm(),
        files,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLevel {
    pub level: usize,
    pub sigma: f64,
    pub rows: Vec<RoundRow>,
    /// Set when training diverged; no checkpoint is written then.
    pub failure: Option<String>,
}

pub struct TrainReport {
    pub levels: Vec<TrainLevel>,
    pub files: Vec<PathBuf>,
}

impl Outcome for TrainReport {
    fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn summary(&self) -> Vec<String> {
        self.levels
            .iter()
            .map(|l| match (&l.failure, l.rows.last()) {
                (Some(e), _) => format!("level {} (sigma {:.4}): {e}", l.level, l.sigma),
                (None, Some(r)) => format!(
                    "level {} (sigma {:.4}): max interp error {:.3e}, balanced cost {:.4}",
                    l.level, l.sigma, r.max_err, r.cost_balanced
                ),
                (None, None) => format!("level {}: no rounds", l.level),
            })
            .collect()
    }
}

/// Trains one net per schedule level. Diverged levels are logged and skipped.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let prov = cfg.provenance("train");
    let dir = &cfg.output.dir;
    let spec = build_dataset(cfg, cfg.dataset.n, cfg.dataset.seed)?;
    let sched = schedule(cfg, &spec)?;
    let m = cfg.train.samples_for(spec.len() - 1);
    let results: Vec<Result<(TrainLevel, Option<NetParams>)>> = (1..=sched.len())
        .into_par_iter()
        .map(|k| {
            let sigma = sched.sigma(k);
            let level = |rows, failure| TrainLevel {
                level: k,
                sigma,
                rows,
                failure,
            };
            match train_level(&spec, &cfg.train, m, sigma, k) {
                Ok((theta, rows)) => Ok((level(rows, None), Some(theta))),
                Err(e @ Error::Diverged { .. }) => Ok((level(Vec::new(), Some(e.to_string())), None)),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut files = Vec::new();
    output::ensure_dir(dir)?;
    let path = dir.join("dataset.txt");
    let mut f = output::create(&path, &prov)?;
    write_spec(&spec, &mut f)?;
    f.flush()?;
    files.push(path);

    let mut levels = Vec::new();
    for res in results {
        let (level, theta) = res?;
        if let Some(theta) = theta {
            let path = dir.join(checkpoint_name(level.level));
            let mut f = output::create(&path, &prov)?;
            write_checkpoint(&mut f, &theta, level.sigma, cfg.train.seed)?;
            f.flush()?;
            files.push(path);
        }
        levels.push(level);
    }

    let path = dir.join("train_log.csv");
    let mut w = output::csv_writer(&path, &prov)?;
    w.write_record([
        "level",
        "sigma",
        "round",
        "mu",
        "lr",
        "loss",
        "max_interp_error",
        "cost_raw",
        "cost_balanced",
        "status",
    ])?;
    let opt = |x: f64| if x.is_nan() { String::new() } else { x.to_string() };
    for l in &levels {
        if let Some(e) = &l.failure {
            w.write_record([
                l.level.to_string(),
                l.sigma.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ])?;
        }
        for r in &l.rows {
            w.write_record([
                l.level.to_string(),
                l.sigma.to_string(),
                r.round.to_string(),
                opt(r.mu),
                r.lr.to_string(),
                r.loss.to_string(),
                r.max_err.to_string(),
                r.cost_raw.to_string(),
                r.cost_balanced.to_string(),
                "ok".into(),
            ])?;
        }
    }
    w.flush()?;
    files.push(path);
    Ok(TrainReport { levels, files })
}

pub struct DatasetReport {
    pub spec: DatasetSpec,
    pub files: Vec<PathBuf>,
}

impl Outcome for DatasetReport {
    fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn summary(&self) -> Vec<String> {
        vec![format!(
            "{} dataset: {} points in d={} ({} augmented), min norm {}",
            self.spec.kind,
            self.spec.len(),
            self.spec.dim(),
            self.spec.n_augmented(),
            self.spec.min_norm()
        )]
    }
}

pub fn cmd_gen_dataset(cfg: &ExperimentConfig) -> Result<DatasetReport> {
    let prov = cfg.provenance("gen-dataset");
    let spec = build_dataset(cfg, cfg.dataset.n, cfg.dataset.seed)?;
    let path = cfg.output.dir.join("dataset.txt");
    let mut f = output::create(&path, &prov)?;
    write_spec(&spec, &mut f)?;
    f.flush()?;
    Ok(DatasetReport {
        spec,
        files: vec![path],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRow {
    pub subset: Vec<usize>,
    pub score_norm: f64,
    pub max_real_eig: f64,
    pub stable: bool,
    /// Sufficient angle condition, obtuse datasets only.
    pub condition: Option<bool>,
}

pub struct StabilityRun {
    pub rows: Vec<StabilityRow>,
    pub files: Vec<PathBuf>,
}

impl Outcome for StabilityRun {
    fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn summary(&self) -> Vec<String> {
        let max_k = self.rows.iter().map(|r| r.subset.len()).max().unwrap_or(0);
        (2..=max_k)
            .map(|k| {
                let of_k: Vec<_> = self.rows.iter().filter(|r| r.subset.len() == k).collect();
                let stable = of_k.iter().filter(|r| r.stable).count();
                format!("cardinality {k}: {stable}/{} subset sums stable", of_k.len())
            })
            .collect()
    }
}

/// Linear stability of every subset sum with `2..=max_cardinality` terms at the fixed-level denoiser.
pub fn cmd_stability(cfg: &ExperimentConfig) -> Result<StabilityRun> {
    let prov = cfg.provenance("stability");
    let dir = &cfg.output.dir;
    let spec = build_dataset(cfg, cfg.dataset.n, cfg.dataset.seed)?;
    if spec.kind == DatasetKind::EquilateralTriangle {
        return Err(Error::Config("stability needs a dataset with a base point".into()));
    }
    let rho = score_rho(cfg, &spec);
    let den = ClosedFormDenoiser::new(&spec, rho)?;
    let mut subsets = Vec::new();
    for k in 2..=cfg.flow.max_cardinality.min(spec.n_dirs()) {
        subsets_of_size(spec.n_dirs(), k, &mut subsets);
    }
    let rows: Vec<StabilityRow> = subsets
        .into_par_iter()
        .map(|subset| {
            let p = virtual_point(&spec, &subset)?;
            let rep = classify_stability(&den, &p, cfg.flow.sigma)?;
            let condition = match spec.kind {
                DatasetKind::ObtuseSimplex => Some(obtuse_sum_stability(&spec, &subset, rho)?),
                _ => None,
            };
            Ok(StabilityRow {
                subset,
                score_norm: rep.score_norm,
                max_real_eig: rep.max_real_eig,
                stable: rep.stable,
                condition,
            })
        })
        .collect::<Result<_>>()?;

    let path = dir.join("stability.csv");
    let mut w = output::csv_writer(&path, &prov)?;
    w.write_record([
        "cardinality",
        "subset",
        "score_norm",
        "max_real_eig",
        "stable",
        "angle_condition",
    ])?;
    for r in &rows {
        let subset: Vec<String> = r.subset.iter().map(ToString::to_string).collect();
        w.write_record([
            r.subset.len().to_string(),
            subset.join(" "),
            r.score_norm.to_string(),
            r.max_real_eig.to_string(),
            r.stable.to_string(),
            r.condition.map_or(String::new(), |c| c.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(StabilityRun {
        rows,
        files: vec![path],
    })
}
