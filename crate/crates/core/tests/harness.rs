use std::fs;
use std::path::Path;

use mnflow::classify::classify;
use mnflow::datasets::{make_equilateral_triangle, virtual_point};
use mnflow::flows::{prob_flow_numeric_with, Record};
use mnflow::harness::commands::{
    build_dataset, cmd_compare_traj, cmd_field, cmd_fixed_point, cmd_sample, cmd_train, field_vector, hausdorff,
    level_denoiser, schedule, score_rho,
};
use mnflow::harness::config::{DenoiserSource, ExperimentConfig, FlowChoice};
use mnflow::nets::{read_checkpoint, write_checkpoint};
use mnflow::stability::subsets_up_to;
use mnflow::{ClosedFormDenoiser, ConvergenceKind, DatasetKind, Metric};

fn small_sample_cfg(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.n = 6;
    cfg.dataset.d = 8;
    cfg.flow.samples = 40;
    cfg.flow.iters = 400;
    cfg.flow.gamma = 2e-3;
    cfg.classify.metrics = vec![Metric::Linf, Metric::L2];
    cfg.classify.thresholds = vec![0.05, 0.1, 0.2];
    cfg.output.dir = dir.to_path_buf();
    cfg
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

/// Data rows of a provenance-stamped CSV.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn sample_csvs_reproduce_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_sample_cfg(tmp.path());
    cfg.output.dump_trajectories = true;
    let files = [
        "stats.csv",
        "labels.csv",
        "projection.csv",
        "trajectories.csv",
        "stats.svg",
    ];
    in_pool(1, || cmd_sample(&cfg)).unwrap();
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(tmp.path().join(f)).unwrap()).collect();
    in_pool(4, || cmd_sample(&cfg)).unwrap();
    for (name, bytes) in files.iter().zip(&first) {
        assert_eq!(&fs::read(tmp.path().join(name)).unwrap(), bytes, "{name}");
    }
}

#[test]
fn stats_cover_every_metric_and_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_sample_cfg(tmp.path());
    let report = cmd_sample(&cfg).unwrap();
    assert_eq!(report.stats.len(), 6);
    let rows = csv_rows(&tmp.path().join("stats.csv"));
    assert_eq!(rows.len(), 6);
    for (row, (metric, thr)) in rows.iter().zip(
        [Metric::Linf, Metric::L2]
            .iter()
            .flat_map(|m| [0.05, 0.1, 0.2].map(|t| (*m, t))),
    ) {
        assert_eq!(row[0], metric.to_string());
        assert_eq!(row[1].parse::<f64>().unwrap(), thr);
        assert_eq!(row[2], "40");
        let sum: f64 = row[4..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
    // Larger thresholds only move trajectories out of "other".
    for m in 0..2 {
        let other: Vec<f64> = (0..3).map(|t| report.stats[3 * m + t].fractions[4]).collect();
        assert!(other.windows(2).all(|w| w[1] <= w[0]));
    }
    let labels = csv_rows(&tmp.path().join("labels.csv"));
    assert_eq!(labels.len(), 6 * 40);
}

#[test]
fn svgs_are_self_contained_and_small() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_sample_cfg(tmp.path());
    cmd_sample(&cfg).unwrap();
    cmd_fixed_point(&cfg).unwrap();
    cfg.flow.compare_starts = 3;
    cmd_compare_traj(&cfg).unwrap();
    cfg.dataset.kind = DatasetKind::EquilateralTriangle;
    cfg.dataset.d = 2;
    cfg.flow.rho = Some(0.1);
    cfg.flow.sigma = 1.0;
    cmd_field(&cfg).unwrap();
    let svgs: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "svg"))
        .collect();
    assert_eq!(svgs.len(), 5);
    for path in svgs {
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.len() < 1 << 20, "{}", path.display());
        assert!(text.starts_with("<!--"));
        let body = &text[text.find("<svg").expect("svg element")..];
        assert!(!body.contains("<image") && !body.contains("href=\"http") && !body.contains("@import"));
        assert!(body.trim_end().ends_with("</svg>"));
    }
}

#[test]
fn fixed_point_with_four_points_has_three_pairs_and_one_triplet() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_sample_cfg(tmp.path());
    cfg.dataset.n = 4;
    cfg.classify.thresholds = vec![0.2];
    let report = cmd_fixed_point(&cfg).unwrap();
    let shape: Vec<(usize, usize, usize)> = report.rows.iter().map(|r| (r.cardinality, r.total, r.stable)).collect();
    assert_eq!(shape, vec![(2, 3, 3), (3, 1, 1)]);
    assert!(report.rows.iter().all(|r| r.max_drift < 1e-12));
}

#[test]
fn field_vanishes_at_training_points() {
    let spec = make_equilateral_triangle(2, 1.0).unwrap();
    let den = ClosedFormDenoiser::new(&spec, 0.1).unwrap();
    for x in &spec.points {
        for normalize in [false, true] {
            assert_eq!(field_vector(&den, x, 0.5, normalize).amax(), 0.0);
        }
    }
}

#[test]
fn triangle_boundary_lines_sit_at_branch_edges() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_sample_cfg(tmp.path());
    cfg.dataset.kind = DatasetKind::EquilateralTriangle;
    cfg.dataset.d = 2;
    cfg.dataset.side = 3f64.sqrt();
    cfg.flow.rho = Some(0.15);
    cfg.flow.grid = 20;
    let report = cmd_field(&cfg).unwrap();
    assert_eq!(report.lines.len(), 6);
    assert_eq!(report.grid.len(), 400);
    let spec = build_dataset(&cfg, 3, 0).unwrap();
    let norm = spec.norms[0];
    let edges = [-norm / 2.0 + 0.15, norm - 0.15];
    // The plane basis of a 2-D dataset may be any rotation, so compare through the ambient points.
    let (e1, e2) = mnflow::harness::commands::plane_basis(&spec).unwrap();
    for (a, b) in &report.lines {
        let on_edge = |p: &(f64, f64)| {
            let y = &spec.base + &e1 * p.0 + &e2 * p.1;
            (0..3).any(|i| {
                let z = spec.unit(i).dot(&(&y - &spec.base));
                edges.iter().any(|c| (z - c).abs() < 1e-9)
            })
        };
        assert!(on_edge(a) && on_edge(b));
    }
}

#[test]
fn halving_rho_shrinks_the_linearization_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_sample_cfg(tmp.path());
    cfg.flow.sigma = 0.1;
    cfg.flow.gamma = 1e-4;
    cfg.flow.iters = 2000;
    cfg.flow.compare_starts = 6;
    let worst = |cfg: &ExperimentConfig| {
        let r = cmd_compare_traj(cfg).unwrap();
        let h = r.gaps.iter().map(|g| g.hausdorff).fold(0.0, f64::max);
        let p = r.gaps.iter().map(|g| g.max_gap).fold(0.0, f64::max);
        (h, p)
    };
    cfg.flow.rho = Some(0.2);
    let (h_big, p_big) = worst(&cfg);
    cfg.flow.rho = Some(0.1);
    let (h_small, p_small) = worst(&cfg);
    assert!(
        h_small < h_big && p_small < p_big,
        "{h_small} {h_big} {p_small} {p_big}"
    );
}

#[test]
fn train_logs_every_round_and_checkpoints_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_sample_cfg(tmp.path());
    cfg.dataset.n = 3;
    cfg.dataset.d = 3;
    cfg.flow.steps = 3;
    cfg.flow.t_final = 0.04;
    cfg.flow.split = 0.1;
    cfg.train.width = 4;
    cfg.train.m = 3;
    cfg.train.m_override.clear();
    cfg.train.inner = 30;
    cfg.train.outer = 2;
    let report = cmd_train(&cfg).unwrap();
    assert_eq!(report.levels.len(), 3);
    let log = csv_rows(&tmp.path().join("train_log.csv"));
    assert_eq!(log.len(), 3 * (2 + 1));
    assert!(log.iter().all(|r| r[9] == "ok"));

    for k in 1..=3 {
        let path = tmp.path().join(format!("level_{k:04}.txt"));
        let text = fs::read_to_string(&path).unwrap();
        let body: String = text
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect();
        let (theta, sigma, seed) = read_checkpoint(text.as_bytes()).unwrap();
        let mut again = Vec::new();
        write_checkpoint(&mut again, &theta, sigma, seed).unwrap();
        assert_eq!(String::from_utf8(again.clone()).unwrap(), body);
        let (theta2, sigma2, _) = read_checkpoint(again.as_slice()).unwrap();
        assert_eq!((theta2, sigma2), (theta, sigma));
    }

    // The checkpoints drive a probability-flow sample.
    cfg.flow.kind = FlowChoice::Prob;
    cfg.flow.denoiser = DenoiserSource::Trained(tmp.path().to_path_buf());
    cfg.flow.samples = 5;
    cfg.output.dir = tmp.path().join("prob");
    assert_eq!(cmd_sample(&cfg).unwrap().stats[0].total, 5);
}

#[test]
fn prob_flow_from_a_vertex_stays_there() {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.n = 6;
    cfg.dataset.d = 7;
    cfg.flow.kind = FlowChoice::Prob;
    cfg.flow.t_final = 1.0;
    cfg.flow.split = 0.3;
    let spec = build_dataset(&cfg, 6, 3).unwrap();
    let sched = schedule(&cfg, &spec).unwrap();
    let den = level_denoiser(&cfg, &spec, &sched, 1).unwrap();
    for subset in subsets_up_to(5, 5) {
        let v = virtual_point(&spec, &subset).unwrap();
        let end = prob_flow_numeric_with(&*den, &v, &sched, Record::Terminal).unwrap();
        let label = classify(&spec, end.terminal(), Metric::Linf, 0.2);
        assert!(label.distance < 1e-12);
        match label.kind {
            ConvergenceKind::TrainingPoint(_) => assert!(subset.len() <= 1),
            ConvergenceKind::VirtualPoint(k) => assert_eq!(k, subset.len()),
            other => panic!("{other:?} for {subset:?}"),
        }
    }
}

#[test]
fn default_rho_is_capped() {
    let mut cfg = ExperimentConfig::default();
    cfg.flow.sigma = 10.0;
    let spec = build_dataset(&cfg, 5, 0).unwrap();
    assert!((score_rho(&cfg, &spec) - 0.45 * spec.min_norm()).abs() < 1e-15);
}

#[test]
fn hausdorff_matches_brute_force() {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let mut set = |n: usize| -> Vec<mnflow::DVector<f64>> {
            (0..n)
                .map(|_| mnflow::DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0)))
                .collect()
        };
        let (a, b) = (set(17), set(9));
        let directed = |p: &[mnflow::DVector<f64>], q: &[mnflow::DVector<f64>]| {
            p.iter()
                .map(|x| q.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        let oracle = directed(&a, &b).max(directed(&b, &a));
        assert!((hausdorff(&a, &b) - oracle).abs() < 1e-12);
    }
}
