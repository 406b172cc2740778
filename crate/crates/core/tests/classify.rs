use mnflow::classify::{aggregate, classify, distance_to_hyperbox_metric};
use mnflow::datasets::make_orthogonal;
use mnflow::{ConvergenceKind, DVector, DatasetKind, DatasetSpec, Metric, Norms};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(seed: u64) -> DatasetSpec {
    make_orthogonal(6, 8, &Norms::Each(vec![1.0, 1.3, 0.7, 1.1, 0.9]), seed).unwrap()
}

/// Points near the hyperbox, some snapped to vertices and faces.
fn near_box(spec: &DatasetSpec, r: &mut ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(spec.n_dirs(), |i, _| {
        let n = spec.norms[i];
        match r.random_range(0..3) {
            0 => r.random_range(-0.1..0.1),
            1 => n + r.random_range(-0.1..0.1),
            _ => r.random_range(-0.2..1.2) * n,
        }
    });
    let g = DVector::from_fn(spec.dim(), |_, _| r.random_range(-0.1..0.1));
    &spec.base + &spec.units * z + (&g - &spec.units * spec.units.tr_mul(&g))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_threshold_never_loses_a_label(seed in any::<u64>(), lo in 0.0f64..0.3, extra in 0.0f64..0.3) {
        let s = spec(seed % 16);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let y = near_box(&s, &mut r);
            for metric in [Metric::Linf, Metric::L2] {
                let a = classify(&s, &y, metric, lo);
                let b = classify(&s, &y, metric, lo + extra);
                if a.kind != ConvergenceKind::Other {
                    prop_assert_ne!(b.kind, ConvergenceKind::Other);
                    prop_assert!(b.kind.category() <= a.kind.category());
                }
            }
        }
    }

    #[test]
    fn l2_dominates_linf(seed in any::<u64>(), threshold in 0.0f64..0.3) {
        let s = spec(seed % 16);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let y = near_box(&s, &mut r);
            let l2 = distance_to_hyperbox_metric(&s, &y, Metric::L2);
            let li = distance_to_hyperbox_metric(&s, &y, Metric::Linf);
            prop_assert!(l2 >= li - 1e-15);
            if classify(&s, &y, Metric::L2, threshold).kind != ConvergenceKind::Other {
                prop_assert_ne!(classify(&s, &y, Metric::Linf, threshold).kind, ConvergenceKind::Other);
            }
        }
    }

    #[test]
    fn labels_ignore_point_order(seed in any::<u64>(), threshold in 0.01f64..0.3) {
        let s = spec(seed % 16);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = s.points.clone();
        pts[1..].reverse();
        let flipped = DatasetSpec::from_points(DatasetKind::Orthogonal, pts, 0, s.seed).unwrap();
        for _ in 0..20 {
            let y = near_box(&s, &mut r);
            let a = classify(&s, &y, Metric::Linf, threshold);
            let b = classify(&flipped, &y, Metric::Linf, threshold);
            prop_assert_eq!(a.kind.category(), b.kind.category());
            prop_assert!((a.distance - b.distance).abs() < 1e-12);
            if let (ConvergenceKind::VirtualPoint(p), ConvergenceKind::VirtualPoint(q)) = (a.kind, b.kind) {
                prop_assert_eq!(p, q);
            }
        }
    }

    #[test]
    fn fractions_sum_to_one(seed in any::<u64>(), count in 1usize..60) {
        let s = spec(seed % 16);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<_> = (0..count).map(|_| classify(&s, &near_box(&s, &mut r), Metric::Linf, 0.05)).collect();
        let stats = aggregate(&labels).unwrap();
        prop_assert_eq!(stats.counts.iter().sum::<usize>(), count);
        prop_assert!((stats.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn subset_sums_are_labeled_by_cardinality() {
    let s = spec(1);
    let y = mnflow::datasets::virtual_point(&s, &[1, 3, 4]).unwrap();
    let label = classify(&s, &y, Metric::Linf, 0.2);
    assert_eq!(label.kind, ConvergenceKind::VirtualPoint(3));
    assert!(label.distance < 1e-12);
    assert_eq!(
        classify(&s, &s.points[2], Metric::L2, 0.0).kind,
        ConvergenceKind::TrainingPoint(2)
    );
}
