use mnflow::datasets::{
    augment_boundary_points, coords, make_equilateral_triangle, make_obtuse_simplex, make_orthogonal, read_spec,
    reconstruct, residual_vector, validate, write_spec,
};
use mnflow::{DMatrix, DVector, DatasetKind, DatasetSpec, Norms};
use proptest::prelude::*;

fn gaussian_point(d: usize, seed: u64) -> DVector<f64> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(d, |_, _| StandardNormal.sample(&mut r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coords_then_reconstruct_is_identity(n in 2usize..12, extra in 0usize..6, seed in any::<u64>(), pseed in any::<u64>()) {
        let d = n - 1 + extra;
        let spec = make_orthogonal(n, d, &Norms::Uniform(1.0), seed).unwrap();
        let y = gaussian_point(d, pseed) * 3.0;
        let c = coords(&spec, &y);
        let back = reconstruct(&spec, &c) + residual_vector(&spec, &y);
        prop_assert!((back - &y).amax() < 1e-10);
        prop_assert!((c.residual - residual_vector(&spec, &y).norm()).abs() < 1e-12);
    }

    #[test]
    fn constructors_are_deterministic(n in 3usize..8, seed in any::<u64>()) {
        let d = n + 1;
        let a = make_orthogonal(n, d, &Norms::Uniform(1.0), seed).unwrap();
        let b = make_orthogonal(n, d, &Norms::Uniform(1.0), seed).unwrap();
        prop_assert_eq!(a.points, b.points);
        let a = make_obtuse_simplex(n, d, seed).unwrap();
        let b = make_obtuse_simplex(n, d, seed).unwrap();
        prop_assert_eq!(a.points, b.points);
    }

    #[test]
    fn constructed_specs_validate(n in 3usize..10, seed in any::<u64>(), side in 0.1f64..5.0) {
        let orth = make_orthogonal(n, n + 2, &Norms::Uniform(1.0), seed).unwrap();
        prop_assert!(validate(&orth).is_ok());
        let obt = make_obtuse_simplex(n, n, seed).unwrap();
        prop_assert!(validate(&obt).is_ok());
        for i in 1..obt.len() {
            for j in (i + 1)..obt.len() {
                prop_assert!(obt.points[i].dot(&obt.points[j]) < 0.0);
            }
        }
        let tri = make_equilateral_triangle(3, side).unwrap();
        prop_assert!(validate(&tri).is_ok());
    }

    #[test]
    fn augmented_points_lie_on_faces(count in 0usize..12, seed in any::<u64>()) {
        let spec = make_orthogonal(6, 7, &Norms::Uniform(1.0), 3).unwrap();
        let aug = augment_boundary_points(&spec, count, seed).unwrap();
        prop_assert_eq!(aug.len(), 6 + count);
        prop_assert_eq!(aug.n_augmented(), count);
        for p in &aug.points[6..] {
            let z = aug.project(p);
            let snapped = z.iter().filter(|&&v| v.abs() < 1e-12 || (v - 1.0).abs() < 1e-12).count();
            prop_assert_eq!(snapped, 1);
            prop_assert!(z.iter().all(|&v| v.abs() < 1e-12 || (v - 1.0).abs() < 1e-12 || (0.3 - 1e-12..=0.7 + 1e-12).contains(&v)));
            prop_assert!(mnflow::classify::distance_to_hyperbox(&aug, p) < 1e-12);
        }
    }
}

#[test]
fn validate_rejects_perturbed_gram() {
    let spec = make_orthogonal(5, 6, &Norms::Uniform(1.0), 11).unwrap();
    let mut bent = spec.clone();
    // Tilt x_2 toward x_1 so that u_1·u_2 ≈ 1e−3.
    let tilt = &spec.points[1] * 1e-3;
    bent.points[2] += tilt;
    let rebuilt = DatasetSpec::from_points(DatasetKind::Orthogonal, bent.points, 0, 11);
    assert!(rebuilt.is_err() || validate(&rebuilt.unwrap()).is_err());
}

#[test]
fn text_format_round_trips_with_comments() {
    let spec = augment_boundary_points(
        &make_orthogonal(4, 5, &Norms::Each(vec![1.0, 2.0, 0.5]), 2).unwrap(),
        2,
        9,
    )
    .unwrap();
    let mut buf = b"# produced elsewhere\n".to_vec();
    write_spec(&spec, &mut buf).unwrap();
    let back = read_spec(buf.as_slice()).unwrap();
    assert_eq!(back.points, spec.points);
    assert_eq!(back.augmented, spec.augmented);
    assert_eq!(back.kind, DatasetKind::Orthogonal);
}

#[test]
fn planar_triangle_embedding() {
    let tri = make_equilateral_triangle(5, 2.0).unwrap();
    for p in &tri.points {
        assert!(p.rows(2, 3).amax() == 0.0);
    }
    let sum: DVector<f64> = (0..3).map(|i| tri.unit(i)).fold(DVector::zeros(5), |a, u| a + u);
    assert!(sum.amax() < 1e-12);
    let gram: DMatrix<f64> = tri.units.tr_mul(&tri.units);
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 1.0 } else { -0.5 };
            assert!((gram[(i, j)] - want).abs() < 1e-12);
        }
    }
}
