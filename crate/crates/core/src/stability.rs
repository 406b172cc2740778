//! Stationary points of the score field and their linear stability.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::datasets::{virtual_point, DatasetKind, DatasetSpec};
use crate::denoiser::ClosedFormDenoiser;
use crate::error::{Error, Result};
use crate::flows::{FlowKind, Trajectory};

/// Closed forms are exact up to rounding.
pub const DEFAULT_STATIONARY_TOL: f64 = 1e-9;
/// Learned denoisers only interpolate approximately.
pub const TRAINED_STATIONARY_TOL: f64 = 1e-3;

const FULL_ENUMERATION_LIMIT: usize = 24;

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub point: DVector<f64>,
    pub score_norm: f64,
    pub max_real_eig: f64,
    pub stable: bool,
    pub pattern: Vec<u8>,
}

/// `‖score(y)‖ ≤ tol`; `tol` must be positive.
pub fn is_stationary(den: &ClosedFormDenoiser, y: &DVector<f64>, sigma: f64, tol: f64) -> bool {
    debug_assert!(tol > 0.0);
    den.score(y, sigma).norm() <= tol
}

pub fn classify_stability(den: &ClosedFormDenoiser, y: &DVector<f64>, sigma: f64) -> Result<StabilityReport> {
    classify_stability_tol(den, y, sigma, DEFAULT_STATIONARY_TOL)
}

pub fn classify_stability_tol(
    den: &ClosedFormDenoiser,
    y: &DVector<f64>,
    sigma: f64,
    tol: f64,
) -> Result<StabilityReport> {
    let pattern = den.activation_pattern(y);
    let spec = den.spec();
    let s2 = sigma * sigma;
    let max_real_eig = if spec.kind == DatasetKind::Orthogonal {
        if let Some(direction) = den.kink_direction(y) {
            return Err(Error::OnBoundary { direction });
        }
        // Eigenvalues in the frame are s_n Δ_n − 1; the complement contributes −1.
        let mut best = if spec.n_dirs() < spec.dim() {
            -1.0
        } else {
            f64::NEG_INFINITY
        };
        for (i, &delta) in pattern.iter().enumerate() {
            best = f64::max(best, den.branch(i).2 * f64::from(delta) - 1.0);
        }
        best / s2
    } else {
        den.jacobian(y, sigma)?.symmetric_eigenvalues().max()
    };
    let score_norm = den.score(y, sigma).norm();
    Ok(StabilityReport {
        point: y.clone(),
        score_norm,
        max_real_eig,
        stable: score_norm <= tol && max_real_eig < 0.0,
        pattern,
    })
}

/// All 1-based subsets of `1..=m` with at most `kmax` elements, by size then lexicographically.
pub fn subsets_up_to(m: usize, kmax: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for k in 0..=kmax.min(m) {
        subsets_of_size(m, k, &mut out);
    }
    out
}

/// All `k`-element subsets of `1..=m` in lexicographic order, appended to `out`.
pub fn subsets_of_size(m: usize, k: usize, out: &mut Vec<Vec<usize>>) {
    if k > m {
        return;
    }
    let mut cur: Vec<usize> = (1..=k).collect();
    loop {
        out.push(cur.clone());
        let mut i = k;
        while i > 0 && cur[i - 1] == m - k + i {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        cur[i - 1] += 1;
        for j in i..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Subset sums that the closed-form score flow keeps as stable stationary points.
/// Without a cardinality bound all `2^(N−1)` subsets are visited, which is refused past 24 directions.
pub fn enumerate_stable_points_orthogonal(
    spec: &DatasetSpec,
    rho: f64,
    max_cardinality: Option<usize>,
) -> Result<Vec<(Vec<usize>, DVector<f64>)>> {
    if spec.kind != DatasetKind::Orthogonal {
        return Err(Error::Precondition("enumeration needs an orthogonal dataset".into()));
    }
    let m = spec.n_dirs();
    let kmax = match max_cardinality {
        Some(k) => k,
        None if m > FULL_ENUMERATION_LIMIT => return Err(Error::TooLarge { dirs: m }),
        None => m,
    };
    let den = ClosedFormDenoiser::new(spec, rho)?;
    let found: Result<Vec<Option<_>>> = subsets_up_to(m, kmax)
        .into_par_iter()
        .map(|subset| {
            let p = virtual_point(spec, &subset)?;
            let report = classify_stability(&den, &p, 1.0)?;
            Ok(report.stable.then_some((subset, p)))
        })
        .collect();
    Ok(found?.into_iter().flatten().collect())
}

/// Sufficient condition for an obtuse subset sum to be stable:
/// `min_k Σ_{i∈I∖{k}} u_k·u_i ‖x_i‖ > −ρ`. Index 0 denotes the base point.
pub fn obtuse_sum_stability(spec: &DatasetSpec, subset: &[usize], rho: f64) -> Result<bool> {
    if spec.kind != DatasetKind::ObtuseSimplex {
        return Err(Error::Precondition("needs an obtuse dataset".into()));
    }
    let m = spec.n_dirs();
    let mut idx = subset.to_vec();
    idx.sort_unstable();
    idx.dedup();
    if let Some(&bad) = idx.iter().find(|&&k| k > m) {
        return Err(Error::IndexOutOfRange { index: bad, max: m });
    }
    let with_base = idx.first() == Some(&0);
    let need = if with_base { 3 } else { 2 };
    if idx.len() < need {
        return Err(Error::BadSubset(format!(
            "{} indices given, at least {need} required",
            idx.len()
        )));
    }
    let dirs: Vec<usize> = idx.into_iter().filter(|&k| k > 0).map(|k| k - 1).collect();
    let gram = spec.units.tr_mul(&spec.units);
    let worst = dirs
        .iter()
        .map(|&k| {
            dirs.iter()
                .filter(|&&i| i != k)
                .map(|&i| gram[(k, i)] * spec.norms[i])
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    Ok(worst > -rho)
}

/// `y_{k+1} = f(y_k)`, recording every iterate.
pub fn fixed_point_iterate<F>(f: F, y0: &DVector<f64>, iters: usize) -> Result<Trajectory>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if iters == 0 {
        return Err(Error::Precondition("iters must be at least 1".into()));
    }
    let mut traj = Trajectory::new(FlowKind::FixedPoint, vec![("iters".into(), iters as f64)]);
    traj.push(0.0, f64::NAN, y0.clone());
    let mut y = y0.clone();
    for k in 1..=iters {
        y = f(&y);
        if y.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
        traj.push(k as f64, f64::NAN, y.clone());
    }
    Ok(traj)
}
