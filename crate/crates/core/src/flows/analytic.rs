//! Closed-form trajectories.
//!
//! Within one activation region the score is affine, so the flows solve in closed
//! form; orthogonal data decouples per frame coordinate. Score-flow coordinates
//! cross at most one branch edge, at a time given by a logarithm. Under the
//! probability flow with `ρ_t = α√t` the band edges recede at least as fast as a
//! band coordinate drifts, so coordinates never change branch there.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::datasets::{residual_vector, DatasetKind, DatasetSpec};
use crate::denoiser::ClosedFormDenoiser;
use crate::error::{Error, Result};

const REGION_GRID: usize = 256;

fn require(spec: &DatasetSpec, kind: DatasetKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::Precondition(format!("needs a {kind} dataset")));
    }
    Ok(())
}

fn check_time(t: f64, t_final: f64) -> Result<()> {
    if !(t >= 0.0 && t <= t_final) {
        return Err(Error::Precondition(format!("t={t} outside [0, T={t_final}]")));
    }
    Ok(())
}

fn band_rate(norm: f64, rho: f64) -> f64 {
    2.0 * rho / (norm - 2.0 * rho)
}

/// One frame coordinate under the exact score flow. Returns the value and whether it sat at the midpoint.
fn score_coord(z0: f64, norm: f64, rho: f64, s2: f64, t: f64) -> (f64, bool) {
    let decay = (-t / s2).exp();
    if z0 <= rho {
        return (z0 * decay, false);
    }
    if z0 > norm - rho {
        return (norm + (z0 - norm) * decay, false);
    }
    let mid = norm / 2.0;
    let dev = z0 - mid;
    if dev == 0.0 {
        return (mid, true);
    }
    let kappa = band_rate(norm, rho) / s2;
    let t_exit = ((mid - rho) / dev.abs()).ln() / kappa;
    if t <= t_exit {
        return (mid + dev * (kappa * t).exp(), false);
    }
    let tail = (-(t - t_exit) / s2).exp();
    if dev > 0.0 {
        (norm - rho * tail, false)
    } else {
        (rho * tail, false)
    }
}

fn assemble(spec: &DatasetSpec, along: &DVector<f64>, residual: DVector<f64>) -> DVector<f64> {
    &spec.base + &spec.units * along + residual
}

/// Exact closed-form score flow for orthogonal data, stitched across branch edges.
/// A coordinate exactly at its midpoint stays there; that case is reported as
/// [`Error::MidpointDegenerate`] carrying the solution.
pub fn score_flow_analytic_orthogonal(
    spec: &DatasetSpec,
    rho: f64,
    sigma: f64,
    y0: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    require(spec, DatasetKind::Orthogonal)?;
    ClosedFormDenoiser::new(spec, rho)?;
    if !(t >= 0.0) {
        return Err(Error::Precondition("t must be non-negative".into()));
    }
    let s2 = sigma * sigma;
    let z = spec.project(y0);
    let mut degenerate = false;
    let along = DVector::from_iterator(
        z.len(),
        z.iter().zip(&spec.norms).map(|(&zi, &n)| {
            let (v, mid) = score_coord(zi, n, rho, s2, t);
            degenerate |= mid;
            v
        }),
    );
    let y = assemble(spec, &along, residual_vector(spec, y0) * (-t / s2).exp());
    if degenerate {
        Err(Error::MidpointDegenerate { frozen: y })
    } else {
        Ok(y)
    }
}

fn check_prob_rho(spec: &DatasetSpec, alpha: f64, t_final: f64) -> Result<f64> {
    let rho_t = alpha * t_final.sqrt();
    if !(alpha > 0.0) || rho_t >= spec.min_norm() / 2.0 {
        return Err(Error::Precondition(format!(
            "alpha*sqrt(T)={rho_t} must lie in (0, min norm / 2)"
        )));
    }
    Ok(rho_t)
}

/// Probability flow under the linearized score with `σ_t = √t`, `ρ_t = α√t`,
/// run from `T` down to `t`.
pub fn prob_flow_analytic_orthogonal(
    spec: &DatasetSpec,
    alpha: f64,
    y_t: &DVector<f64>,
    t_final: f64,
    t: f64,
) -> Result<DVector<f64>> {
    require(spec, DatasetKind::Orthogonal)?;
    let rho_t = check_prob_rho(spec, alpha, t_final)?;
    check_time(t, t_final)?;
    let q = (t / t_final).sqrt();
    let z = spec.project(y_t);
    let mut degenerate = false;
    let along = DVector::from_iterator(
        z.len(),
        z.iter().zip(&spec.norms).map(|(&zi, &n)| {
            if zi <= rho_t {
                zi * q
            } else if zi > n - rho_t {
                n + (zi - n) * q
            } else {
                let dev = zi - n / 2.0;
                degenerate |= dev == 0.0;
                n / 2.0 + dev * (2.0 * alpha / n * (t_final.sqrt() - t.sqrt())).exp()
            }
        }),
    );
    let y = assemble(spec, &along, residual_vector(spec, y_t) * q);
    if degenerate {
        Err(Error::MidpointDegenerate { frozen: y })
    } else {
        Ok(y)
    }
}

/// `t → 0` limit of [`prob_flow_analytic_orthogonal`]. A band coordinate whose
/// limit would leave `[0, ‖x‖]` is clamped to that face. When `α√T ≥ ‖x‖/2` the
/// band is empty and each coordinate rounds to the nearer end.
/// The flag per coordinate is true when it ends at 0 or `‖x‖`.
pub fn prob_flow_limit(
    spec: &DatasetSpec,
    alpha: f64,
    y_t: &DVector<f64>,
    t_final: f64,
) -> Result<(DVector<f64>, Vec<bool>)> {
    require(spec, DatasetKind::Orthogonal)?;
    if !(alpha > 0.0 && t_final > 0.0) {
        return Err(Error::Precondition("need alpha > 0 and T > 0".into()));
    }
    let rho_t = alpha * t_final.sqrt();
    let z = spec.project(y_t);
    let mut reached = Vec::with_capacity(z.len());
    let mut degenerate = false;
    let mut along = DVector::zeros(z.len());
    for (i, (&zi, &n)) in z.iter().zip(&spec.norms).enumerate() {
        let mid = n / 2.0;
        let dev = zi - mid;
        let (v, hit) = if rho_t >= mid {
            degenerate |= dev == 0.0;
            if dev < 0.0 {
                (0.0, true)
            } else if dev > 0.0 {
                (n, true)
            } else {
                (mid, false)
            }
        } else if zi <= rho_t {
            (0.0, true)
        } else if zi > n - rho_t {
            (n, true)
        } else {
            degenerate |= dev == 0.0;
            let lim = mid + dev * (2.0 * alpha * t_final.sqrt() / n).exp();
            if lim >= n {
                (n, true)
            } else if lim <= 0.0 {
                (0.0, true)
            } else {
                (lim, false)
            }
        };
        along[i] = v;
        reached.push(hit);
    }
    let y = assemble(spec, &along, DVector::zeros(spec.dim()));
    if degenerate {
        Err(Error::MidpointDegenerate { frozen: y })
    } else {
        Ok((y, reached))
    }
}

/// `(‖x‖/(2α))² log²((‖x‖/2)/|y − ‖x‖/2|)`: the terminal time beyond which a band
/// coordinate would be pushed all the way to a vertex.
pub fn tau_threshold(norm: f64, alpha: f64, y_ti: f64) -> Result<f64> {
    let mid = norm / 2.0;
    let dev = (y_ti - mid).abs();
    if dev == 0.0 {
        return Err(Error::Midpoint);
    }
    let l = (mid / dev).ln();
    Ok((norm / (2.0 * alpha)).powi(2) * l * l)
}

/// Window `(T0, T1)` of the exact score flow: after `T0` every contracting
/// coordinate (and the off-span residual) is within `ε` of its target; before
/// `T1` no band coordinate has reached its band edge.
pub fn escape_times(spec: &DatasetSpec, rho: f64, sigma: f64, y0: &DVector<f64>, epsilon: f64) -> Result<(f64, f64)> {
    require(spec, DatasetKind::Orthogonal)?;
    ClosedFormDenoiser::new(spec, rho)?;
    let z = spec.project(y0);
    let min_abs = z.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    if !(epsilon > 0.0 && epsilon < min_abs) {
        return Err(Error::Precondition(format!(
            "epsilon={epsilon} must lie in (0, min |u·y0| = {min_abs})"
        )));
    }
    let s2 = sigma * sigma;
    let settle = |dist: f64| {
        if dist > epsilon {
            s2 * (dist / epsilon).ln()
        } else {
            0.0
        }
    };
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for (&zi, &n) in z.iter().zip(&spec.norms) {
        if zi <= rho {
            t0 = t0.max(settle(zi.abs()));
        } else if zi > n - rho {
            t0 = t0.max(settle((zi - n).abs()));
        } else {
            let dev = (zi - n / 2.0).abs();
            if dev > 0.0 {
                t1 = t1.min(s2 * ((n - 2.0 * rho) / (2.0 * rho)) * ((n / 2.0 - rho) / dev).ln());
            }
        }
    }
    t0 = t0.max(settle(residual_vector(spec, y0).norm()));
    if t0 >= t1 {
        return Err(Error::EmptyWindow { t0, t1 });
    }
    Ok((t0, t1))
}

/// Maximum of `a e^{κτ} + b e^{−λτ} + c` over `τ ∈ [0, end]` (κ, λ > 0).
fn max_two_exp(a: f64, kappa: f64, b: f64, lambda: f64, c: f64, end: f64) -> f64 {
    let f = |tau: f64| a * (kappa * tau).exp() + b * (-lambda * tau).exp() + c;
    let mut best = f(0.0).max(f(end));
    let ratio = b * lambda / (a * kappa);
    if ratio > 0.0 && ratio.is_finite() {
        let tc = ratio.ln() / (kappa + lambda);
        if tc > 0.0 && tc < end {
            best = best.max(f(tc));
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObtuseMode {
    /// Exact score flow at fixed `σ`, radius `ρ`.
    Score { rho: f64, sigma: f64 },
    /// Probability flow from `T` with `ρ_t = α√t`, linearized score inside the band.
    Prob { alpha: f64, t_final: f64 },
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Band,
    Top,
    Bottom,
}

/// Flow on an obtuse simplex while only direction `i` is active. In score mode `t`
/// is elapsed time; in probability mode `t` is the current time in `[0, T]`.
pub fn analytic_obtuse_flow(
    spec: &DatasetSpec,
    mode: ObtuseMode,
    i: usize,
    y0: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    require(spec, DatasetKind::ObtuseSimplex)?;
    let m = spec.n_dirs();
    if i >= m {
        return Err(Error::IndexOutOfRange { index: i, max: m });
    }
    let norm = spec.norms[i];
    let mid = norm / 2.0;
    let u = spec.unit(i);
    let w0 = y0 - &spec.base;
    let z = spec.units.tr_mul(&w0);
    let perp0 = &w0 - &u * z[i];
    let gram = spec.units.tr_mul(&spec.units);
    let x_i = &u * norm;
    let others = || (0..m).filter(move |&j| j != i);
    match mode {
        ObtuseMode::Score { rho, sigma } => {
            ClosedFormDenoiser::new(spec, rho)?;
            if !(t >= 0.0) {
                return Err(Error::Precondition("t must be non-negative".into()));
            }
            if let Some(j) = others().find(|&j| z[j] > rho) {
                return Err(Error::RegionViolation(format!("direction {j} starts active")));
            }
            let s2 = sigma * sigma;
            let lambda = 1.0 / s2;
            let phase = if z[i] <= rho {
                Phase::Bottom
            } else if z[i] > norm - rho {
                Phase::Top
            } else {
                Phase::Band
            };
            let dev = z[i] - mid;
            let kappa = band_rate(norm, rho) / s2;
            let (t_band, w_exit) = if phase == Phase::Band {
                let t_exit = if dev == 0.0 {
                    f64::INFINITY
                } else {
                    ((mid - rho) / dev.abs()).ln() / kappa
                };
                let tb = t.min(t_exit);
                for j in others() {
                    let g = gram[(j, i)];
                    let top = max_two_exp(g * dev, kappa, spec.unit(j).dot(&perp0), lambda, g * mid, tb);
                    if top > rho {
                        return Err(Error::RegionViolation(format!("direction {j} activates")));
                    }
                }
                let at = |tau: f64| &u * (mid + dev * (kappa * tau).exp()) + &perp0 * (-lambda * tau).exp();
                if t <= t_exit {
                    let w = at(t);
                    let y = &spec.base + w;
                    return if dev == 0.0 {
                        Err(Error::MidpointDegenerate { frozen: y })
                    } else {
                        Ok(y)
                    };
                }
                (t_exit, at(t_exit))
            } else {
                (0.0, w0.clone())
            };
            let up = match phase {
                Phase::Band => dev > 0.0,
                Phase::Top => true,
                Phase::Bottom => false,
            };
            let target = if up { x_i.clone() } else { DVector::zeros(spec.dim()) };
            let w = &target + (&w_exit - &target) * (-(t - t_band) * lambda).exp();
            // Each coordinate moves monotonically toward the target, so endpoints bound it.
            for j in others() {
                let uj = spec.unit(j);
                if uj.dot(&w_exit) > rho || uj.dot(&w) > rho {
                    return Err(Error::RegionViolation(format!("direction {j} activates")));
                }
            }
            Ok(&spec.base + w)
        }
        ObtuseMode::Prob { alpha, t_final } => {
            let rho_t = check_prob_rho(spec, alpha, t_final)?;
            check_time(t, t_final)?;
            if let Some(j) = others().find(|&j| z[j] > rho_t) {
                return Err(Error::RegionViolation(format!("direction {j} starts active")));
            }
            let sqrt_t = t_final.sqrt();
            let dev = z[i] - mid;
            let state = |tt: f64| -> DVector<f64> {
                let q = (tt / t_final).sqrt();
                if z[i] <= rho_t {
                    &w0 * q
                } else if z[i] > norm - rho_t {
                    &x_i + (&w0 - &x_i) * q
                } else {
                    &u * (mid + dev * (2.0 * alpha / norm * (sqrt_t - tt.sqrt())).exp()) + &perp0 * q
                }
            };
            for k in 0..=REGION_GRID {
                let s = t.sqrt() + (sqrt_t - t.sqrt()) * k as f64 / REGION_GRID as f64;
                let w = state(s * s);
                if let Some(j) = others().find(|&j| spec.unit(j).dot(&w) > alpha * s) {
                    return Err(Error::RegionViolation(format!("direction {j} activates")));
                }
            }
            let y = &spec.base + state(t);
            if z[i] > rho_t && z[i] <= norm - rho_t && dev == 0.0 {
                Err(Error::MidpointDegenerate { frozen: y })
            } else {
                Ok(y)
            }
        }
    }
}

/// Solution of `dw/dt = A w + b` for symmetric `A`, written in A's eigenbasis:
/// `Σ_k v_k[(v_k·w0)e^{λ_k t} − (v_k·b)(1 − e^{λ_k t})/λ_k]`.
pub fn affine_symmetric_flow(a: &DMatrix<f64>, b: &DVector<f64>, w0: &DVector<f64>, t: f64) -> DVector<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let mut out = DVector::zeros(w0.len());
    for k in 0..w0.len() {
        let v = eig.eigenvectors.column(k);
        let lam = eig.eigenvalues[k];
        let e = (lam * t).exp();
        let forced = if lam.abs() < 1e-14 {
            v.dot(b) * t
        } else {
            -v.dot(b) * (1.0 - e) / lam
        };
        out += v * (v.dot(w0) * e + forced);
    }
    out
}

/// Indices `(i, j, k)`: `i, j` in their bands, `k` below its lower edge.
fn triangle_region(den: &ClosedFormDenoiser, w: &DVector<f64>) -> Option<(usize, usize, usize)> {
    let z = den.spec().units.tr_mul(w);
    let band: Vec<usize> = (0..3)
        .filter(|&n| {
            let (lo, hi, _) = den.branch(n);
            z[n] > lo && z[n] <= hi
        })
        .collect();
    let low: Vec<usize> = (0..3).filter(|&n| z[n] <= den.branch(n).0).collect();
    match (band.as_slice(), low.as_slice()) {
        ([i, j], [k]) => Some((*i, *j, *k)),
        _ => None,
    }
}

/// Affine data `(A, b)` of the triangle's score in the two-band region of directions `i, j`,
/// in coordinates relative to the centroid.
fn triangle_system(den: &ClosedFormDenoiser, i: usize, j: usize, sigma: f64) -> (DMatrix<f64>, DVector<f64>) {
    let spec = den.spec();
    let d = spec.dim();
    let (lo, _, s) = den.branch(i);
    let (ui, uj) = (spec.unit(i), spec.unit(j));
    let s2 = sigma * sigma;
    let mut a = -DMatrix::<f64>::identity(d, d);
    a.ger(s, &ui, &ui, 1.0);
    a.ger(s, &uj, &uj, 1.0);
    let b = (&ui + &uj) * (-s * lo);
    (a / s2, b / s2)
}

/// Exact score flow on the equilateral triangle while two directions are in their
/// bands and the third is below its lower edge.
pub fn analytic_triangle_score_flow(
    spec: &DatasetSpec,
    rho: f64,
    sigma: f64,
    y0: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    require(spec, DatasetKind::EquilateralTriangle)?;
    if !(t >= 0.0) {
        return Err(Error::Precondition("t must be non-negative".into()));
    }
    let den = ClosedFormDenoiser::new(spec, rho)?;
    let w0 = y0 - &spec.base;
    let Some((i, j, _)) = triangle_region(&den, &w0) else {
        return Err(Error::RegionViolation("start is not in a two-band region".into()));
    };
    let (a, b) = triangle_system(&den, i, j, sigma);
    for k in 1..=REGION_GRID {
        let w = affine_symmetric_flow(&a, &b, &w0, t * k as f64 / REGION_GRID as f64);
        if triangle_region(&den, &w).map(|(p, q, _)| (p, q)) != Some((i, j)) {
            return Err(Error::RegionViolation("trajectory leaves the two-band region".into()));
        }
    }
    Ok(&spec.base + affine_symmetric_flow(&a, &b, &w0, t))
}

/// Limit of the triangle score flow from a two-band start: the vertex on the side of
/// the growing mode, or the edge midpoint when that mode is absent.
pub fn triangle_score_flow_limit(spec: &DatasetSpec, rho: f64, y0: &DVector<f64>) -> Result<DVector<f64>> {
    require(spec, DatasetKind::EquilateralTriangle)?;
    let den = ClosedFormDenoiser::new(spec, rho)?;
    let w0 = y0 - &spec.base;
    let Some((i, j, _)) = triangle_region(&den, &w0) else {
        return Err(Error::RegionViolation("start is not in a two-band region".into()));
    };
    let split = (spec.unit(i) - spec.unit(j)).dot(&w0);
    Ok(if split > 0.0 {
        spec.points[i].clone()
    } else if split < 0.0 {
        spec.points[j].clone()
    } else {
        (&spec.points[i] + &spec.points[j]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_equilateral_triangle, make_obtuse_simplex, make_orthogonal, Norms};
    use crate::denoiser::taylor_eval_orthogonal;
    use crate::flows::numeric::{rk4, rk4_with};
    use crate::flows::Record;

    fn axis(m: usize, d: usize) -> DatasetSpec {
        let mut pts = vec![DVector::zeros(d)];
        for i in 0..m {
            let mut p = DVector::zeros(d);
            p[i] = 1.0;
            pts.push(p);
        }
        DatasetSpec::from_points(DatasetKind::Orthogonal, pts, 0, 0).unwrap()
    }

    fn point(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn frame(s: &DatasetSpec, z: &[f64]) -> DVector<f64> {
        &s.base + &s.units * point(z)
    }

    /// A unit vector orthogonal to the span of the directions.
    fn off_span(s: &DatasetSpec) -> DVector<f64> {
        let d = s.dim();
        let q = s.units.clone().qr().q();
        let mut e = DVector::from_fn(d, |i, _| (i as f64 + 1.0).sin());
        e -= &q * q.tr_mul(&e);
        e.normalize()
    }

    #[test]
    fn score_flow_targets() {
        let s = axis(2, 3);
        let y0 = point(&[0.75, 0.5, 2.0]);
        let r = score_flow_analytic_orthogonal(&s, 0.1, 1.0, &y0, 60.0);
        let Err(Error::MidpointDegenerate { frozen }) = r else {
            panic!("midpoint not flagged")
        };
        assert!((frozen[0] - 1.0).abs() < 1e-12);
        assert_eq!(frozen[1], 0.5);
        assert!(frozen[2].abs() < 1e-12);
    }

    #[test]
    fn score_flow_matches_rk4() {
        let s = make_orthogonal(5, 6, &Norms::Uniform(1.0), 3).unwrap();
        let den = ClosedFormDenoiser::new(&s, 0.1).unwrap();
        let y0 = frame(&s, &[0.6, 0.05, 0.95, 0.3]) + off_span(&s) * 0.7;
        let traj = rk4_with(|_, y| den.eval(y) - y, &y0, 0.0, 3.0, 1e-4, Record::Every(1000)).unwrap();
        for (t, y) in traj.times.iter().zip(&traj.states) {
            let a = score_flow_analytic_orthogonal(&s, 0.1, 1.0, &y0, *t).unwrap();
            assert!((a - y).amax() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn prob_flow_examples() {
        let s = axis(2, 3);
        let yt = point(&[0.6, 0.05, 3.0]);
        let a = prob_flow_analytic_orthogonal(&s, 1.0, &yt, 0.04, 0.04).unwrap();
        assert_eq!(a, yt);
        let a = prob_flow_analytic_orthogonal(&s, 1.0, &yt, 0.04, 0.01).unwrap();
        assert!((a[2] - 1.5).abs() < 1e-15);
        let (lim, hit) = prob_flow_limit(&s, 1.0, &yt, 0.04).unwrap();
        assert!((lim[0] - (0.5 + 0.1 * 0.4f64.exp())).abs() < 1e-15);
        assert_eq!(hit, vec![false, true]);
    }

    #[test]
    fn prob_flow_matches_rk4() {
        let s = make_orthogonal(4, 5, &Norms::Uniform(1.0), 8).unwrap();
        let (alpha, t_final) = (1.0, 0.04);
        let yt = frame(&s, &[0.3, 0.1, 0.9]) + off_span(&s);
        let f = |t: f64, y: &DVector<f64>| -(taylor_eval_orthogonal(&s, y, alpha * t.sqrt()).unwrap() - y) / (2.0 * t);
        let traj = rk4_with(f, &yt, t_final, 0.001, 1e-6, Record::Every(3900)).unwrap();
        for (t, y) in traj.times.iter().zip(&traj.states) {
            let a = prob_flow_analytic_orthogonal(&s, alpha, &yt, t_final, *t).unwrap();
            assert!((a - y).amax() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn limit_examples() {
        let s = axis(1, 1);
        let (l, hit) = prob_flow_limit(&s, 1.0, &point(&[0.75]), 1.0).unwrap();
        assert_eq!((l[0], hit[0]), (1.0, true));
        let (l, hit) = prob_flow_limit(&s, 1.0, &point(&[0.55]), 0.001).unwrap();
        assert!((l[0] - 0.5533).abs() < 1e-4 && !hit[0]);
        let (l, hit) = prob_flow_limit(&s, 1.0, &point(&[0.02]), 0.001).unwrap();
        assert_eq!((l[0], hit[0]), (0.0, true));
        assert!(matches!(
            prob_flow_limit(&s, 1.0, &point(&[0.5]), 0.01),
            Err(Error::MidpointDegenerate { .. })
        ));
    }

    #[test]
    fn tau_examples() {
        let tau = tau_threshold(1.0, 1.0, 0.75).unwrap();
        assert!((tau - 0.25 * 2f64.ln().powi(2)).abs() < 1e-15);
        assert!(tau_threshold(1.0, 1.0, 0.5 + 1e-12).unwrap() > 100.0);
        assert!(matches!(tau_threshold(1.0, 1.0, 0.5), Err(Error::Midpoint)));
    }

    #[test]
    fn escape_examples() {
        let s = axis(2, 2);
        let y0 = point(&[0.75, 0.5]);
        let (t0, t1) = escape_times(&s, 0.1, 1.0, &y0, 0.01).unwrap();
        assert!((t1 - 4.0 * 1.6f64.ln()).abs() < 1e-12);
        assert_eq!(t0, 0.0);
        let y0 = point(&[0.75, 0.05]);
        let (t0, t1) = escape_times(&s, 0.1, 1.0, &y0, 0.01).unwrap();
        assert!((t0 - 5f64.ln()).abs() < 1e-12 && t0 < t1);
        let (_, t1_small) = escape_times(&s, 0.01, 1.0, &y0, 0.01).unwrap();
        assert!(t1_small > t1);
        assert!(matches!(
            escape_times(&s, 0.1, 1.0, &y0, 0.05),
            Err(Error::Precondition(_))
        ));
        let y0 = point(&[0.51, 0.05]);
        assert!(matches!(
            escape_times(&s, 0.24, 1.0, &y0, 0.001),
            Err(Error::EmptyWindow { .. })
        ));
    }

    #[test]
    fn obtuse_score_matches_rk4() {
        let s = make_obtuse_simplex(4, 5, 2).unwrap();
        let rho = 0.1;
        let den = ClosedFormDenoiser::new(&s, rho).unwrap();
        let mode = ObtuseMode::Score { rho, sigma: 1.0 };
        let y0 = &s.base + s.unit(1) * 0.45 + off_span(&s) * 0.3;
        let traj = rk4_with(|_, y| den.eval(y) - y, &y0, 0.0, 30.0, 1e-4, Record::Every(5000)).unwrap();
        for (t, y) in traj.times.iter().zip(&traj.states) {
            let a = analytic_obtuse_flow(&s, mode, 1, &y0, *t).unwrap();
            assert!((a - y).amax() < 1e-6, "t={t}");
        }
        assert!((traj.terminal() - &s.base).amax() < 1e-2);
        let mid = &s.base + s.unit(0) * (s.norms[0] / 2.0);
        assert!(matches!(
            analytic_obtuse_flow(&s, mode, 0, &mid, 3.0),
            Err(Error::MidpointDegenerate { .. })
        ));
        let bad = &s.base + s.unit(0) * 0.45 + s.unit(2) * 0.3;
        assert!(matches!(
            analytic_obtuse_flow(&s, mode, 0, &bad, 1.0),
            Err(Error::RegionViolation(_))
        ));
    }

    #[test]
    fn obtuse_perpendicular_halves() {
        let s = make_obtuse_simplex(3, 6, 5).unwrap();
        let mode = ObtuseMode::Score { rho: 0.1, sigma: 1.0 };
        let e = off_span(&s);
        let y0 = &s.base + s.unit(0) * 0.6 + &e * 0.4;
        let y = analytic_obtuse_flow(&s, mode, 0, &y0, 2f64.ln()).unwrap();
        assert!(((&y - &s.base).dot(&e) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn obtuse_prob_goes_to_nearest() {
        let s = make_obtuse_simplex(3, 4, 1).unwrap();
        let (alpha, t_final) = (1.0, 0.04);
        let mode = ObtuseMode::Prob { alpha, t_final };
        let y0 = &s.base + s.unit(0) * 0.85;
        let y = analytic_obtuse_flow(&s, mode, 0, &y0, 0.0).unwrap();
        assert!((y - &s.points[1]).amax() < 1e-12);
        let y0 = &s.base + s.unit(0) * 0.1;
        let y = analytic_obtuse_flow(&s, mode, 0, &y0, 0.0).unwrap();
        assert!((y - &s.base).amax() < 1e-12);
    }

    fn two_mode(spec: &DatasetSpec, rho: f64, sigma: f64, w0: &DVector<f64>, t: f64) -> DVector<f64> {
        // Independent route: explicit eigenpairs of the two-band system.
        let (n, s2) = (spec.norms[0], sigma * sigma);
        let c = n / (1.5 * n - 2.0 * rho);
        let lo = rho - n / 2.0;
        let (u1, u2) = (spec.unit(0), spec.unit(1));
        let v1 = (&u1 - &u2) / 3f64.sqrt();
        let v2 = &u1 + &u2;
        let (l1, l2) = ((1.5 * c - 1.0) / s2, (0.5 * c - 1.0) / s2);
        let a1 = v1.dot(w0);
        let a2 = v2.dot(w0);
        let eq2 = c * lo / (0.5 * c - 1.0);
        let rest = w0 - &v1 * a1 - &v2 * a2;
        &v1 * (a1 * (l1 * t).exp()) + &v2 * (eq2 + (a2 - eq2) * (l2 * t).exp()) + rest * (-t / s2).exp()
    }

    #[test]
    fn triangle_three_routes_agree() {
        let s = make_equilateral_triangle(4, 1.0).unwrap();
        let (rho, n) = (0.05, s.norms[0]);
        let den = ClosedFormDenoiser::new(&s, rho).unwrap();
        let w0 = (s.unit(0) + s.unit(1)) * 0.3 + (s.unit(0) - s.unit(1)) * 0.02;
        let y0 = &s.base + &w0;
        let traj = rk4_with(|_, y| den.eval(y) - y, &y0, 0.0, 0.5, 1e-4, Record::Every(500)).unwrap();
        for (t, y) in traj.times.iter().zip(&traj.states) {
            let a = analytic_triangle_score_flow(&s, rho, 1.0, &y0, *t).unwrap();
            assert!((&a - y).amax() < 1e-5, "t={t}");
            assert!((&a - &s.base - two_mode(&s, rho, 1.0, &w0, *t)).amax() < 1e-12);
        }
        assert!(n > 0.0);
    }

    #[test]
    fn triangle_limits() {
        let s = make_equilateral_triangle(3, 1.0).unwrap();
        let rho = 0.05;
        let den = ClosedFormDenoiser::new(&s, rho).unwrap();
        let run = |w0: DVector<f64>| {
            let y0 = &s.base + w0;
            let lim = triangle_score_flow_limit(&s, rho, &y0).unwrap();
            let end = rk4(|_, y| den.eval(y) - y, &y0, 0.0, 40.0, 1e-3).unwrap();
            (lim, end.terminal().clone())
        };
        let (lim, end) = run((s.unit(0) + s.unit(1)) * 0.3 + (s.unit(0) - s.unit(1)) * 0.02);
        assert!((&lim - &s.points[0]).amax() < 1e-15 && (end - lim).amax() < 1e-6);
        let (lim, end) = run((s.unit(0) + s.unit(1)) * 0.3);
        let mid = (&s.points[0] + &s.points[1]) / 2.0;
        assert!((&lim - &mid).amax() < 1e-15 && (end - lim).amax() < 1e-6);
        let bad = &s.base + s.unit(2) * 0.3;
        assert!(matches!(
            analytic_triangle_score_flow(&s, rho, 1.0, &bad, 1.0),
            Err(Error::RegionViolation(_))
        ));
    }
}
