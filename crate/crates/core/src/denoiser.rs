//! Closed-form minimum-norm denoisers and their scores.
//!
//! Every supported geometry shares one shape: along each direction `u_n` the
//! denoiser applies a clipped ramp
//! `φ_n(z) = s_n([z − lo_n]_+ − [z − hi_n]_+)` with `s_n (hi_n − lo_n) = ‖x_n − base‖`,
//! and drops everything outside the span of the directions. For the orthogonal
//! and obtuse kinds `lo = ρ`, `hi = ‖x‖ − ρ`; for the triangle
//! `lo = ρ − ‖x‖/2`, `hi = ‖x‖ − ρ`, measured from the centroid.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::datasets::{DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::flows::LevelDenoiser;

const KINK_TOL: f64 = 1e-12;

/// Default ball radius `ρ = √d · σ`: Gaussian noise norms concentrate at `σ√d`.
pub fn default_rho(d: usize, sigma: f64) -> f64 {
    (d as f64).sqrt() * sigma
}

#[derive(Clone, Debug)]
pub struct ClosedFormDenoiser {
    spec: Arc<DatasetSpec>,
    rho: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    slope: Vec<f64>,
}

/// One ReLU unit `a [w·y + b]_+`.
#[derive(Clone, Debug)]
pub struct Neuron {
    pub a: DVector<f64>,
    pub w: DVector<f64>,
    pub b: f64,
}

impl ClosedFormDenoiser {
    pub fn new(spec: &DatasetSpec, rho: f64) -> Result<Self> {
        Self::shared(Arc::new(spec.clone()), rho)
    }

    /// Augmented points are ignored: the denoiser is built on the frame alone.
    pub fn shared(spec: Arc<DatasetSpec>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Precondition(format!("rho must be positive, got {rho}")));
        }
        let m = spec.n_dirs();
        let (mut lo, mut hi, mut slope) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
        for &nrm in &spec.norms {
            if rho >= nrm / 2.0 {
                return Err(Error::Precondition(format!(
                    "rho={rho} must be below half of every norm (min norm {})",
                    spec.min_norm()
                )));
            }
            let (l, h) = match spec.kind {
                DatasetKind::EquilateralTriangle => (rho - nrm / 2.0, nrm - rho),
                _ => (rho, nrm - rho),
            };
            lo.push(l);
            hi.push(h);
            slope.push(nrm / (h - l));
        }
        Ok(ClosedFormDenoiser {
            spec,
            rho,
            lo,
            hi,
            slope,
        })
    }

    /// Same dataset, different radius.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::shared(Arc::clone(&self.spec), rho)
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> Arc<DatasetSpec> {
        Arc::clone(&self.spec)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `(lo, hi, slope)` of direction `i`.
    pub fn branch(&self, i: usize) -> (f64, f64, f64) {
        (self.lo[i], self.hi[i], self.slope[i])
    }

    fn ramp(&self, i: usize, z: f64) -> f64 {
        self.slope[i] * ((z - self.lo[i]).max(0.0) - (z - self.hi[i]).max(0.0))
    }

    pub fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        let z = self.spec.project(y);
        let phi = DVector::from_iterator(z.len(), z.iter().enumerate().map(|(i, &zi)| self.ramp(i, zi)));
        &self.spec.base + &self.spec.units * phi
    }

    /// `(eval(y) − y) / σ²`.
    pub fn score(&self, y: &DVector<f64>, sigma: f64) -> DVector<f64> {
        (self.eval(y) - y) / (sigma * sigma)
    }

    /// 1 where only the lower ReLU of a direction is active (`lo < z ≤ hi`).
    pub fn activation_pattern(&self, y: &DVector<f64>) -> Vec<u8> {
        let z = self.spec.project(y);
        z.iter()
            .enumerate()
            .map(|(i, &zi)| u8::from(zi > self.lo[i] && zi <= self.hi[i]))
            .collect()
    }

    /// First direction whose coordinate lies within 1e-12 of a kink.
    pub fn kink_direction(&self, y: &DVector<f64>) -> Option<usize> {
        let z = self.spec.project(y);
        (0..z.len()).find(|&i| (z[i] - self.lo[i]).abs() < KINK_TOL || (z[i] - self.hi[i]).abs() < KINK_TOL)
    }

    /// Jacobian of the score, `(Σ_n s_n Δ_n u_n u_nᵀ − I)/σ²`.
    pub fn jacobian(&self, y: &DVector<f64>, sigma: f64) -> Result<DMatrix<f64>> {
        if let Some(direction) = self.kink_direction(y) {
            return Err(Error::OnBoundary { direction });
        }
        let z = self.spec.project(y);
        let d = self.spec.dim();
        let mut j = -DMatrix::<f64>::identity(d, d);
        for (i, &zi) in z.iter().enumerate() {
            if zi > self.lo[i] && zi <= self.hi[i] {
                let u = self.spec.units.column(i);
                j.ger(self.slope[i], &u, &u, 1.0);
            }
        }
        Ok(j / (sigma * sigma))
    }

    /// Two units per direction realize the ramp; the output bias is the base point.
    pub fn neurons(&self) -> (Vec<Neuron>, DVector<f64>) {
        let mut out = Vec::with_capacity(2 * self.spec.n_dirs());
        for i in 0..self.spec.n_dirs() {
            let u = self.spec.unit(i);
            let shift = u.dot(&self.spec.base);
            out.push(Neuron {
                a: &u * self.slope[i],
                w: u.clone(),
                b: -self.lo[i] - shift,
            });
            out.push(Neuron {
                a: &u * -self.slope[i],
                w: u,
                b: -self.hi[i] - shift,
            });
        }
        (out, self.spec.base.clone())
    }

    /// `Σ_k ‖a_k‖‖w_k‖` of [`Self::neurons`], i.e. `2 Σ_n s_n`.
    pub fn balanced_cost(&self) -> f64 {
        2.0 * self.slope.iter().sum::<f64>()
    }
}

/// Closed-form denoisers across noise levels with `ρ(σ) = min(ασ, cap · min‖x‖)`.
/// The cap keeps every level well defined at large σ; it must lie in `(0, 1/2)`.
#[derive(Clone, Debug)]
pub struct ClosedFormFamily {
    spec: Arc<DatasetSpec>,
    alpha: f64,
    cap: f64,
}

impl ClosedFormFamily {
    pub fn new(spec: &DatasetSpec, alpha: f64, cap_fraction: f64) -> Self {
        Self::shared(Arc::new(spec.clone()), alpha, cap_fraction)
    }

    pub fn shared(spec: Arc<DatasetSpec>, alpha: f64, cap_fraction: f64) -> Self {
        assert!(alpha > 0.0 && cap_fraction > 0.0 && cap_fraction < 0.5);
        let cap = cap_fraction * spec.min_norm();
        Self { spec, alpha, cap }
    }

    pub fn rho_at(&self, sigma: f64) -> f64 {
        (self.alpha * sigma).min(self.cap)
    }

    pub fn at(&self, sigma: f64) -> ClosedFormDenoiser {
        ClosedFormDenoiser::shared(self.spec.clone(), self.rho_at(sigma)).expect("capped rho is valid")
    }
}

impl LevelDenoiser for ClosedFormFamily {
    fn denoise(&self, y: &DVector<f64>, _level: usize, sigma: f64) -> DVector<f64> {
        self.at(sigma).eval(y)
    }
}

/// Linearized orthogonal denoisers with the same `ρ(σ)` rule as [`ClosedFormFamily`].
#[derive(Clone, Debug)]
pub struct TaylorFamily {
    spec: Arc<DatasetSpec>,
    alpha: f64,
    cap: f64,
}

impl TaylorFamily {
    pub fn new(spec: &DatasetSpec, alpha: f64, cap_fraction: f64) -> Result<Self> {
        check_taylor(spec, cap_fraction * spec.min_norm(), DatasetKind::Orthogonal)?;
        if !(alpha > 0.0) {
            return Err(Error::Precondition("alpha must be positive".into()));
        }
        Ok(Self {
            spec: Arc::new(spec.clone()),
            alpha,
            cap: cap_fraction * spec.min_norm(),
        })
    }

    pub fn rho_at(&self, sigma: f64) -> f64 {
        (self.alpha * sigma).min(self.cap)
    }
}

impl LevelDenoiser for TaylorFamily {
    fn denoise(&self, y: &DVector<f64>, _level: usize, sigma: f64) -> DVector<f64> {
        taylor_eval_orthogonal(&self.spec, y, self.rho_at(sigma)).expect("capped rho is valid")
    }
}

fn check_taylor(spec: &DatasetSpec, rho: f64, kind: DatasetKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::Precondition(format!("needs a {kind} dataset")));
    }
    if !(rho > 0.0) || rho >= spec.min_norm() / 2.0 {
        return Err(Error::Precondition(format!("rho={rho} outside (0, min norm / 2)")));
    }
    Ok(())
}

/// Linearized ramp for orthogonal data: `−z` below ρ, `ρ(2z/‖x‖ − 1)` in the band, `‖x‖ − z` above.
pub fn taylor_phi(z: f64, norm: f64, rho: f64) -> f64 {
    if z <= rho {
        -z
    } else if z <= norm - rho {
        rho * (2.0 * z / norm - 1.0)
    } else {
        norm - z
    }
}

/// Denoiser implied by the linearized score: `base + Σ u_n (z_n + φ(z_n))`.
pub fn taylor_eval_orthogonal(spec: &DatasetSpec, y: &DVector<f64>, rho: f64) -> Result<DVector<f64>> {
    check_taylor(spec, rho, DatasetKind::Orthogonal)?;
    let z = spec.project(y);
    let w = DVector::from_iterator(
        z.len(),
        z.iter().zip(&spec.norms).map(|(&zi, &n)| zi + taylor_phi(zi, n, rho)),
    );
    Ok(&spec.base + &spec.units * w)
}

/// Linearized score for orthogonal data.
pub fn score_taylor_orthogonal(spec: &DatasetSpec, y: &DVector<f64>, rho_t: f64, sigma_t: f64) -> Result<DVector<f64>> {
    Ok((taylor_eval_orthogonal(spec, y, rho_t)? - y) / (sigma_t * sigma_t))
}

/// Linearized score for obtuse data in the region where only direction `i` is in its band.
pub fn score_taylor_obtuse(
    spec: &DatasetSpec,
    y: &DVector<f64>,
    rho_t: f64,
    sigma_t: f64,
    i: usize,
) -> Result<DVector<f64>> {
    check_taylor(spec, rho_t, DatasetKind::ObtuseSimplex)?;
    if i >= spec.n_dirs() {
        return Err(Error::IndexOutOfRange {
            index: i,
            max: spec.n_dirs(),
        });
    }
    let v = y - &spec.base;
    let z = spec.units.tr_mul(&v);
    let norm = spec.norms[i];
    if !(z[i] > rho_t && z[i] <= norm - rho_t) {
        return Err(Error::RegionViolation(format!("direction {i} is outside its band")));
    }
    if let Some(j) = (0..z.len()).find(|&j| j != i && z[j] > rho_t) {
        return Err(Error::RegionViolation(format!("direction {j} is active")));
    }
    let u = spec.unit(i);
    let g = 1.0 + 2.0 * rho_t / norm;
    let s = &u * (g * u.dot(&v) - rho_t) - v;
    Ok(s / (sigma_t * sigma_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_equilateral_triangle, make_obtuse_simplex, make_orthogonal, Norms};

    fn unit_orth() -> DatasetSpec {
        make_orthogonal(4, 5, &Norms::Uniform(1.0), 1).unwrap()
    }

    fn axis_orth() -> DatasetSpec {
        let pts = vec![
            DVector::zeros(3),
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
        ];
        DatasetSpec::from_points(DatasetKind::Orthogonal, pts, 0, 0).unwrap()
    }

    #[test]
    fn hand_values_orthogonal() {
        let s = unit_orth();
        let den = ClosedFormDenoiser::new(&s, 0.1).unwrap();
        let y = s.unit(0) * 0.5;
        assert!((den.eval(&y) - &y).amax() < 1e-15);
        let y = s.unit(0) * 0.05;
        assert!(den.eval(&y).amax() < 1e-15);
    }

    #[test]
    fn interpolates_all_geometries() {
        let specs = [
            unit_orth(),
            make_obtuse_simplex(4, 4, 3).unwrap(),
            make_equilateral_triangle(3, 2.0).unwrap(),
        ];
        for s in &specs {
            let den = ClosedFormDenoiser::new(s, 0.1).unwrap();
            for p in &s.points {
                assert!((den.eval(p) - p).amax() < 1e-12, "{:?}", s.kind);
            }
        }
    }

    #[test]
    fn rejects_large_rho() {
        let s = unit_orth();
        assert!(ClosedFormDenoiser::new(&s, 0.5).is_err());
        assert!(ClosedFormDenoiser::new(&s, 0.0).is_err());
    }

    #[test]
    fn score_scaling_and_zeros() {
        let s = unit_orth();
        let den = ClosedFormDenoiser::new(&s, 0.1).unwrap();
        let v = crate::datasets::virtual_point(&s, &[1, 3]).unwrap();
        assert!(den.score(&v, 0.3).amax() < 1e-12);
        let y = DVector::from_fn(5, |i, _| 0.3 + 0.1 * i as f64);
        let a = den.score(&y, 0.2);
        let b = den.score(&y, 0.1);
        assert!((b - a * 4.0).amax() < 1e-9);
    }

    #[test]
    fn activation_conventions() {
        let s = unit_orth();
        let den = ClosedFormDenoiser::new(&s, 0.1).unwrap();
        assert!(den.activation_pattern(&s.points[2]).iter().all(|d| *d == 0));
        let y = s.unit(0) * 0.5;
        assert_eq!(den.activation_pattern(&y)[0], 1);
        let axes = axis_orth();
        let den = ClosedFormDenoiser::new(&axes, 0.1).unwrap();
        let y = DVector::from_vec(vec![0.1, 0.9, 0.0]);
        assert_eq!(den.activation_pattern(&y), vec![0, 1]);
    }

    #[test]
    fn jacobian_hand_values() {
        let s = unit_orth();
        let den = ClosedFormDenoiser::new(&s, 0.1).unwrap();
        let j = den.jacobian(&s.points[1], 1.0).unwrap();
        assert!((j + DMatrix::identity(5, 5)).amax() < 1e-15);
        let y = s.unit(0) * 0.5 + s.unit(1) * 0.02;
        let j = den.jacobian(&y, 1.0).unwrap();
        let u = s.unit(0);
        let lam = (u.transpose() * &j * &u)[(0, 0)];
        assert!((lam - 0.25).abs() < 1e-12);
        let den = ClosedFormDenoiser::new(&axis_orth(), 0.1).unwrap();
        let y = DVector::from_vec(vec![0.1, 0.5, 0.0]);
        assert!(matches!(den.jacobian(&y, 1.0), Err(Error::OnBoundary { direction: 0 })));
    }

    #[test]
    fn taylor_hand_values() {
        let s = unit_orth();
        let y = s.unit(0) * 0.7;
        let sc = score_taylor_orthogonal(&s, &y, 0.1, 1.0).unwrap();
        assert!((sc.dot(&s.unit(0)) - 0.04).abs() < 1e-12);
        let r = crate::datasets::residual_vector(&s, &DVector::from_element(5, 1.0));
        let sc = score_taylor_orthogonal(&s, &r, 0.1, 0.5).unwrap();
        assert!((sc + &r * 4.0).amax() < 1e-12);
    }

    #[test]
    fn taylor_obtuse_components() {
        let s = make_obtuse_simplex(4, 4, 5).unwrap();
        let u = s.unit(1);
        let y = &u * 0.6 - s.unit(0) * 0.05;
        let sc = score_taylor_obtuse(&s, &y, 0.1, 0.5, 1).unwrap();
        let z = u.dot(&y);
        assert!((sc.dot(&u) - 0.1 * (2.0 * z - 1.0) / 0.25).abs() < 1e-12);
        let perp = &y - &u * z;
        assert!((&sc - &u * sc.dot(&u) + perp / 0.25).amax() < 1e-12);
        let mid = &u * 0.5;
        assert!(score_taylor_obtuse(&s, &mid, 0.1, 0.5, 1).unwrap().dot(&u).abs() < 1e-15);
        assert!(matches!(
            score_taylor_obtuse(&s, &(u * 0.05), 0.1, 0.5, 1),
            Err(Error::RegionViolation(_))
        ));
    }

    #[test]
    fn neuron_cost_matches_slopes() {
        let s = unit_orth();
        let den = ClosedFormDenoiser::new(&s, 0.1).unwrap();
        assert!((den.balanced_cost() - 3.0 * 2.0 / 0.8).abs() < 1e-12);
    }
}
