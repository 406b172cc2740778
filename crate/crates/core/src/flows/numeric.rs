use nalgebra::DVector;

use super::{FlowKind, LevelDenoiser, NoiseSchedule, Record, Trajectory};
use crate::error::{Error, Result};

fn finite(y: &DVector<f64>) -> bool {
    y.iter().all(|x| x.is_finite())
}

/// Euler score flow `y ← y + γ(h(y) − y)/σ²` at a fixed noise level. State `k` sits at time `kγ`.
pub fn score_flow_numeric<F>(den: F, y0: &DVector<f64>, gamma: f64, iters: usize, sigma_t0: f64) -> Result<Trajectory>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    score_flow_numeric_with(den, y0, gamma, iters, sigma_t0, Record::All)
}

pub fn score_flow_numeric_with<F>(
    den: F,
    y0: &DVector<f64>,
    gamma: f64,
    iters: usize,
    sigma_t0: f64,
    record: Record,
) -> Result<Trajectory>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(gamma > 0.0) {
        return Err(Error::Precondition("step size must be positive".into()));
    }
    let params = vec![
        ("gamma".to_string(), gamma),
        ("iters".to_string(), iters as f64),
        ("sigma".to_string(), sigma_t0),
    ];
    let mut traj = Trajectory::new(FlowKind::ScoreFlow, params);
    let c = gamma / (sigma_t0 * sigma_t0);
    let mut y = y0.clone();
    traj.push(0.0, sigma_t0, y.clone());
    for k in 1..=iters {
        let h = den(&y);
        y += (h - &y) * c;
        if !finite(&y) {
            return Err(Error::NonFinite { step: k });
        }
        if record.keep(k, iters) {
            traj.push(k as f64 * gamma, sigma_t0, y.clone());
        }
    }
    Ok(traj)
}

/// Euler probability flow from level S down to `t_0 = 0`:
/// `y_{k−1} = y_k + (σ_k² − σ_{k−1}²)(h_k(y_k) − y_k)/(2σ_k²)`.
pub fn prob_flow_numeric<D>(den: &D, y_t: &DVector<f64>, sched: &NoiseSchedule) -> Result<Trajectory>
where
    D: LevelDenoiser + ?Sized,
{
    prob_flow_numeric_with(den, y_t, sched, Record::All)
}

pub fn prob_flow_numeric_with<D>(
    den: &D,
    y_t: &DVector<f64>,
    sched: &NoiseSchedule,
    record: Record,
) -> Result<Trajectory>
where
    D: LevelDenoiser + ?Sized,
{
    let s = sched.len();
    let params = vec![
        ("T".to_string(), sched.t_final),
        ("S".to_string(), s as f64),
        ("alpha".to_string(), sched.alpha),
    ];
    let mut traj = Trajectory::new(FlowKind::ProbabilityFlow, params);
    let mut y = y_t.clone();
    traj.push(sched.time(s), sched.sigma(s), y.clone());
    for k in (1..=s).rev() {
        let sk = sched.sigma(k);
        let c = (sk * sk - sched.time(k - 1)) / (2.0 * sk * sk);
        let h = den.denoise(&y, k, sk);
        y += (h - &y) * c;
        let step = s - k + 1;
        if !finite(&y) {
            return Err(Error::NonFinite { step });
        }
        if record.keep(step, s) {
            traj.push(sched.time(k - 1), sched.sigma(k - 1), y.clone());
        }
    }
    Ok(traj)
}

/// Classical RK4 for `dy/dt = f(t, y)` from `t0` to `t1` with `ceil(|t1 − t0|/dt)` equal steps.
pub fn rk4<F>(f: F, y0: &DVector<f64>, t0: f64, t1: f64, dt: f64) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    rk4_with(f, y0, t0, t1, dt, Record::All)
}

pub fn rk4_with<F>(mut f: F, y0: &DVector<f64>, t0: f64, t1: f64, dt: f64, record: Record) -> Result<Trajectory>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    if !(dt > 0.0) {
        return Err(Error::Precondition("dt must be positive".into()));
    }
    let n = ((t1 - t0).abs() / dt).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let mut traj = Trajectory::new(FlowKind::Rk4, vec![("dt".to_string(), h.abs())]);
    let mut y = y0.clone();
    traj.push(t0, f64::NAN, y.clone());
    for k in 1..=n {
        let t = t0 + (k - 1) as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + h / 2.0, &(&y + &k1 * (h / 2.0)));
        let k3 = f(t + h / 2.0, &(&y + &k2 * (h / 2.0)));
        let k4 = f(t + h, &(&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !finite(&y) {
            return Err(Error::NonFinite { step: k });
        }
        if record.keep(k, n) {
            traj.push(t0 + k as f64 * h, f64::NAN, y.clone());
        }
    }
    Ok(traj)
}

/// Probability flow in log-noise time `r = −log σ`: `dy/dr = h_{σ(r)}(y) − y`,
/// integrated by RK4 from `t = T` down to `t = t_end`. Recorded times are `t = e^{−2r}`.
pub fn prob_flow_rescaled<F>(
    den: F,
    y_t: &DVector<f64>,
    t_final: f64,
    t_end: f64,
    dr: f64,
    record: Record,
) -> Result<Trajectory>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    if !(t_end > 0.0 && t_end < t_final) {
        return Err(Error::Precondition("need 0 < t_end < T".into()));
    }
    let r0 = -0.5 * t_final.ln();
    let r1 = -0.5 * t_end.ln();
    let mut traj = rk4_with(|r, y| den(y, (-r).exp()) - y, y_t, r0, r1, dr, record)?;
    traj.meta.kind = FlowKind::Rescaled;
    for (t, s) in traj.times.iter_mut().zip(traj.sigmas.iter_mut()) {
        *s = (-*t).exp();
        *t = *s * *s;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{make_orthogonal, virtual_point, Norms};
    use crate::denoiser::{ClosedFormDenoiser, ClosedFormFamily};
    use crate::flows::make_schedule;

    #[test]
    fn score_flow_fixed_at_training_point() {
        let s = make_orthogonal(4, 5, &Norms::Uniform(1.0), 0).unwrap();
        let den = ClosedFormDenoiser::new(&s, 0.1).unwrap();
        let t = score_flow_numeric(|y| den.eval(y), &s.points[2], 1e-3, 50, 0.1).unwrap();
        assert!(t.states.iter().all(|y| (y - &s.points[2]).amax() < 1e-14));
        assert_eq!(t.len(), 51);
    }

    #[test]
    fn prob_flow_fixed_at_virtual_point() {
        let s = make_orthogonal(5, 6, &Norms::Uniform(1.0), 0).unwrap();
        let fam = ClosedFormFamily::new(&s, 1.0, 0.45);
        let sched = make_schedule(0.16, 30, 0.2, 1.0).unwrap();
        let v = virtual_point(&s, &[1, 3]).unwrap();
        let t = prob_flow_numeric(&fam, &v, &sched).unwrap();
        assert!((t.terminal() - &v).amax() < 1e-9);
        assert!((t.times[0] - 0.16).abs() < 1e-15);
        assert_eq!(*t.times.last().unwrap(), 0.0);
    }

    #[test]
    fn rk4_exponential() {
        let y0 = DVector::from_element(1, 1.0);
        let t = rk4(|_, y| -y, &y0, 0.0, 1.0, 1e-3).unwrap();
        assert!((t.terminal()[0] - (-1f64).exp()).abs() < 1e-12);
        let t = rk4_with(|_, y| -y, &y0, 1.0, 0.0, 1e-3, Record::Terminal).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t.terminal()[0] - 1f64.exp()).abs() < 1e-11);
    }

    #[test]
    fn record_strides() {
        let y0 = DVector::from_element(1, 1.0);
        let t = score_flow_numeric_with(|y| y * 0.0, &y0, 0.1, 10, 1.0, Record::Every(4)).unwrap();
        assert_eq!(t.times.len(), 4);
    }
}
