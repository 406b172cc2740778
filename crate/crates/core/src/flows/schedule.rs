use crate::error::{Error, Result};

/// Noise levels `σ_1 < … < σ_S = √T` with `t_k = σ_k²`; the flow ends at `t_0 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub t_final: f64,
    /// Ascending: `sigmas[k − 1] = σ_k`.
    pub sigmas: Vec<f64>,
    pub alpha: f64,
    pub split_sigma: f64,
}

impl NoiseSchedule {
    /// Number of levels S.
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// `σ_k` for `k ∈ 0..=S`, with `σ_0 = 0`.
    pub fn sigma(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.sigmas[k - 1]
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        let s = self.sigma(k);
        s * s
    }

    pub fn rho(&self, k: usize) -> f64 {
        self.alpha * self.sigma(k)
    }

    /// `t_S, …, t_1` (descending).
    pub fn times(&self) -> Vec<f64> {
        (1..=self.len()).rev().map(|k| self.time(k)).collect()
    }

    /// Levels with `σ ≤ split_sigma`.
    pub fn low_noise_levels(&self) -> usize {
        self.sigmas.iter().filter(|s| **s <= self.split_sigma).count()
    }
}

/// `floor(S/3)` levels equally spaced in `σ ∈ (0, split]`, the rest equally spaced in `(split, √T]`.
pub fn make_schedule(t_final: f64, s: usize, split_sigma: f64, alpha: f64) -> Result<NoiseSchedule> {
    if !(t_final > 0.0) || s < 2 {
        return Err(Error::Precondition("schedule needs T > 0 and S >= 2".into()));
    }
    let top = t_final.sqrt();
    if !(split_sigma > 0.0) || split_sigma >= top {
        return Err(Error::BadSplit {
            split: split_sigma,
            max: top,
        });
    }
    let low = s / 3;
    let high = s - low;
    let mut sigmas = Vec::with_capacity(s);
    for i in 1..=low {
        sigmas.push(split_sigma * i as f64 / low as f64);
    }
    for j in 1..=high {
        sigmas.push(split_sigma + (top - split_sigma) * j as f64 / high as f64);
    }
    sigmas[s - 1] = top;
    Ok(NoiseSchedule {
        t_final,
        sigmas,
        alpha,
        split_sigma,
    })
}
