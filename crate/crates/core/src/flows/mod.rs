//! Score flow and probability-flow ODE: Euler discretizations, an RK4 oracle,
//! and the closed-form trajectories available for the solvable geometries.

mod analytic;
mod numeric;
mod schedule;

pub use analytic::*;
pub use numeric::*;
pub use schedule::*;

use nalgebra::DVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowKind {
    FixedPoint,
    ScoreFlow,
    ProbabilityFlow,
    Rk4,
    Rescaled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowMeta {
    pub kind: FlowKind,
    pub params: Vec<(String, f64)>,
}

/// Time-stamped states. `sigmas` is NaN where no noise level applies.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub meta: FlowMeta,
}

impl Trajectory {
    pub fn new(kind: FlowKind, params: Vec<(String, f64)>) -> Self {
        Trajectory {
            times: Vec::new(),
            sigmas: Vec::new(),
            states: Vec::new(),
            meta: FlowMeta { kind, params },
        }
    }

    pub fn push(&mut self, t: f64, sigma: f64, y: DVector<f64>) {
        self.times.push(t);
        self.sigmas.push(sigma);
        self.states.push(y);
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least its start")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Which states an integrator keeps. The start and the terminal state are always kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Record {
    All,
    Every(usize),
    Terminal,
}

impl Record {
    fn keep(self, step: usize, last: usize) -> bool {
        step == 0
            || step == last
            || match self {
                Record::All => true,
                Record::Every(k) => k > 0 && step.is_multiple_of(k),
                Record::Terminal => false,
            }
    }
}

/// A denoiser indexed by noise level, as used by the probability flow.
pub trait LevelDenoiser: Sync {
    /// `level` counts from 1 (least noise) to S; `sigma` is that level's noise std.
    fn denoise(&self, y: &DVector<f64>, level: usize, sigma: f64) -> DVector<f64>;
}

impl<F> LevelDenoiser for F
where
    F: Fn(&DVector<f64>, usize, f64) -> DVector<f64> + Sync,
{
    fn denoise(&self, y: &DVector<f64>, level: usize, sigma: f64) -> DVector<f64> {
        self(y, level, sigma)
    }
}
