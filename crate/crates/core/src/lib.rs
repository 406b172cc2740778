//! Minimum-norm shallow ReLU denoisers and the sampling dynamics they induce.
//!
//! The closed-form denoisers of [`denoiser`] interpolate every training point on a
//! ball of radius ρ at the least representation cost. Their score fields drive the
//! score flow and the probability-flow ODE of [`flows`], whose stable points and
//! limits are characterized in [`stability`] and measured in [`classify`]. The
//! [`nets`] module trains real networks toward the same minimizers, and
//! [`harness`] wires everything into reproducible experiments.

// `!(x > 0.0)` guards are deliberate: they reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod datasets;
pub mod denoiser;
pub mod error;
pub mod flows;
pub mod harness;
pub mod nets;
pub mod rng;
pub mod stability;

pub use classify::{ConvergenceKind, ConvergenceLabel, Metric, StatsReport};
pub use datasets::{DatasetKind, DatasetSpec, HyperboxCoords, Norms};
pub use denoiser::ClosedFormDenoiser;
pub use error::{Error, Result};
pub use flows::{NoiseSchedule, Trajectory};
pub use nets::{NetParams, NoisyDataset};
pub use stability::StabilityReport;

pub use nalgebra::{DMatrix, DVector};
