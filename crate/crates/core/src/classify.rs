//! Where did a trajectory end up: a training point, a virtual point, the hyperbox boundary, or elsewhere.
//!
//! Distances are measured in the frame: the differences of the direction
//! coordinates plus the off-span residual, which enters as one extra coordinate
//! of size `‖residual‖₂`. Under L2 this is the ambient Euclidean distance.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DVector, Vector3};

use crate::datasets::{residual_vector, DatasetKind, DatasetSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Linf,
    L2,
}

impl Metric {
    /// Norm of the frame difference `dz` together with a residual of norm `r`.
    pub fn combine(self, dz: impl Iterator<Item = f64>, r: f64) -> f64 {
        match self {
            Metric::Linf => dz.fold(r.abs(), |m, x| m.max(x.abs())),
            Metric::L2 => (dz.map(|x| x * x).sum::<f64>() + r * r).sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Linf => "linf",
            Metric::L2 => "l2",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linf" | "l_inf" | "inf" => Ok(Metric::Linf),
            "l2" => Ok(Metric::L2),
            _ => Err(Error::Config(format!("unknown metric {s:?} (use linf or l2)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvergenceKind {
    /// Index into the dataset's points.
    TrainingPoint(usize),
    /// Number of directions in the subset.
    VirtualPoint(usize),
    /// Index into the dataset's points.
    AugmentedPoint(usize),
    Boundary,
    Other,
}

/// Categories in report order.
pub const CATEGORIES: [&str; 5] = ["training", "virtual", "augmented", "boundary", "other"];

impl ConvergenceKind {
    pub fn category(self) -> usize {
        match self {
            ConvergenceKind::TrainingPoint(_) => 0,
            ConvergenceKind::VirtualPoint(_) => 1,
            ConvergenceKind::AugmentedPoint(_) => 2,
            ConvergenceKind::Boundary => 3,
            ConvergenceKind::Other => 4,
        }
    }

    pub fn name(self) -> &'static str {
        CATEGORIES[self.category()]
    }

    /// Index or cardinality, empty for the other kinds.
    pub fn detail(self) -> String {
        match self {
            ConvergenceKind::TrainingPoint(i)
            | ConvergenceKind::AugmentedPoint(i)
            | ConvergenceKind::VirtualPoint(i) => i.to_string(),
            ConvergenceKind::Boundary | ConvergenceKind::Other => String::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceLabel {
    pub kind: ConvergenceKind,
    pub distance: f64,
    pub metric: Metric,
    pub threshold: f64,
}

/// Tests tried in order by [`classify_with`]; the first within threshold wins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    Explicit,
    Virtual,
    Boundary,
}

pub const DEFAULT_PRECEDENCE: [Check; 3] = [Check::Explicit, Check::Virtual, Check::Boundary];

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "training" => Ok(Check::Explicit),
            "virtual" => Ok(Check::Virtual),
            "boundary" => Ok(Check::Boundary),
            _ => Err(Error::Config(format!("unknown precedence entry {s:?}"))),
        }
    }
}

fn require_orthogonal(spec: &DatasetSpec) {
    assert_eq!(
        spec.kind,
        DatasetKind::Orthogonal,
        "classification needs an orthogonal dataset"
    );
}

/// Distance to the boundary of `∏[0, ‖x_n‖]` in the span, under `metric`.
pub fn distance_to_hyperbox_metric(spec: &DatasetSpec, y: &DVector<f64>, metric: Metric) -> f64 {
    require_orthogonal(spec);
    let z = spec.project(y);
    let r = residual_vector(spec, y).norm();
    let inside = z.iter().zip(&spec.norms).all(|(&zi, &n)| zi > 0.0 && zi < n);
    if inside {
        let push = z
            .iter()
            .zip(&spec.norms)
            .map(|(&zi, &n)| zi.min(n - zi))
            .fold(f64::INFINITY, f64::min);
        metric.combine(std::iter::once(push), r)
    } else {
        let excess = z.iter().zip(&spec.norms).map(|(&zi, &n)| zi - zi.clamp(0.0, n));
        metric.combine(excess, r)
    }
}

/// Euclidean distance to the hyperbox boundary.
pub fn distance_to_hyperbox(spec: &DatasetSpec, y: &DVector<f64>) -> f64 {
    distance_to_hyperbox_metric(spec, y, Metric::L2)
}

/// Distance between `y` and a point `p` of the span.
fn point_distance(spec: &DatasetSpec, y: &DVector<f64>, p: &DVector<f64>, metric: Metric) -> f64 {
    let diff = y - p;
    let dz = spec.units.tr_mul(&diff);
    let r = (&diff - &spec.units * &dz).norm();
    metric.combine(dz.iter().copied(), r)
}

pub fn classify(spec: &DatasetSpec, y: &DVector<f64>, metric: Metric, threshold: f64) -> ConvergenceLabel {
    classify_with(spec, y, metric, threshold, &DEFAULT_PRECEDENCE)
}

/// Labels `y` by the first check in `precedence` that lands within `threshold`.
/// Explicit points include the base point and augmented points; the nearest one is used.
/// The virtual check snaps each coordinate to `0` or `‖x_n‖` (ties go to 0) and
/// accepts subsets of size ≥ 2. A label of `Other` carries the hyperbox distance.
pub fn classify_with(
    spec: &DatasetSpec,
    y: &DVector<f64>,
    metric: Metric,
    threshold: f64,
    precedence: &[Check],
) -> ConvergenceLabel {
    require_orthogonal(spec);
    let label = |kind, distance| ConvergenceLabel {
        kind,
        distance,
        metric,
        threshold,
    };
    let z = spec.project(y);
    let r = residual_vector(spec, y).norm();
    for check in precedence {
        match check {
            Check::Explicit => {
                let (best, dist) = spec
                    .points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, point_distance(spec, y, p, metric)))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                if dist <= threshold {
                    let kind = if spec.augmented[best] {
                        ConvergenceKind::AugmentedPoint(best)
                    } else {
                        ConvergenceKind::TrainingPoint(best)
                    };
                    return label(kind, dist);
                }
            }
            Check::Virtual => {
                let mut card = 0;
                let dz = z.iter().zip(&spec.norms).map(|(&zi, &n)| {
                    if zi > n / 2.0 {
                        card += 1;
                        zi - n
                    } else {
                        zi
                    }
                });
                let dz: Vec<f64> = dz.collect();
                let dist = metric.combine(dz.into_iter(), r);
                if card >= 2 && dist <= threshold {
                    return label(ConvergenceKind::VirtualPoint(card), dist);
                }
            }
            Check::Boundary => {
                let dist = distance_to_hyperbox_metric(spec, y, metric);
                if dist <= threshold {
                    return label(ConvergenceKind::Boundary, dist);
                }
            }
        }
    }
    label(ConvergenceKind::Other, distance_to_hyperbox_metric(spec, y, metric))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    /// Indexed like [`CATEGORIES`].
    pub counts: [usize; 5],
    pub fractions: [f64; 5],
    pub total: usize,
    pub metric: Metric,
    pub threshold: f64,
}

impl StatsReport {
    pub fn fraction(&self, category: &str) -> f64 {
        CATEGORIES
            .iter()
            .position(|c| *c == category)
            .map_or(0.0, |i| self.fractions[i])
    }
}

/// Counts per category. Metric and threshold are taken from the first label.
pub fn aggregate(labels: &[ConvergenceLabel]) -> Result<StatsReport> {
    let first = labels.first().ok_or(Error::EmptyInput)?;
    let mut counts = [0usize; 5];
    for l in labels {
        counts[l.kind.category()] += 1;
    }
    let total = labels.len();
    let fractions = counts.map(|c| c as f64 / total as f64);
    Ok(StatsReport {
        counts,
        fractions,
        total,
        metric: first.metric,
        threshold: first.threshold,
    })
}

/// Frame coordinates `(u_a·(y − base), u_b·(y − base), u_c·(y − base))`.
pub fn project3(spec: &DatasetSpec, y: &DVector<f64>, axes: [usize; 3]) -> Result<Vector3<f64>> {
    let m = spec.n_dirs();
    let [a, b, c] = axes;
    if a == b || b == c || a == c || axes.iter().any(|&i| i >= m) {
        return Err(Error::BadAxes { limit: m });
    }
    let w = y - &spec.base;
    Ok(Vector3::new(
        spec.unit(a).dot(&w),
        spec.unit(b).dot(&w),
        spec.unit(c).dot(&w),
    ))
}

/// Labels CSV with columns `traj_id,kind,detail,distance,metric,threshold`.
pub fn write_labels_csv<W: Write>(out: W, labels: &[ConvergenceLabel]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["traj_id", "kind", "detail", "distance", "metric", "threshold"])?;
    for (i, l) in labels.iter().enumerate() {
        w.write_record([
            i.to_string(),
            l.kind.name().to_string(),
            l.kind.detail(),
            l.distance.to_string(),
            l.metric.to_string(),
            l.threshold.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
