//! Training-set geometries with closed-form minimum-norm denoisers.
//!
//! Three shapes are supported: a base point `x_0 = 0` with mutually orthogonal
//! directions (the implicit manifold is the hyperbox spanned by them), a base
//! point whose directions pairwise form obtuse angles, and an equilateral
//! triangle referenced to its centroid.
//!
//! Direction indices in code are 0-based: direction `i` belongs to training
//! point `x_{i+1}` for the orthogonal and obtuse kinds and to `x_i` for the
//! triangle. Subsets passed to [`virtual_point`] use 1-based point indices.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::rng;

const GEOM_TOL: f64 = 1e-10;
const OBTUSE_ATTEMPTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Orthogonal,
    ObtuseSimplex,
    EquilateralTriangle,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Orthogonal => "orthogonal",
            DatasetKind::ObtuseSimplex => "obtuse",
            DatasetKind::EquilateralTriangle => "triangle",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "orthogonal" => Ok(DatasetKind::Orthogonal),
            "obtuse" | "obtuse-simplex" | "obtusesimplex" => Ok(DatasetKind::ObtuseSimplex),
            "triangle" | "equilateral" | "equilateral-triangle" => Ok(DatasetKind::EquilateralTriangle),
            other => Err(Error::Parse(format!("unknown dataset kind `{other}`"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Norms of the non-base training points.
#[derive(Clone, Debug)]
pub enum Norms {
    Uniform(f64),
    Each(Vec<f64>),
}

impl Norms {
    fn expand(&self, m: usize) -> Result<Vec<f64>> {
        let v = match self {
            Norms::Uniform(x) => vec![*x; m],
            Norms::Each(v) if v.len() == m => v.clone(),
            Norms::Each(v) => return Err(Error::Precondition(format!("expected {m} norms, got {}", v.len()))),
        };
        for (i, x) in v.iter().enumerate() {
            if !(*x > 0.0) || !x.is_finite() {
                return Err(Error::ZeroNorm { index: i + 1 });
            }
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Clean training points; augmented points (if any) follow the frame points.
    pub points: Vec<DVector<f64>>,
    /// `Some(0)` for the orthogonal and obtuse kinds; the triangle's base is its centroid.
    pub base_index: Option<usize>,
    pub base: DVector<f64>,
    /// Unit directions as the columns of a d × m matrix.
    pub units: DMatrix<f64>,
    pub norms: Vec<f64>,
    pub augmented: Vec<bool>,
    pub seed: u64,
}

/// Coordinates of a point in a dataset's frame.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperboxCoords {
    /// `u_n · (y − base)` for every direction.
    pub along: DVector<f64>,
    /// Norm of the component orthogonal to the span of the directions (orthogonal kind only; 0 otherwise).
    pub residual: f64,
}

impl DatasetSpec {
    /// Rebuilds a spec from raw points, deriving base, directions and norms.
    /// The last `augmented` points are flagged as augmentation.
    pub fn from_points(kind: DatasetKind, points: Vec<DVector<f64>>, augmented: usize, seed: u64) -> Result<Self> {
        if points.is_empty() || augmented >= points.len() {
            return Err(Error::InvalidSpec("no frame points".into()));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::InvalidSpec("points have mixed dimensions".into()));
        }
        let n_frame = points.len() - augmented;
        let (base, base_index, frame): (DVector<f64>, Option<usize>, Vec<DVector<f64>>) = match kind {
            DatasetKind::EquilateralTriangle => {
                if n_frame != 3 {
                    return Err(Error::InvalidSpec("a triangle has 3 points".into()));
                }
                let c = (&points[0] + &points[1] + &points[2]) / 3.0;
                (c, None, points[..3].to_vec())
            }
            _ => (points[0].clone(), Some(0), points[1..n_frame].to_vec()),
        };
        let m = frame.len();
        let mut units = DMatrix::zeros(d, m);
        let mut norms = Vec::with_capacity(m);
        for (i, p) in frame.iter().enumerate() {
            let v = p - &base;
            let nrm = v.norm();
            if !(nrm > 0.0) {
                return Err(Error::ZeroNorm {
                    index: i + base_index.map_or(0, |_| 1),
                });
            }
            units.set_column(i, &(v / nrm));
            norms.push(nrm);
        }
        let mut flags = vec![false; n_frame];
        flags.extend(std::iter::repeat_n(true, augmented));
        let spec = DatasetSpec {
            kind,
            points,
            base_index,
            base,
            units,
            norms,
            augmented: flags,
            seed,
        };
        validate(&spec)?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    /// Number of training points N, augmented points included.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of frame directions (N − 1 before augmentation; 3 for the triangle).
    pub fn n_dirs(&self) -> usize {
        self.norms.len()
    }

    pub fn n_augmented(&self) -> usize {
        self.augmented.iter().filter(|a| **a).count()
    }

    pub fn unit(&self, i: usize) -> DVector<f64> {
        self.units.column(i).into_owned()
    }

    pub fn min_norm(&self) -> f64 {
        self.norms.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `u_n · (y − base)` for all directions.
    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        self.units.tr_mul(&(y - &self.base))
    }
}

/// Orthonormal columns obtained from the QR factorization of a seeded Gaussian d × m matrix.
fn gaussian_frame(rng: &mut rng::Rng, d: usize, m: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, m, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

pub fn make_orthogonal(n: usize, d: usize, norms: &Norms, seed: u64) -> Result<DatasetSpec> {
    if n < 2 {
        return Err(Error::Precondition("need N >= 2".into()));
    }
    if n > d + 1 {
        return Err(Error::TooManyPoints { n, limit: d + 1 });
    }
    let m = n - 1;
    let norms = norms.expand(m)?;
    let mut r = rng::seeded(seed);
    let units = gaussian_frame(&mut r, d, m);
    Ok(assemble(DatasetKind::Orthogonal, units, norms, seed))
}

fn assemble(kind: DatasetKind, units: DMatrix<f64>, norms: Vec<f64>, seed: u64) -> DatasetSpec {
    let d = units.nrows();
    let base = DVector::zeros(d);
    let mut points = vec![base.clone()];
    for (i, nrm) in norms.iter().enumerate() {
        points.push(units.column(i) * *nrm);
    }
    let augmented = vec![false; points.len()];
    DatasetSpec {
        kind,
        points,
        base_index: Some(0),
        base,
        units,
        norms,
        augmented,
        seed,
    }
}

/// Unit-norm obtuse simplex: an orthonormal frame pulled toward the negative of
/// its mean direction, plus a small jitter, retried until every pair is obtuse.
pub fn make_obtuse_simplex(n: usize, d: usize, seed: u64) -> Result<DatasetSpec> {
    if n > d + 1 {
        return Err(Error::TooManyPoints { n, limit: d + 1 });
    }
    if n < 3 {
        return Err(Error::Precondition("an obtuse simplex needs N >= 3".into()));
    }
    let m = n - 1;
    for attempt in 0..OBTUSE_ATTEMPTS {
        let mut r = rng::task_rng(seed, attempt as u64);
        let q = gaussian_frame(&mut r, d, m);
        let c = r.sample(Uniform::new(0.2, 0.6).expect("valid range")) / m as f64;
        let jitter = 0.05 * c;
        let sum: DVector<f64> = q.column_sum();
        let mut units = DMatrix::zeros(d, m);
        for i in 0..m {
            let mut v = q.column(i) - &sum * c;
            for x in v.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut r);
                *x += jitter * e;
            }
            units.set_column(i, &v.normalize());
        }
        let gram = units.tr_mul(&units);
        let obtuse = (0..m).all(|i| (0..m).all(|j| i == j || gram[(i, j)] < 0.0));
        let independent = gram.clone().symmetric_eigenvalues().min() > 1e-8;
        if obtuse && independent {
            return Ok(assemble(DatasetKind::ObtuseSimplex, units, vec![1.0; m], seed));
        }
    }
    Err(Error::ConstructionFailed {
        attempts: OBTUSE_ATTEMPTS,
    })
}

/// Equilateral triangle with centroid at the origin, embedded in the first two coordinates.
pub fn make_equilateral_triangle(d: usize, side: f64) -> Result<DatasetSpec> {
    if d < 2 || !(side > 0.0) {
        return Err(Error::Precondition("triangle needs d >= 2 and side > 0".into()));
    }
    let r = side / 3f64.sqrt();
    let h = 3f64.sqrt() / 2.0;
    let dirs = [(0.0, 1.0), (h, -0.5), (-h, -0.5)];
    let mut units = DMatrix::zeros(d, 3);
    for (i, (a, b)) in dirs.iter().enumerate() {
        units[(0, i)] = *a;
        units[(1, i)] = *b;
    }
    let points = (0..3).map(|i| units.column(i) * r).collect();
    Ok(DatasetSpec {
        kind: DatasetKind::EquilateralTriangle,
        points,
        base_index: None,
        base: DVector::zeros(d),
        units,
        norms: vec![r; 3],
        augmented: vec![false; 3],
        seed: 0,
    })
}

/// Appends `count` points drawn on faces of the hyperbox: frame coordinates from
/// Unif[0.3, 0.7] (as fractions of each norm), then one uniformly chosen axis
/// snapped to 0 or to its full length.
pub fn augment_boundary_points(spec: &DatasetSpec, count: usize, seed: u64) -> Result<DatasetSpec> {
    if spec.kind != DatasetKind::Orthogonal {
        return Err(Error::Precondition("augmentation needs an orthogonal dataset".into()));
    }
    let mut out = spec.clone();
    let m = spec.n_dirs();
    let mut r = rng::seeded(seed);
    let frac = Uniform::new_inclusive(0.3, 0.7).expect("valid range");
    for _ in 0..count {
        let mut c: Vec<f64> = (0..m).map(|_| r.sample(frac)).collect();
        let axis = r.random_range(0..m);
        c[axis] = if r.random_bool(0.5) { 1.0 } else { 0.0 };
        let mut p = spec.base.clone();
        for (i, ci) in c.iter().enumerate() {
            p += spec.units.column(i) * (ci * spec.norms[i]);
        }
        out.points.push(p);
        out.augmented.push(true);
    }
    Ok(out)
}

/// Sum of the training points with the given 1-based indices; the empty set gives `x_0`.
pub fn virtual_point(spec: &DatasetSpec, subset: &[usize]) -> Result<DVector<f64>> {
    if spec.kind == DatasetKind::EquilateralTriangle {
        return Err(Error::Precondition("virtual points need a base point".into()));
    }
    let m = spec.n_dirs();
    let mut idx = subset.to_vec();
    idx.sort_unstable();
    idx.dedup();
    let mut p = spec.base.clone();
    for &k in &idx {
        if k == 0 || k > m {
            return Err(Error::IndexOutOfRange { index: k, max: m });
        }
        p += spec.units.column(k - 1) * spec.norms[k - 1];
    }
    Ok(p)
}

pub fn coords(spec: &DatasetSpec, y: &DVector<f64>) -> HyperboxCoords {
    let along = spec.project(y);
    let residual = match spec.kind {
        DatasetKind::Orthogonal => residual_vector(spec, y).norm(),
        _ => 0.0,
    };
    HyperboxCoords { along, residual }
}

/// Component of `y − base` orthogonal to the frame span (orthogonal kind).
pub fn residual_vector(spec: &DatasetSpec, y: &DVector<f64>) -> DVector<f64> {
    let v = y - &spec.base;
    let along = spec.units.tr_mul(&v);
    v - &spec.units * along
}

/// `base + Σ along_n u_n`; the residual direction is not recoverable from its norm.
pub fn reconstruct(spec: &DatasetSpec, c: &HyperboxCoords) -> DVector<f64> {
    &spec.base + &spec.units * &c.along
}

/// Shifts every point (and the base) by `shift`.
pub fn translate(spec: &DatasetSpec, shift: &DVector<f64>) -> Result<DatasetSpec> {
    if shift.len() != spec.dim() {
        return Err(Error::Precondition("shift dimension mismatch".into()));
    }
    let mut out = spec.clone();
    for p in out.points.iter_mut() {
        *p += shift;
    }
    out.base += shift;
    Ok(out)
}

pub fn validate(spec: &DatasetSpec) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidSpec(msg));
    let d = spec.dim();
    let m = spec.n_dirs();
    if spec
        .points
        .iter()
        .any(|p| p.len() != d || p.iter().any(|x| !x.is_finite()))
    {
        return bad("points must be finite and share one dimension".into());
    }
    if spec.units.nrows() != d || spec.units.ncols() != m {
        return bad("direction matrix has the wrong shape".into());
    }
    if spec.augmented.len() != spec.points.len() {
        return bad("augmentation flags do not match the points".into());
    }
    if let Some(i) = spec.norms.iter().position(|n| !(*n > 0.0)) {
        return Err(Error::ZeroNorm { index: i + 1 });
    }
    let n_frame = spec.augmented.iter().filter(|a| !**a).count();
    if spec.augmented[..n_frame].iter().any(|a| *a) {
        return bad("augmented points must follow the frame points".into());
    }
    let scale = 1.0 + spec.norms.iter().copied().fold(0.0, f64::max);
    for i in 0..m {
        if (spec.units.column(i).norm() - 1.0).abs() > GEOM_TOL {
            return bad(format!("direction {i} is not unit length"));
        }
    }
    let gram = spec.units.tr_mul(&spec.units);
    match spec.kind {
        DatasetKind::Orthogonal | DatasetKind::ObtuseSimplex => {
            if spec.base_index != Some(0) || spec.points[0] != spec.base {
                return bad("the base must be the first point".into());
            }
            if n_frame != m + 1 {
                return bad("frame point count must be directions + 1".into());
            }
            if m > d {
                return Err(Error::TooManyPoints { n: m + 1, limit: d + 1 });
            }
            for i in 0..m {
                let expect = &spec.base + spec.units.column(i) * spec.norms[i];
                if (&spec.points[i + 1] - expect).amax() > GEOM_TOL * scale {
                    return bad(format!("point {} does not match its direction", i + 1));
                }
            }
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    let g = gram[(i, j)];
                    let ok = match spec.kind {
                        DatasetKind::Orthogonal => g.abs() < GEOM_TOL,
                        _ => g < 0.0,
                    };
                    if !ok {
                        return bad(format!("directions {i},{j} have inner product {g:e}"));
                    }
                }
            }
            if spec.kind == DatasetKind::ObtuseSimplex && spec.n_augmented() > 0 {
                return bad("augmentation applies to orthogonal data only".into());
            }
            for (p, _) in spec.points.iter().zip(&spec.augmented).filter(|(_, a)| **a) {
                if residual_vector(spec, p).norm() > GEOM_TOL * scale {
                    return bad("augmented point leaves the frame span".into());
                }
            }
        }
        DatasetKind::EquilateralTriangle => {
            if n_frame != 3 || m != 3 || spec.n_augmented() > 0 {
                return bad("a triangle has exactly 3 points".into());
            }
            let c = (&spec.points[0] + &spec.points[1] + &spec.points[2]) / 3.0;
            if (&c - &spec.base).amax() > GEOM_TOL * scale {
                return bad("triangle base must be the centroid".into());
            }
            let e = [
                (&spec.points[0] - &spec.points[1]).norm(),
                (&spec.points[1] - &spec.points[2]).norm(),
                (&spec.points[2] - &spec.points[0]).norm(),
            ];
            if (e[0] - e[1]).abs() > GEOM_TOL * scale || (e[1] - e[2]).abs() > GEOM_TOL * scale {
                return bad("triangle sides differ".into());
            }
            if spec.units.column_sum().amax() > GEOM_TOL {
                return bad("triangle directions do not sum to zero".into());
            }
            for i in 0..3 {
                let expect = &spec.base + spec.units.column(i) * spec.norms[i];
                if (&spec.points[i] - expect).amax() > GEOM_TOL * scale {
                    return bad(format!("point {i} does not match its direction"));
                }
            }
        }
    }
    Ok(())
}

/// Plain-text dataset: a `# kind=… N=… d=… seed=… augmented=…` header, then one point per row.
pub fn write_spec<W: Write>(spec: &DatasetSpec, mut w: W) -> Result<()> {
    writeln!(
        w,
        "# kind={} N={} d={} seed={} augmented={}",
        spec.kind,
        spec.len(),
        spec.dim(),
        spec.seed,
        spec.n_augmented()
    )?;
    for p in &spec.points {
        let row: Vec<String> = p.iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_spec<R: BufRead>(r: R) -> Result<DatasetSpec> {
    let mut lines = r.lines();
    // Leading comment lines (provenance) are skipped until the `# kind=` header.
    let header = loop {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse("missing `# kind=` header".into()))??;
        match line.strip_prefix('#') {
            Some(rest) if rest.trim_start().starts_with("kind=") => break rest.to_string(),
            Some(_) => continue,
            None if line.trim().is_empty() => continue,
            None => return Err(Error::Parse("missing `# kind=` header".into())),
        }
    };
    let mut kind = None;
    let (mut n, mut d, mut seed, mut augmented) = (None, None, 0u64, 0usize);
    for tok in header.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header token `{tok}`")))?;
        let num = |v: &str| v.parse::<usize>().map_err(|e| Error::Parse(format!("{k}: {e}")));
        match k {
            "kind" => kind = Some(DatasetKind::from_name(v)?),
            "N" => n = Some(num(v)?),
            "d" => d = Some(num(v)?),
            "seed" => seed = v.parse().map_err(|e| Error::Parse(format!("seed: {e}")))?,
            "augmented" => augmented = num(v)?,
            _ => {}
        }
    }
    let (kind, n, d) = match (kind, n, d) {
        (Some(k), Some(n), Some(d)) => (k, n, d),
        _ => return Err(Error::Parse("header needs kind, N and d".into())),
    };
    let mut points = Vec::with_capacity(n);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| Error::Parse(format!("row {}: {e}", points.len())))?;
        if row.len() != d {
            return Err(Error::Parse(format!(
                "row {} has {} values, want {d}",
                points.len(),
                row.len()
            )));
        }
        points.push(DVector::from_vec(row));
    }
    if points.len() != n {
        return Err(Error::Parse(format!("expected {n} rows, found {}", points.len())));
    }
    DatasetSpec::from_points(kind, points, augmented, seed)
}
