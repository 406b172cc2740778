//! Experiment configuration: flat `[section]` / `key = value` text.
//!
//! Unknown sections and keys are rejected so typos surface as config errors.
//! [`ExperimentConfig::to_ini`] renders the fully resolved config, which is what
//! output files echo for provenance.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::classify::{Check, Metric, DEFAULT_PRECEDENCE};
use crate::datasets::DatasetKind;
use crate::error::{Error, Result};

/// Raw `(section, key, value)` triples in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ini {
    pub entries: Vec<(String, String, String)>,
}

/// Parses `[section]` headers and `key = value` lines. `#` and `;` start comment lines.
/// Keys before the first header, or repeated within a section, are errors.
pub fn parse_ini(text: &str) -> Result<Ini> {
    let mut ini = Ini::default();
    let mut section: Option<String> = None;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let at = |msg: String| Error::Config(format!("line {}: {msg}", no + 1));
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| at(format!("unclosed section header {line:?}")))?;
            section = Some(name.trim().to_ascii_lowercase());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| at(format!("expected `key = value`, got {line:?}")))?;
        let sec = section.clone().ok_or_else(|| at("key outside of any section".into()))?;
        let key = key.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(at("empty key".into()));
        }
        if ini.entries.iter().any(|(s, k, _)| *s == sec && *k == key) {
            return Err(at(format!("duplicate key {key:?} in [{sec}]")));
        }
        ini.entries.push((sec, key, value.trim().to_string()));
    }
    Ok(ini)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowChoice {
    Score,
    Prob,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DenoiserSource {
    ClosedForm,
    /// Train nets as part of the command.
    Train,
    /// Load checkpoints written by the `train` command.
    Trained(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    AugmentedLagrangian,
    Penalized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Number of points including the base point.
    pub n: usize,
    pub d: usize,
    pub norm: f64,
    pub side: f64,
    pub augment: usize,
    pub seed: u64,
    pub n_values: Vec<usize>,
    pub sweep_seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub kind: FlowChoice,
    pub denoiser: DenoiserSource,
    /// Ball radius of the single score-flow denoiser; `None` means `√d σ` capped.
    pub rho: Option<f64>,
    pub gamma: f64,
    pub iters: usize,
    pub sigma: f64,
    pub t_final: f64,
    pub steps: usize,
    /// `ρ_t = α σ_t`; `None` means `α = √d`.
    pub alpha: Option<f64>,
    pub split: f64,
    /// Upper bound on ρ as a fraction of the smallest norm.
    pub rho_cap: f64,
    pub samples: usize,
    /// Std of score-flow starts; probability flow always starts from `N(0, T I)`.
    pub start_std: f64,
    pub seed: u64,
    pub fixed_point_iters: usize,
    pub max_cardinality: usize,
    pub grid: usize,
    pub normalize: bool,
    pub compare_starts: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifyConfig {
    pub metrics: Vec<Metric>,
    pub thresholds: Vec<f64>,
    pub precedence: Vec<Check>,
    pub axes: [usize; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub width: usize,
    pub m: usize,
    pub lr0: f64,
    pub inner: usize,
    pub eta: f64,
    pub outer: usize,
    pub mu0: f64,
    pub lambda: f64,
    pub lr: f64,
    pub iters: usize,
    pub seed: u64,
    /// `(N, M)` pairs overriding `m` for particular dataset sizes.
    pub m_override: Vec<(usize, usize)>,
}

impl TrainConfig {
    pub fn samples_for(&self, n: usize) -> usize {
        self.m_override
            .iter()
            .find(|(k, _)| *k == n)
            .map_or(self.m, |(_, m)| *m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub dump_trajectories: bool,
    /// Bar colors for training, virtual, augmented, boundary, other.
    pub colors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub flow: FlowConfig,
    pub classify: ClassifyConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig {
                kind: DatasetKind::Orthogonal,
                n: 31,
                d: 30,
                norm: 1.0,
                side: 1.0,
                augment: 0,
                seed: 0,
                n_values: vec![10, 15, 20, 25, 30],
                sweep_seeds: 5,
            },
            flow: FlowConfig {
                kind: FlowChoice::Score,
                denoiser: DenoiserSource::ClosedForm,
                rho: None,
                gamma: 5e-4,
                iters: 3000,
                sigma: 0.095,
                t_final: 100.0,
                steps: 150,
                alpha: None,
                split: 1.0,
                rho_cap: 0.45,
                samples: 500,
                start_std: 10.0,
                seed: 0,
                fixed_point_iters: 10,
                max_cardinality: 4,
                grid: 100,
                normalize: true,
                compare_starts: 8,
            },
            classify: ClassifyConfig {
                metrics: vec![Metric::Linf],
                thresholds: vec![0.2],
                precedence: DEFAULT_PRECEDENCE.to_vec(),
                axes: [0, 1, 2],
            },
            train: TrainConfig {
                mode: TrainMode::AugmentedLagrangian,
                width: 64,
                m: 50,
                lr0: 1e-4,
                inner: 10_000,
                eta: 3.0,
                outer: 7,
                mu0: 1000.0,
                lambda: 0.25,
                lr: 1e-3,
                iters: 20_000,
                seed: 0,
                m_override: vec![(10, 2000)],
            },
            output: OutputConfig {
                dir: PathBuf::from("out"),
                dump_trajectories: false,
                colors: ["#d62728", "#2ca02c", "#9467bd", "#1f77b4", "#7f7f7f"]
                    .map(String::from)
                    .to_vec(),
            },
        }
    }
}

fn bad(sec: &str, key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("[{sec}] {key} = {value:?}: {why}"))
}

fn num<T: FromStr>(sec: &str, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| bad(sec, key, v, e))
}

fn positive(sec: &str, key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(sec, key, v)?;
    if !(x > 0.0 && x.is_finite()) {
        return Err(bad(sec, key, v, "must be positive"));
    }
    Ok(x)
}

fn list<T: FromStr>(sec: &str, key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|s| num(sec, key, s.trim())).collect()
}

fn boolean(sec: &str, key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(sec, key, v, "expected true or false")),
    }
}

fn optional(v: &str) -> bool {
    v.eq_ignore_ascii_case("auto")
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_ini(&parse_ini(text)?)
    }

    pub fn from_ini(ini: &Ini) -> Result<Self> {
        let mut c = Self::default();
        for (sec, key, v) in &ini.entries {
            let (s, k, v) = (sec.as_str(), key.as_str(), v.as_str());
            match (s, k) {
                ("dataset", "kind") => c.dataset.kind = DatasetKind::from_name(v).map_err(|e| bad(s, k, v, e))?,
                ("dataset", "n") => c.dataset.n = num(s, k, v)?,
                ("dataset", "d") => c.dataset.d = num(s, k, v)?,
                ("dataset", "norm") => c.dataset.norm = positive(s, k, v)?,
                ("dataset", "side") => c.dataset.side = positive(s, k, v)?,
                ("dataset", "augment") => c.dataset.augment = num(s, k, v)?,
                ("dataset", "seed") => c.dataset.seed = num(s, k, v)?,
                ("dataset", "n_values") => c.dataset.n_values = list(s, k, v)?,
                ("dataset", "sweep_seeds") => c.dataset.sweep_seeds = num(s, k, v)?,
                ("flow", "kind") => {
                    c.flow.kind = match v.to_ascii_lowercase().as_str() {
                        "score" => FlowChoice::Score,
                        "prob" | "probability" => FlowChoice::Prob,
                        _ => return Err(bad(s, k, v, "expected score or prob")),
                    }
                }
                ("flow", "denoiser") => {
                    c.flow.denoiser = match v {
                        "closed-form" | "closed_form" => DenoiserSource::ClosedForm,
                        "train" => DenoiserSource::Train,
                        _ => match v.strip_prefix("trained:") {
                            Some(dir) if !dir.trim().is_empty() => DenoiserSource::Trained(PathBuf::from(dir.trim())),
                            _ => return Err(bad(s, k, v, "expected closed-form, train, or trained:<dir>")),
                        },
                    }
                }
                ("flow", "rho") => c.flow.rho = if optional(v) { None } else { Some(positive(s, k, v)?) },
                ("flow", "gamma") => c.flow.gamma = positive(s, k, v)?,
                ("flow", "iters") => c.flow.iters = num(s, k, v)?,
                ("flow", "sigma") => c.flow.sigma = positive(s, k, v)?,
                ("flow", "t") => c.flow.t_final = positive(s, k, v)?,
                ("flow", "steps") => c.flow.steps = num(s, k, v)?,
                ("flow", "alpha") => c.flow.alpha = if optional(v) { None } else { Some(positive(s, k, v)?) },
                ("flow", "split") => c.flow.split = positive(s, k, v)?,
                ("flow", "rho_cap") => {
                    let x = positive(s, k, v)?;
                    if x >= 0.5 {
                        return Err(bad(s, k, v, "must be below 0.5"));
                    }
                    c.flow.rho_cap = x;
                }
                ("flow", "samples") => c.flow.samples = num(s, k, v)?,
                ("flow", "start_std") => c.flow.start_std = positive(s, k, v)?,
                ("flow", "seed") => c.flow.seed = num(s, k, v)?,
                ("flow", "fixed_point_iters") => c.flow.fixed_point_iters = num(s, k, v)?,
                ("flow", "max_cardinality") => c.flow.max_cardinality = num(s, k, v)?,
                ("flow", "grid") => c.flow.grid = num(s, k, v)?,
                ("flow", "normalize") => c.flow.normalize = boolean(s, k, v)?,
                ("flow", "compare_starts") => c.flow.compare_starts = num(s, k, v)?,
                ("classify", "metrics") => c.classify.metrics = list(s, k, v)?,
                ("classify", "thresholds") => c.classify.thresholds = list(s, k, v)?,
                ("classify", "precedence") => c.classify.precedence = list(s, k, v)?,
                ("classify", "axes") => {
                    let axes: Vec<usize> = list(s, k, v)?;
                    c.classify.axes = axes.try_into().map_err(|_| bad(s, k, v, "expected three indices"))?;
                }
                ("train", "mode") => {
                    c.train.mode = match v.to_ascii_lowercase().as_str() {
                        "al" | "augmented-lagrangian" => TrainMode::AugmentedLagrangian,
                        "penalized" | "weight-decay" => TrainMode::Penalized,
                        _ => return Err(bad(s, k, v, "expected al or penalized")),
                    }
                }
                ("train", "width") => c.train.width = num(s, k, v)?,
                ("train", "m") => c.train.m = num(s, k, v)?,
                ("train", "lr0") => c.train.lr0 = positive(s, k, v)?,
                ("train", "inner") => c.train.inner = num(s, k, v)?,
                ("train", "eta") => c.train.eta = positive(s, k, v)?,
                ("train", "outer") => c.train.outer = num(s, k, v)?,
                ("train", "mu0") => c.train.mu0 = positive(s, k, v)?,
                ("train", "lambda") => {
                    c.train.lambda = num(s, k, v)?;
                    if !(c.train.lambda >= 0.0) {
                        return Err(bad(s, k, v, "must be non-negative"));
                    }
                }
                ("train", "lr") => c.train.lr = positive(s, k, v)?,
                ("train", "iters") => c.train.iters = num(s, k, v)?,
                ("train", "seed") => c.train.seed = num(s, k, v)?,
                ("train", "m_override") => {
                    c.train.m_override = if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(',')
                            .map(|pair| {
                                let (n, m) = pair.split_once(':').ok_or_else(|| bad(s, k, v, "expected N:M pairs"))?;
                                Ok((num(s, k, n.trim())?, num(s, k, m.trim())?))
                            })
                            .collect::<Result<_>>()?
                    }
                }
                ("output", "dir") => c.output.dir = PathBuf::from(v),
                ("output", "dump_trajectories") => c.output.dump_trajectories = boolean(s, k, v)?,
                ("output", "colors") => {
                    let colors: Vec<String> = v.split(',').map(|x| x.trim().to_string()).collect();
                    if colors.len() != 5 || colors.iter().any(|x| parse_color(x).is_none()) {
                        return Err(bad(s, k, v, "expected five #rrggbb colors"));
                    }
                    c.output.colors = colors;
                }
                ("dataset" | "flow" | "classify" | "train" | "output", _) => {
                    return Err(Error::Config(format!("unknown key {k:?} in [{s}]")))
                }
                _ => return Err(Error::Config(format!("unknown section [{s}]"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.dataset.n < 2 || self.dataset.d < 1 {
            return err("[dataset] needs n >= 2 and d >= 1");
        }
        if self.flow.steps < 2 {
            return err("[flow] steps must be at least 2");
        }
        if self.flow.samples == 0 {
            return err("[flow] samples must be positive");
        }
        if self.classify.metrics.is_empty() || self.classify.thresholds.is_empty() {
            return err("[classify] needs at least one metric and one threshold");
        }
        if self.classify.thresholds.iter().any(|t| !(*t > 0.0)) {
            return err("[classify] thresholds must be positive");
        }
        if self.train.width == 0 || self.train.m == 0 {
            return err("[train] width and m must be positive");
        }
        if self.train.eta <= 1.0 {
            return err("[train] eta must exceed 1");
        }
        Ok(())
    }

    /// Canonical text of every resolved setting; parsing it yields the same config.
    pub fn to_ini(&self) -> String {
        let (ds, fl, cl, tr, out) = (&self.dataset, &self.flow, &self.classify, &self.train, &self.output);
        let auto = |x: Option<f64>| x.map_or("auto".to_string(), |v| v.to_string());
        let mut s = String::new();
        let mut put = |line: String| {
            s.push_str(&line);
            s.push('\n');
        };
        put("[dataset]".into());
        put(format!("kind = {}", ds.kind));
        put(format!("n = {}", ds.n));
        put(format!("d = {}", ds.d));
        put(format!("norm = {}", ds.norm));
        put(format!("side = {}", ds.side));
        put(format!("augment = {}", ds.augment));
        put(format!("seed = {}", ds.seed));
        put(format!("n_values = {}", join(&ds.n_values)));
        put(format!("sweep_seeds = {}", ds.sweep_seeds));
        put("[flow]".into());
        put(format!(
            "kind = {}",
            if fl.kind == FlowChoice::Score { "score" } else { "prob" }
        ));
        put(format!(
            "denoiser = {}",
            match &fl.denoiser {
                DenoiserSource::ClosedForm => "closed-form".to_string(),
                DenoiserSource::Train => "train".to_string(),
                DenoiserSource::Trained(p) => format!("trained:{}", p.display()),
            }
        ));
        put(format!("rho = {}", auto(fl.rho)));
        put(format!("gamma = {}", fl.gamma));
        put(format!("iters = {}", fl.iters));
        put(format!("sigma = {}", fl.sigma));
        put(format!("t = {}", fl.t_final));
        put(format!("steps = {}", fl.steps));
        put(format!("alpha = {}", auto(fl.alpha)));
        put(format!("split = {}", fl.split));
        put(format!("rho_cap = {}", fl.rho_cap));
        put(format!("samples = {}", fl.samples));
        put(format!("start_std = {}", fl.start_std));
        put(format!("seed = {}", fl.seed));
        put(format!("fixed_point_iters = {}", fl.fixed_point_iters));
        put(format!("max_cardinality = {}", fl.max_cardinality));
        put(format!("grid = {}", fl.grid));
        put(format!("normalize = {}", fl.normalize));
        put(format!("compare_starts = {}", fl.compare_starts));
        put("[classify]".into());
        put(format!("metrics = {}", join(&cl.metrics)));
        put(format!("thresholds = {}", join(&cl.thresholds)));
        let prec: Vec<&str> = cl
            .precedence
            .iter()
            .map(|c| match c {
                Check::Explicit => "training",
                Check::Virtual => "virtual",
                Check::Boundary => "boundary",
            })
            .collect();
        put(format!("precedence = {}", prec.join(", ")));
        put(format!("axes = {}", join(&cl.axes)));
        put("[train]".into());
        put(format!(
            "mode = {}",
            if tr.mode == TrainMode::AugmentedLagrangian {
                "al"
            } else {
                "penalized"
            }
        ));
        put(format!("width = {}", tr.width));
        put(format!("m = {}", tr.m));
        put(format!("lr0 = {}", tr.lr0));
        put(format!("inner = {}", tr.inner));
        put(format!("eta = {}", tr.eta));
        put(format!("outer = {}", tr.outer));
        put(format!("mu0 = {}", tr.mu0));
        put(format!("lambda = {}", tr.lambda));
        put(format!("lr = {}", tr.lr));
        put(format!("iters = {}", tr.iters));
        put(format!("seed = {}", tr.seed));
        let ov: Vec<String> = tr.m_override.iter().map(|(n, m)| format!("{n}:{m}")).collect();
        put(format!("m_override = {}", ov.join(", ")));
        put("[output]".into());
        put(format!("dir = {}", out.dir.display()));
        put(format!("dump_trajectories = {}", out.dump_trajectories));
        put(format!("colors = {}", out.colors.join(", ")));
        s
    }

    /// Provenance block: one `# ` comment line per setting, preceded by the tool version and command.
    pub fn provenance(&self, command: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# mnflow {} {command}", env!("CARGO_PKG_VERSION"));
        for line in self.to_ini().lines() {
            let _ = writeln!(s, "# {line}");
        }
        s
    }
}

/// `#rrggbb` to RGB.
pub fn parse_color(s: &str) -> Option<(u8, u8, u8)> {
    let hex = s.strip_prefix('#')?;
    if hex.len() != 6 {
        return None;
    }
    let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).ok();
    Some((byte(0)?, byte(2)?, byte(4)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let text = "# comment\n[dataset]\nn = 5 \n; other\nd=4\n\n[flow]\nkind = prob\nalpha = 0.5\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!((c.dataset.n, c.dataset.d), (5, 4));
        assert_eq!(c.flow.kind, FlowChoice::Prob);
        assert_eq!(c.flow.alpha, Some(0.5));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "n = 5\n",
            "[dataset]\nn 5\n",
            "[dataset]\nn = five\n",
            "[dataset]\nsize = 5\n",
            "[extra]\nn = 5\n",
            "[dataset]\nn = 5\nn = 6\n",
            "[flow]\ngamma = -1\n",
            "[classify]\nmetrics = l3\n",
            "[dataset\nn = 5\n",
        ] {
            assert!(
                matches!(ExperimentConfig::parse(text), Err(Error::Config(_))),
                "{text:?}"
            );
        }
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = "[flow]\ndenoiser = trained:ckpt\nrho = 0.1\n[classify]\nmetrics = linf, l2\nthresholds = 0.15, 0.2\nprecedence = virtual, training, boundary\n[train]\nm_override = 10:2000, 14:300\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_ini()).unwrap(), c);
        assert_eq!(
            ExperimentConfig::parse(&ExperimentConfig::default().to_ini()).unwrap(),
            ExperimentConfig::default()
        );
        assert_eq!(c.train.samples_for(14), 300);
        assert_eq!(c.train.samples_for(6), 50);
    }

    #[test]
    fn provenance_is_commented() {
        let p = ExperimentConfig::default().provenance("sample");
        assert!(p.lines().all(|l| l.starts_with("# ")));
        assert!(p.contains("# [flow]\n"));
    }
}
