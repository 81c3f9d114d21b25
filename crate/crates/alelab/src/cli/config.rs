//! Experiment configuration: flat `key = value` text with dotted section keys.
//!
//! ```text
//! # comment
//! grid.r_max = 400
//! norms.r_list = 4, inf
//! fit.windows = 5:200, 10:200
//! ```
//!
//! Blank lines and `#` comments are ignored; every key may appear at most once and unknown
//! keys are rejected. Values missing from the file keep the defaults of the experiment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::MIN_NODES;
use crate::operators::DtPolicy;

use super::Experiment;

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub r_max: f64,
    pub n: usize,
    pub stretch: f64,
    pub ghost: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundKind {
    Eh,
    Flat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundConfig {
    pub kind: BackgroundKind,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Bump,
    Kernel,
    Conformal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConfig {
    pub profile: Profile,
    /// `‖k_0‖_{L²}`.
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    /// Algebraic decay `r^{-s}` of the profile; `0` selects a Gaussian.
    pub tail_exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Constant step `dt0`.
    Fixed,
    /// `dt = clamp(dt_rel·t, dt0, dt_max)`.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub dt0: f64,
    pub dt_max: f64,
    pub dt_rel: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub snapshot_times: Vec<f64>,
}

impl FlowConfig {
    pub fn policy(&self) -> DtPolicy {
        match self.scheme {
            Scheme::Fixed => DtPolicy::fixed(self.dt0),
            Scheme::Adaptive => DtPolicy { dt_min: self.dt0, dt_max: self.dt_max, rel: self.dt_rel },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormsConfig {
    pub p_list: Vec<f64>,
    pub r_list: Vec<f64>,
    pub k_orders: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub windows: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub background: BackgroundConfig,
    pub perturbation: PerturbationConfig,
    pub flow: FlowConfig,
    pub norms: NormsConfig,
    pub fit: FitConfig,
    pub seed: u64,
}

pub const KEYS: [&str; 22] = [
    "background.eps",
    "background.kind",
    "fit.windows",
    "flow.dt0",
    "flow.dt_max",
    "flow.dt_rel",
    "flow.scheme",
    "flow.snapshot_times",
    "flow.t_end",
    "grid.ghost",
    "grid.n",
    "grid.r_max",
    "grid.stretch",
    "norms.k_orders",
    "norms.p_list",
    "norms.r_list",
    "perturbation.amplitude",
    "perturbation.center",
    "perturbation.profile",
    "perturbation.tail_exponent",
    "perturbation.width",
    "seed",
];

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: {what}"))
}

fn float(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| bad(key, v, "expected a number"))
}

fn uint<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| bad(key, v, "expected a nonnegative integer"))
}

fn list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| item(key, s.trim())).collect()
}

fn window(key: &str, v: &str) -> Result<[f64; 2]> {
    let (a, b) = v.split_once(':').ok_or_else(|| bad(key, v, "expected lo:hi"))?;
    Ok([float(key, a.trim())?, float(key, b.trim())?])
}

fn join<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Defaults of each experiment: the settings its acceptance criteria are stated for.
    pub fn defaults(exp: Experiment) -> Self {
        let mut c = ExperimentConfig {
            grid: GridConfig { r_max: 400.0, n: 1500, stretch: 1.006, ghost: 2 },
            background: BackgroundConfig { kind: BackgroundKind::Eh, eps: 1.0 },
            perturbation: PerturbationConfig {
                profile: Profile::Bump,
                amplitude: 0.01,
                center: 0.0,
                width: 3.0,
                tail_exponent: 2.1,
            },
            flow: FlowConfig {
                dt0: 0.01,
                dt_max: 2.0,
                dt_rel: 0.02,
                t_end: 200.0,
                scheme: Scheme::Adaptive,
                snapshot_times: vec![1.0, 50.0, 100.0, 200.0],
            },
            norms: NormsConfig { p_list: vec![2.0], r_list: vec![4.0, f64::INFINITY], k_orders: vec![0] },
            fit: FitConfig { windows: vec![[5.0, 200.0]] },
            seed: 7,
        };
        match exp {
            Experiment::Rates => {
                c.fit.windows = vec![[1e2, 1e5]];
            }
            Experiment::Heat => {
                c.background.kind = BackgroundKind::Flat;
                c.perturbation.amplitude = 1.0;
                c.perturbation.width = 1.0;
                c.flow.t_end = 100.0;
                c.flow.dt_max = 1.0;
                c.flow.snapshot_times = Vec::new();
                c.fit.windows = vec![[1.0, 100.0]];
            }
            Experiment::Kernel => {
                c.grid = GridConfig { r_max: 400.0, n: 4000, stretch: 1.002, ghost: 2 };
            }
            Experiment::Flow => {}
            Experiment::Picard => {
                c.grid = GridConfig { r_max: 40.0, n: 1000, stretch: 1.004, ghost: 2 };
                c.perturbation.amplitude = 0.1;
                c.perturbation.center = 3.0;
                c.perturbation.width = 1.0;
                c.perturbation.tail_exponent = 0.0;
                c.flow.scheme = Scheme::Fixed;
                c.flow.t_end = 10.0;
                c.flow.snapshot_times = Vec::new();
                c.fit.windows = vec![[1.0, 10.0]];
            }
            Experiment::Psc => {
                c.perturbation.profile = Profile::Conformal;
                c.perturbation.width = 1.0;
                c.flow.t_end = 5.0;
                c.flow.dt_max = 0.5;
                c.flow.dt_rel = 0.05;
                c.flow.snapshot_times = Vec::new();
                c.norms.p_list = vec![3.0];
                c.fit.windows = vec![[2.0, 20.0]];
            }
            Experiment::Check => {
                c.grid = GridConfig { r_max: 60.0, n: 1500, stretch: 1.004, ghost: 2 };
                c.flow.snapshot_times = Vec::new();
            }
        }
        c
    }

    /// Defaults of `exp` overridden by the file at `path` (if any), validated.
    pub fn load(exp: Experiment, path: Option<&Path>) -> Result<Self> {
        let mut c = Self::defaults(exp);
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            c.apply(&text)?;
        }
        c.validate(exp)?;
        Ok(c)
    }

    /// Apply every `key = value` line of `text`.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", no + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", no + 1)));
            }
            self.set(key, value.trim())?;
        }
        Ok(())
    }

    pub fn parse(exp: Experiment, text: &str) -> Result<Self> {
        let mut c = Self::defaults(exp);
        c.apply(text)?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "grid.r_max" => self.grid.r_max = float(key, v)?,
            "grid.n" => self.grid.n = uint(key, v)?,
            "grid.stretch" => self.grid.stretch = float(key, v)?,
            "grid.ghost" => self.grid.ghost = uint(key, v)?,
            "background.kind" => {
                self.background.kind = match v {
                    "eh" => BackgroundKind::Eh,
                    "flat" => BackgroundKind::Flat,
                    _ => return Err(bad(key, v, "expected eh or flat")),
                }
            }
            "background.eps" => self.background.eps = float(key, v)?,
            "perturbation.profile" => {
                self.perturbation.profile = match v {
                    "bump" => Profile::Bump,
                    "kernel" => Profile::Kernel,
                    "conformal" => Profile::Conformal,
                    _ => return Err(bad(key, v, "expected bump, kernel or conformal")),
                }
            }
            "perturbation.amplitude" => self.perturbation.amplitude = float(key, v)?,
            "perturbation.center" => self.perturbation.center = float(key, v)?,
            "perturbation.width" => self.perturbation.width = float(key, v)?,
            "perturbation.tail_exponent" => self.perturbation.tail_exponent = float(key, v)?,
            "flow.dt0" => self.flow.dt0 = float(key, v)?,
            "flow.dt_max" => self.flow.dt_max = float(key, v)?,
            "flow.dt_rel" => self.flow.dt_rel = float(key, v)?,
            "flow.t_end" => self.flow.t_end = float(key, v)?,
            "flow.scheme" => {
                self.flow.scheme = match v {
                    "fixed" => Scheme::Fixed,
                    "adaptive" => Scheme::Adaptive,
                    _ => return Err(bad(key, v, "expected fixed or adaptive")),
                }
            }
            "flow.snapshot_times" => self.flow.snapshot_times = list(key, v, float)?,
            "norms.p_list" => self.norms.p_list = list(key, v, float)?,
            "norms.r_list" => self.norms.r_list = list(key, v, float)?,
            "norms.k_orders" => self.norms.k_orders = list(key, v, uint)?,
            "fit.windows" => self.fit.windows = list(key, v, window)?,
            "seed" => self.seed = uint(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Canonical text: one line per key, sorted; `parse` of it reproduces the config.
    pub fn render(&self) -> String {
        let c = self;
        let mut s = String::new();
        let kind = match c.background.kind {
            BackgroundKind::Eh => "eh",
            BackgroundKind::Flat => "flat",
        };
        let profile = match c.perturbation.profile {
            Profile::Bump => "bump",
            Profile::Kernel => "kernel",
            Profile::Conformal => "conformal",
        };
        let scheme = match c.flow.scheme {
            Scheme::Fixed => "fixed",
            Scheme::Adaptive => "adaptive",
        };
        let values = [
            c.background.eps.to_string(),
            kind.to_string(),
            join(&c.fit.windows, |w| format!("{}:{}", w[0], w[1])),
            c.flow.dt0.to_string(),
            c.flow.dt_max.to_string(),
            c.flow.dt_rel.to_string(),
            scheme.to_string(),
            join(&c.flow.snapshot_times, f64::to_string),
            c.flow.t_end.to_string(),
            c.grid.ghost.to_string(),
            c.grid.n.to_string(),
            c.grid.r_max.to_string(),
            c.grid.stretch.to_string(),
            join(&c.norms.k_orders, usize::to_string),
            join(&c.norms.p_list, f64::to_string),
            join(&c.norms.r_list, f64::to_string),
            c.perturbation.amplitude.to_string(),
            c.perturbation.center.to_string(),
            profile.to_string(),
            c.perturbation.tail_exponent.to_string(),
            c.perturbation.width.to_string(),
            c.seed.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// `sha256:<hex>` of the canonical text.
    pub fn hash(&self) -> String {
        format!("sha256:{:x}", Sha256::digest(self.render().as_bytes()))
    }

    /// Range checks against the preconditions of the modules the experiment uses.
    pub fn validate(&self, exp: Experiment) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let g = &self.grid;
        if !(g.r_max > 0.0 && g.r_max.is_finite()) {
            return fail(format!("grid.r_max must be positive, got {}", g.r_max));
        }
        if g.n < MIN_NODES {
            return fail(format!("grid.n must be at least {MIN_NODES}, got {}", g.n));
        }
        if !(g.stretch >= 1.0 && g.stretch.is_finite()) {
            return fail(format!("grid.stretch must be >= 1, got {}", g.stretch));
        }
        if !(1..=4).contains(&g.ghost) {
            return fail(format!("grid.ghost must be in 1..=4, got {}", g.ghost));
        }
        if !(self.background.eps > 0.0 && self.background.eps.is_finite()) {
            return fail(format!("background.eps must be positive, got {}", self.background.eps));
        }
        let p = &self.perturbation;
        if !(p.amplitude > 0.0 && p.amplitude.is_finite()) {
            return fail(format!("perturbation.amplitude must be positive, got {}", p.amplitude));
        }
        if !(p.width > 0.0 && p.width.is_finite()) {
            return fail(format!("perturbation.width must be positive, got {}", p.width));
        }
        if !(p.center >= 0.0 && p.center < g.r_max) {
            return fail(format!("perturbation.center must lie in [0, r_max), got {}", p.center));
        }
        if !(p.tail_exponent == 0.0 || (p.tail_exponent > 2.0 && p.tail_exponent.is_finite())) {
            return fail(format!("perturbation.tail_exponent must be 0 or > 2 (L² data), got {}", p.tail_exponent));
        }
        let f = &self.flow;
        f.policy().validate().map_err(|_| Error::Config(format!("invalid step policy dt0 = {}, dt_max = {}, dt_rel = {}", f.dt0, f.dt_max, f.dt_rel)))?;
        if !(f.t_end > 0.0 && f.t_end.is_finite()) {
            return fail(format!("flow.t_end must be positive, got {}", f.t_end));
        }
        if f.snapshot_times.iter().any(|&t| !(t > 0.0 && t <= f.t_end)) || f.snapshot_times.windows(2).any(|w| w[1] <= w[0]) {
            return fail("flow.snapshot_times must be increasing and in (0, t_end]".into());
        }
        let n = &self.norms;
        if n.p_list.is_empty() || n.p_list.iter().any(|&q| !(q > 1.0)) {
            return fail("norms.p_list must be nonempty with every p > 1".into());
        }
        if n.r_list.iter().any(|&r| !(r >= n.p_list[0])) {
            return fail("norms.r_list entries must be >= the first entry of norms.p_list".into());
        }
        if n.k_orders.iter().any(|&k| k > 2) {
            return fail("norms.k_orders entries must be 0, 1 or 2".into());
        }
        if self.fit.windows.is_empty() || self.fit.windows.iter().any(|w| !(w[0] > 0.0 && w[1] > w[0] && w[1].is_finite())) {
            return fail("fit.windows must be nonempty with 0 < lo < hi".into());
        }
        let needs_eh = matches!(exp, Experiment::Kernel | Experiment::Flow | Experiment::Picard | Experiment::Psc | Experiment::Check);
        if needs_eh && self.background.kind != BackgroundKind::Eh {
            return fail(format!("{} needs background.kind = eh", exp.name()));
        }
        let w = self.fit.windows[0];
        match exp {
            Experiment::Rates if w[0] < 2.0 => fail("rates: fit window must start at t >= 2".into()),
            Experiment::Heat if n.r_list.is_empty() || n.k_orders.is_empty() => {
                fail("heat: norms.r_list and norms.k_orders must be nonempty".into())
            }
            Experiment::Heat | Experiment::Flow if w[1] > f.t_end => {
                fail(format!("{}: fit window ends after flow.t_end", exp.name()))
            }
            Experiment::Flow if f.t_end < 4.0 => fail("flow: t_end must be at least 4 (ε Cauchy test uses T/4 ≥ 1)".into()),
            Experiment::Picard if f.t_end <= 1.0 => fail("picard: t_end must exceed 1".into()),
            Experiment::Psc if n.p_list.iter().any(|&q| !(q > 2.0 && q.is_finite())) => {
                fail("psc: the conformal sequence needs finite p > n/(n-2) = 2".into())
            }
            _ => Ok(()),
        }
    }
}
