//! Run configuration: one JSON document, overridable from the command line.

use std::path::{Path, PathBuf};

use acquire_core::acquire::AcquireConfig;
use acquire_core::sgp::{ScalingRule, SgpBaselineConfig, SgpConfig};
use acquire_core::testbed::{BlurSpec, NoiseMode, StartGuess};
use serde::{Deserialize, Serialize};

use crate::problems::Preset;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Acquire,
    Sgp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Acquire => "acquire",
            Method::Sgp => "sgp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "acquire" => Some(Method::Acquire),
            "sgp" => Some(Method::Sgp),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// `x >= 0`
    #[default]
    S1,
    /// `x >= 0`, `sum x = sum(y - b)`
    S2,
}

impl Constraint {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s1" => Some(Constraint::S1),
            "s2" => Some(Constraint::S2),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    /// Preset name, e.g. `phantom`, `cameraman-motion`.
    pub name: String,
    /// Reference image (PGM) for presets without a built-in image.
    pub image: Option<PathBuf>,
    /// Previously generated problem bundle; overrides everything else here.
    pub bundle: Option<PathBuf>,
    /// Grid size of built-in images.
    pub size: usize,
    /// Overrides the preset blur.
    pub blur: Option<BlurSpec>,
    pub snr: f64,
    pub seed: u64,
    pub noise: NoiseMode,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            name: "phantom".into(),
            image: None,
            bundle: None,
            size: 256,
            blur: None,
            snr: 35.0,
            seed: 1,
            noise: NoiseMode::Poisson,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub methods: Vec<Method>,
    /// Taken from the preset table when absent.
    pub lambda: Option<f64>,
    pub mu: f64,
    pub gamma: f64,
    pub theta: f64,
    pub eta: f64,
    pub delta: f64,
    pub memory: usize,
    pub max_backtracks: usize,
    /// SGP iterations per outer step of ACQUIRE; 0 means uncapped.
    pub inner_max_iters: usize,
    pub scaling: ScalingRule,
    pub tol: Vec<f64>,
    pub constraint: Constraint,
    /// Taken from the blur kind when absent.
    pub start: Option<StartGuess>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let acq = AcquireConfig::new(1.0);
        Self {
            methods: vec![Method::Acquire],
            lambda: None,
            mu: acq.mu,
            gamma: acq.gamma,
            theta: acq.theta,
            eta: acq.eta,
            delta: acq.delta,
            memory: acq.memory,
            max_backtracks: acq.max_backtracks,
            inner_max_iters: acq.inner.max_iters,
            scaling: ScalingRule::default(),
            tol: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7],
            constraint: Constraint::S1,
            start: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    /// Seconds per run; `None` disables the clock.
    pub max_time: Option<f64>,
    /// Outer iterations per run; method default when absent.
    pub max_iters: Option<usize>,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_time: Some(25.0),
            max_iters: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub solver: SolverSpec,
    pub budget: Budget,
    pub out: PathBuf,
    /// Worker threads for independent runs; 0 lets the pool decide.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::default(),
            solver: SolverSpec::default(),
            budget: Budget::default(),
            out: PathBuf::from("results"),
            jobs: 0,
        }
    }
}

/// Command-line values that replace config entries when present.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub problem: Option<String>,
    pub image: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub size: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub snr: Option<f64>,
    pub seed: Option<u64>,
    pub tol: Option<Vec<f64>>,
    pub constraint: Option<Constraint>,
    pub max_time: Option<f64>,
    pub max_iters: Option<usize>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

pub fn parse_tol_list(s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| invalid("solver.tol", format!("not a number: {t:?}")))
        })
        .collect()
}

pub fn parse_method_list(s: &str) -> Result<Vec<Method>, ConfigError> {
    s.split(',')
        .map(|m| Method::parse(m).ok_or_else(|| invalid("solver.methods", format!("unknown method {m:?}"))))
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn apply(&mut self, o: Overrides) {
        let p = &mut self.problem;
        if let Some(v) = o.problem {
            p.name = v;
        }
        p.image = o.image.or(p.image.take());
        p.bundle = o.bundle.or(p.bundle.take());
        p.size = o.size.unwrap_or(p.size);
        p.snr = o.snr.unwrap_or(p.snr);
        p.seed = o.seed.unwrap_or(p.seed);
        let s = &mut self.solver;
        if let Some(v) = o.methods {
            s.methods = v;
        }
        s.lambda = o.lambda.or(s.lambda);
        s.mu = o.mu.unwrap_or(s.mu);
        if let Some(v) = o.tol {
            s.tol = v;
        }
        s.constraint = o.constraint.unwrap_or(s.constraint);
        if let Some(v) = o.max_time {
            // a nonpositive budget on the command line disables the clock
            self.budget.max_time = (v > 0.0).then_some(v);
        }
        self.budget.max_iters = o.max_iters.or(self.budget.max_iters);
        if let Some(v) = o.out {
            self.out = v;
        }
        self.jobs = o.jobs.unwrap_or(self.jobs);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.solver;
        if s.methods.is_empty() {
            return Err(invalid("solver.methods", "must name at least one method"));
        }
        if s.tol.is_empty() {
            return Err(invalid("solver.tol", "must contain at least one tolerance"));
        }
        if let Some(t) = s.tol.iter().find(|t| !(**t >= 0.0)) {
            return Err(invalid("solver.tol", format!("{t} is not a nonnegative number")));
        }
        if s.tol.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(invalid("solver.tol", "must be strictly decreasing"));
        }
        if let Some(l) = s.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(invalid("solver.lambda", format!("must be positive, got {l}")));
            }
        }
        if !(s.mu > 0.0 && s.mu.is_finite()) {
            return Err(invalid("solver.mu", format!("must be positive, got {}", s.mu)));
        }
        if !(s.gamma >= 0.0) {
            return Err(invalid("solver.gamma", format!("must be nonnegative, got {}", s.gamma)));
        }
        if !(s.theta > 0.0 && s.theta < 1.0) {
            return Err(invalid("solver.theta", format!("must lie in (0, 1), got {}", s.theta)));
        }
        if !(s.eta > 0.0 && s.eta < 1.0) {
            return Err(invalid("solver.eta", format!("must lie in (0, 1), got {}", s.eta)));
        }
        if !(s.delta > 0.0 && s.delta < 1.0) {
            return Err(invalid("solver.delta", format!("must lie in (0, 1), got {}", s.delta)));
        }
        if s.memory == 0 {
            return Err(invalid("solver.memory", "must be at least 1"));
        }
        if let Some(t) = self.budget.max_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid("budget.max_time", format!("must be positive, got {t}")));
            }
        }
        if self.budget.max_iters == Some(0) {
            return Err(invalid("budget.max_iters", "must be at least 1"));
        }
        let p = &self.problem;
        if p.bundle.is_none() {
            if p.snr.is_nan() || (p.snr.is_infinite() && p.noise == NoiseMode::Poisson) {
                return Err(invalid("problem.snr", format!("must be finite for Poisson noise, got {}", p.snr)));
            }
            if Preset::lookup(&p.name).is_none() {
                return Err(invalid(
                    "problem.name",
                    format!("unknown problem {:?}; known: {}", p.name, Preset::names().join(", ")),
                ));
            }
        }
        Ok(())
    }

    fn max_iters(&self, method: Method) -> usize {
        self.budget.max_iters.unwrap_or(match method {
            Method::Acquire => AcquireConfig::new(1.0).max_iters,
            Method::Sgp => SgpBaselineConfig::new(1.0).max_iters,
        })
    }

    pub fn acquire_config(&self, lambda: f64, tol: f64) -> AcquireConfig {
        let s = &self.solver;
        AcquireConfig {
            lambda,
            mu: s.mu,
            gamma: s.gamma,
            eta: s.eta,
            delta: s.delta,
            memory: s.memory,
            max_backtracks: s.max_backtracks,
            theta: s.theta,
            inner: SgpConfig {
                max_iters: s.inner_max_iters,
                scaling: s.scaling,
                ..SgpConfig::default()
            },
            tol,
            max_iters: self.max_iters(Method::Acquire),
            max_time: self.budget.max_time,
        }
    }

    pub fn sgp_config(&self, lambda: f64, tol: f64) -> SgpBaselineConfig {
        let base = SgpBaselineConfig::new(lambda);
        SgpBaselineConfig {
            lambda,
            mu: self.solver.mu,
            sgp: SgpConfig {
                scaling: self.solver.scaling,
                ..base.sgp
            },
            tol,
            max_iters: self.max_iters(Method::Sgp),
            max_time: self.budget.max_time,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"solver": {"lambda": 0.004}, "problem": {"snr": 40}}"#).unwrap();
        assert_eq!(c.solver.lambda, Some(0.004));
        assert_eq!(c.problem.snr, 40.0);
        assert_eq!(c.solver.tol.len(), 6);
        assert!(serde_json::from_str::<RunConfig>(r#"{"solver": {"lamda": 1}}"#).is_err());
    }

    fn field_of(c: &RunConfig) -> &'static str {
        match c.validate().unwrap_err() {
            ConfigError::Invalid { field, .. } => field,
            e => panic!("{e}"),
        }
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut c = RunConfig::default();
        c.solver.tol = vec![1e-3, 1e-2];
        assert_eq!(field_of(&c), "solver.tol");
        c.solver.tol = vec![];
        assert_eq!(field_of(&c), "solver.tol");
        let mut c = RunConfig::default();
        c.solver.lambda = Some(-1.0);
        assert_eq!(field_of(&c), "solver.lambda");
        let mut c = RunConfig::default();
        c.solver.mu = 0.0;
        assert_eq!(field_of(&c), "solver.mu");
        let mut c = RunConfig::default();
        c.problem.name = "lena".into();
        assert_eq!(field_of(&c), "problem.name");
        let mut c = RunConfig::default();
        c.solver.methods.clear();
        assert_eq!(field_of(&c), "solver.methods");
    }

    #[test]
    fn overrides_replace_entries() {
        let mut c = RunConfig::default();
        c.apply(Overrides {
            lambda: Some(0.01),
            tol: Some(parse_tol_list("1e-2, 1e-4").unwrap()),
            methods: Some(parse_method_list("acquire,sgp").unwrap()),
            constraint: Constraint::parse("S2"),
            max_time: Some(0.0),
            ..Overrides::default()
        });
        assert_eq!(c.solver.lambda, Some(0.01));
        assert_eq!(c.solver.tol, vec![1e-2, 1e-4]);
        assert_eq!(c.solver.methods, vec![Method::Acquire, Method::Sgp]);
        assert_eq!(c.solver.constraint, Constraint::S2);
        assert_eq!(c.budget.max_time, None);
        assert!(parse_tol_list("1e-2,x").is_err());
        assert!(parse_method_list("acquire,pdal").is_err());
    }

    #[test]
    fn solver_configs_carry_the_settings() {
        let mut c = RunConfig::default();
        c.solver.inner_max_iters = 0;
        c.budget.max_iters = Some(7);
        let a = c.acquire_config(0.006, 1e-3);
        a.validate().unwrap();
        assert_eq!((a.lambda, a.tol, a.max_iters, a.inner.max_iters), (0.006, 1e-3, 7, 0));
        let s = c.sgp_config(0.006, 1e-3);
        assert_eq!((s.sgp.max_iters, s.max_iters), (0, 7));
    }
}
