//! Experiment configuration: one TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use stik_core::linops::{read_matrix, read_vector};
use stik_core::problems::{gen_test_problem, NoiseSpec, ProblemName, TestProblemSpec};
use stik_core::regparam::{GridSpec, SelectorMethod, SelectorSettings, TraceMode};
use stik_core::rng::derive_seed;
use stik_core::solvers::{LsqrOptions, RunConfig, Selector};
use stik_core::{InverseProblem, Method, SamplePlan, Strategy};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Every random stream is derived from this seed unless a section sets its own.
    pub seed: u64,
    pub epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Fill the `seconds` column; off by default so reruns are byte-identical.
    pub timing: bool,
    pub problem: ProblemConfig,
    pub sampling: SamplingConfig,
    pub method: MethodConfig,
    pub regparam: RegparamConfig,
    pub lsqr: LsqrConfig,
    pub superres: SuperresConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 1,
            output: None,
            timing: false,
            problem: ProblemConfig::default(),
            sampling: SamplingConfig::default(),
            method: MethodConfig::default(),
            regparam: RegparamConfig::default(),
            lsqr: LsqrConfig::default(),
            superres: SuperresConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    pub n: usize,
    /// `level`, `variance` or `none`.
    pub noise: String,
    pub noise_value: f64,
    /// Load `A` from a matrix file instead of generating a problem.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_true: Option<PathBuf>,
    /// Noise variance for loaded problems, or an override for generated ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            name: "gravity".into(),
            n: 100,
            noise: "level".into(),
            noise_value: 0.01,
            a: None,
            b: None,
            x_true: None,
            sigma2: None,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub blocks: usize,
    pub strategy: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            blocks: 10,
            strategy: "cyclic".into(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    /// `rrls`, `stik`, `sg`, `sbk` or `slimtik`.
    pub name: String,
    /// Fixed parameter of rrls.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Blocks kept by slimtik.
    pub memory: usize,
    /// Effective parameter used for the first step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_lambda: Option<f64>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            name: "stik".into(),
            lambda: None,
            memory: 2,
            initial_lambda: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegparamConfig {
    /// `fixed`, `sdp`, `supre` or `sgcv`.
    pub method: String,
    /// `Λ_k` for fixed selection.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub increment: Option<f64>,
    pub gamma: f64,
    /// Defaults to the problem's own noise variance when it has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    pub grid: GridConfig,
    /// `exact` or `hutchinson`.
    pub trace: String,
    pub probes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_seed: Option<u64>,
    /// Replaces the `‖A‖²` estimate that places the grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

impl Default for RegparamConfig {
    fn default() -> Self {
        Self {
            method: "fixed".into(),
            increment: None,
            gamma: 4.0,
            sigma2: None,
            grid: GridConfig::default(),
            trace: "exact".into(),
            probes: 10,
            probe_seed: None,
            scale: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    pub refine: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            min: g.min,
            max: g.max,
            points: g.points,
            refine: g.refine_iters,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsqrConfig {
    pub tol: f64,
    /// Defaults to twice the number of unknowns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    pub accept_unconverged: bool,
}

impl Default for LsqrConfig {
    fn default() -> Self {
        Self {
            tol: LsqrOptions::default().tol,
            max_iter: None,
            accept_unconverged: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperresConfig {
    /// High-resolution side.
    pub n: usize,
    /// Low-resolution side.
    pub ell: usize,
    pub frames: usize,
    pub max_shift: f64,
    pub max_angle: f64,
    pub noise_level: f64,
    /// Read frames from this directory as they appear instead of generating them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream_dir: Option<PathBuf>,
    /// Seconds to wait for each streamed frame.
    pub timeout: f64,
    /// High-resolution reference image (PGM) for streamed runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    /// Where to write the reconstruction (PGM).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SuperresConfig {
    fn default() -> Self {
        Self {
            n: 64,
            ell: 16,
            frames: 8,
            max_shift: 2.0,
            max_angle: 0.05,
            noise_level: 0.01,
            stream_dir: None,
            timeout: 10.0,
            truth: None,
            image_out: None,
            seed: None,
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {msg}"))
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_literal(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Applies one `section.key=value` assignment to a raw table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override {assignment:?} is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Validation(format!("override {assignment:?} has an empty key")));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = table;
    for (depth, key) in parents.iter().enumerate() {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| invalid(&keys[..=depth].join("."), "is a value, not a section"))?;
    }
    node.insert(last.to_string(), parse_literal(value.trim()));
    Ok(())
}

impl Config {
    /// Reads `path` (if any), applies the overrides in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = Self::from_table(table)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_table(table: toml::Table) -> Result<Self, CliError> {
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                CliError::Validation(format!("config: {inner}"))
            } else {
                CliError::Validation(format!("{path}: {inner}"))
            }
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Checks everything that can be checked without building the problem.
    pub fn validate(&self) -> Result<(), CliError> {
        self.problem_name()?;
        self.noise_spec()?;
        if self.problem.a.is_some() != self.problem.b.is_some() {
            return Err(invalid("problem.b", "a loaded problem needs both problem.a and problem.b"));
        }
        if self.problem.sigma2.is_some_and(|s| !(s >= 0.0)) {
            return Err(invalid("problem.sigma2", "must be >= 0"));
        }
        if self.sampling.blocks == 0 {
            return Err(invalid("sampling.blocks", "must be positive"));
        }
        self.strategy()?;
        self.method()?;
        self.trace_mode()?;
        if self.regparam.method != "fixed" {
            self.selector_method()?;
        }
        let g = &self.regparam.grid;
        GridSpec {
            min: g.min,
            max: g.max,
            points: g.points,
            refine_iters: g.refine,
        }
        .validate()
        .map_err(|e| invalid("regparam.grid", e))?;
        if let Some(inc) = self.regparam.increment {
            if !inc.is_finite() {
                return Err(invalid("regparam.increment", "must be finite"));
            }
        }
        if self.regparam.scale.is_some_and(|s| !(s > 0.0)) {
            return Err(invalid("regparam.scale", "must be > 0"));
        }
        if !(self.lsqr.tol > 0.0) {
            return Err(invalid("lsqr.tol", "must be > 0"));
        }
        if self.lsqr.max_iter == Some(0) {
            return Err(invalid("lsqr.max_iter", "must be positive"));
        }
        if let Some(l0) = self.method.initial_lambda {
            if !(l0 >= 0.0) || !l0.is_finite() {
                return Err(invalid("method.initial_lambda", "must be >= 0"));
            }
        }
        let s = &self.superres;
        if s.ell == 0 || s.n == 0 || s.n % s.ell != 0 {
            return Err(invalid("superres.ell", format!("must divide superres.n = {}", s.n)));
        }
        if s.frames == 0 {
            return Err(invalid("superres.frames", "must be positive"));
        }
        if !(s.timeout >= 0.0) || !s.timeout.is_finite() {
            return Err(invalid("superres.timeout", "must be a finite number of seconds"));
        }
        Ok(())
    }

    pub fn problem_name(&self) -> Result<ProblemName, CliError> {
        self.problem.name.parse().map_err(|e| invalid("problem.name", e))
    }

    fn noise_spec(&self) -> Result<NoiseSpec, CliError> {
        let v = self.problem.noise_value;
        let positive = || {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(invalid("problem.noise_value", format!("must be > 0, got {v}")))
            }
        };
        match self.problem.noise.as_str() {
            "none" => Ok(NoiseSpec::None),
            "level" => Ok(NoiseSpec::Level(positive()?)),
            "variance" => Ok(NoiseSpec::Variance(positive()?)),
            other => Err(invalid(
                "problem.noise",
                format!("unknown noise mode {other:?} (expected level, variance or none)"),
            )),
        }
    }

    pub fn strategy(&self) -> Result<Strategy, CliError> {
        self.sampling.strategy.parse().map_err(|e| invalid("sampling.strategy", e))
    }

    pub fn method(&self) -> Result<Method, CliError> {
        let m = &self.method;
        Ok(match m.name.as_str() {
            "rrls" => {
                let lambda = m.lambda.ok_or_else(|| invalid("method.lambda", "required for rrls"))?;
                if !(lambda >= 0.0) || !lambda.is_finite() {
                    return Err(invalid("method.lambda", "must be >= 0"));
                }
                Method::Rrls { lambda }
            }
            "stik" => Method::Stik,
            "sg" => Method::Sg,
            "sbk" => Method::Sbk,
            "slimtik" => {
                if m.memory == 0 {
                    return Err(invalid("method.memory", "must be positive"));
                }
                Method::SlimTik { memory: m.memory }
            }
            other => {
                return Err(invalid(
                    "method.name",
                    format!("unknown method {other:?} (expected rrls, stik, sg, sbk or slimtik)"),
                ))
            }
        })
    }

    fn selector_method(&self) -> Result<SelectorMethod, CliError> {
        self.regparam.method.parse().map_err(|_| {
            invalid(
                "regparam.method",
                format!("unknown selector {:?} (expected fixed, sdp, supre or sgcv)", self.regparam.method),
            )
        })
    }

    fn trace_mode(&self) -> Result<TraceMode, CliError> {
        match self.regparam.trace.as_str() {
            "exact" => Ok(TraceMode::Exact),
            "hutchinson" if self.regparam.probes == 0 => Err(invalid("regparam.probes", "must be positive")),
            "hutchinson" => Ok(TraceMode::Hutchinson {
                probes: self.regparam.probes,
            }),
            other => Err(invalid(
                "regparam.trace",
                format!("unknown trace mode {other:?} (expected exact or hutchinson)"),
            )),
        }
    }

    pub fn sampling_seed(&self) -> u64 {
        self.sampling.seed.unwrap_or_else(|| derive_seed(self.seed, "sampling"))
    }

    pub fn probe_seed(&self) -> u64 {
        self.regparam.probe_seed.unwrap_or_else(|| derive_seed(self.seed, "probes"))
    }

    pub fn problem_seed(&self) -> u64 {
        self.problem.seed.unwrap_or(self.seed)
    }

    pub fn frames_seed(&self) -> u64 {
        self.superres.seed.unwrap_or(self.seed)
    }

    /// The same experiment under the top-level seed of replicate `r`.
    /// Replicate 0 is the experiment itself.
    pub fn replicate(&self, r: usize) -> Self {
        let mut c = self.clone();
        if r > 0 {
            c.seed = derive_seed(self.seed, &format!("replicate/{r}"));
        }
        c
    }

    pub fn build_problem(&self) -> Result<InverseProblem, CliError> {
        let p = &self.problem;
        let mut problem = match (&p.a, &p.b) {
            (Some(a_path), Some(b_path)) => {
                let a = read_matrix(a_path).map_err(|e| invalid("problem.a", e))?;
                let b = read_vector(b_path).map_err(|e| invalid("problem.b", e))?;
                let mut prob = InverseProblem::standard(Arc::new(a), b).map_err(|e| invalid("problem.b", e))?;
                if let Some(x_path) = &p.x_true {
                    let x = read_vector(x_path).map_err(|e| invalid("problem.x_true", e))?;
                    prob = prob.with_truth(x).map_err(|e| invalid("problem.x_true", e))?;
                }
                prob
            }
            _ => gen_test_problem(&TestProblemSpec {
                name: self.problem_name()?,
                n: p.n,
                noise: self.noise_spec()?,
                seed: self.problem_seed(),
            })
            .map_err(|e| invalid("problem.n", e))?,
        };
        if let Some(s) = p.sigma2 {
            problem = problem.with_sigma2(s).map_err(|e| invalid("problem.sigma2", e))?;
        }
        Ok(problem)
    }

    pub fn plan(&self, m: usize) -> Result<SamplePlan, CliError> {
        SamplePlan::contiguous(m, self.sampling.blocks)
            .map_err(|e| invalid("sampling.blocks", format!("cannot split {m} rows: {e}")))
    }

    pub fn lsqr_options(&self) -> LsqrOptions {
        LsqrOptions {
            tol: self.lsqr.tol,
            max_iter: self.lsqr.max_iter,
        }
    }

    /// Selector settings for `method` (the configured one when `None`);
    /// `sigma2` falls back to `problem_sigma2`.
    pub fn selector_settings(
        &self,
        method: Option<SelectorMethod>,
        problem_sigma2: Option<f64>,
    ) -> Result<SelectorSettings, CliError> {
        let method = match method {
            Some(m) => m,
            None => self.selector_method()?,
        };
        let r = &self.regparam;
        let mut s = SelectorSettings::new(method);
        s.sigma2 = r.sigma2.or(problem_sigma2);
        s.gamma = r.gamma;
        s.grid = GridSpec {
            min: r.grid.min,
            max: r.grid.max,
            points: r.grid.points,
            refine_iters: r.grid.refine,
        };
        s.trace = self.trace_mode()?;
        s.probe_seed = self.probe_seed();
        s.scale = r.scale;
        s.validate().map_err(|e| invalid("regparam.sigma2", e))?;
        Ok(s)
    }

    pub fn run_config(&self, problem_sigma2: Option<f64>) -> Result<RunConfig, CliError> {
        let method = self.method()?;
        let selector = if self.regparam.method == "fixed" {
            let increment = match (self.regparam.increment, method.takes_increments()) {
                (Some(v), _) => v,
                (None, false) => 0.0,
                (None, true) => return Err(invalid("regparam.increment", "required for fixed selection")),
            };
            Selector::Fixed { increment }
        } else {
            Selector::Adaptive(self.selector_settings(None, problem_sigma2)?)
        };
        let mut cfg = RunConfig::new(method, self.epochs, self.strategy()?, selector);
        cfg.seed = self.sampling_seed();
        cfg.initial_lambda = self.method.initial_lambda;
        cfg.lsqr = self.lsqr_options();
        cfg.accept_unconverged = self.lsqr.accept_unconverged;
        Ok(cfg)
    }
}
