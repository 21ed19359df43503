//! The TOML experiment config: raw sections as parsed, and validation into
//! the solver types.
//!
//! Every key is optional at parse time so that validation can report all
//! missing or misplaced keys at once, each by its dotted name.

use std::fmt;
use std::path::PathBuf;

use adaflow::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub spectrum: SpectrumSection,
    pub rule: RuleSection,
    pub init: InitSection,
    pub run: RunSection,
    pub output: OutputSection,
    pub compare: CompareSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub lambda1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub lambda2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "numbers")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub gamma0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub star_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub x0_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub t_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub record_every: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_runs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
    /// Also write every ensemble member next to the summary.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_run: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub risk_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", deserialize_with = "number")]
    pub gamma_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<toml::Value>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
}

// TOML keeps integers and floats apart; `omega = 1` should still mean 1.0.
#[derive(Deserialize)]
#[serde(untagged)]
enum Number {
    Int(i64),
    Float(f64),
}

impl From<Number> for f64 {
    fn from(n: Number) -> f64 {
        match n {
            Number::Int(i) => i as f64,
            Number::Float(x) => x,
        }
    }
}

fn number<'de, D: Deserializer<'de>>(de: D) -> Result<Option<f64>, D::Error> {
    Ok(Some(Number::deserialize(de)?.into()))
}

fn numbers<'de, D: Deserializer<'de>>(de: D) -> Result<Option<Vec<f64>>, D::Error> {
    Ok(Some(Vec::<Number>::deserialize(de)?.into_iter().map(f64::from).collect()))
}

/// Every problem found in a config, each prefixed by its dotted key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config")?;
        for p in &self.problems {
            write!(f, "\n  {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

pub const REQUIRED_KEYS: [&str; 5] = ["model.kind", "spectrum.kind", "rule.kind", "init.kind", "run.t_end"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub t_end: f64,
    pub dt: f64,
    pub record_every: f64,
    pub seed: u64,
    pub n_runs: usize,
}

impl RunSettings {
    pub fn grid(&self) -> adaflow::Result<TimeGrid> {
        TimeGrid::new(self.t_end, self.dt, self.record_every)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Ode,
    Volterra,
    Sgd,
}

impl Solver {
    fn parse(key: &str, name: &str, problems: &mut Vec<String>) -> Option<Self> {
        match name {
            "ode" => Some(Solver::Ode),
            "volterra" => Some(Solver::Volterra),
            "sgd" => Some(Solver::Sgd),
            other => {
                problems.push(format!("{key}: unknown solver `{other}` (expected ode, volterra or sgd)"));
                None
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Solver::Ode => "ode",
            Solver::Volterra => "volterra",
            Solver::Sgd => "sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSettings {
    pub candidate: Solver,
    pub reference: Solver,
    pub dims: Option<Vec<usize>>,
    pub risk_tol: f64,
    pub gamma_tol: f64,
}

/// A validated config.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: RiskModel,
    pub spectrum: Spectrum,
    pub rule: StepsizeRule,
    pub init: InitSpec,
    pub run: RunSettings,
    pub output: Option<PathBuf>,
    pub per_run: bool,
    pub compare: CompareSettings,
    raw_spectrum: SpectrumSection,
}

impl Experiment {
    /// `beta` when the spectrum is a power law.
    pub fn power_law_beta(&self) -> Option<f64> {
        (self.raw_spectrum.kind.as_deref() == Some("power_law")).then_some(self.raw_spectrum.beta).flatten()
    }

    /// The configured spectrum rebuilt at another dimension.
    pub fn spectrum_at(&self, d: usize) -> Result<Spectrum, ConfigError> {
        let mut raw = self.raw_spectrum.clone();
        raw.d = Some(d);
        let mut problems = Vec::new();
        match build_spectrum(&raw, &mut problems) {
            Some(s) if problems.is_empty() => Ok(s),
            _ => Err(ConfigError { problems }),
        }
    }
}

struct Keys<'a> {
    section: &'static str,
    problems: &'a mut Vec<String>,
}

impl Keys<'_> {
    fn require<T: Clone>(&mut self, key: &str, v: &Option<T>, kind: &str) -> Option<T> {
        if v.is_none() {
            self.problems.push(format!("{}.{key}: required by kind `{kind}`", self.section));
        }
        v.clone()
    }

    fn reject<T>(&mut self, key: &str, v: &Option<T>, kind: &str) {
        if v.is_some() {
            self.problems.push(format!("{}.{key}: not used by kind `{kind}`", self.section));
        }
    }

    fn core<T>(&mut self, r: adaflow::Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(Error::InvalidParameter { name, reason }) => {
                self.problems.push(format!("{}.{name}: {reason}", self.section));
                None
            }
            Err(e) => {
                self.problems.push(format!("{}: {e}", self.section));
                None
            }
        }
    }

    fn unknown_kind(&mut self, kind: &str, expected: &str) {
        self.problems.push(format!("{}.kind: unknown kind `{kind}` (expected one of {expected})", self.section));
    }
}

fn build_model(m: &ModelSection, problems: &mut Vec<String>) -> Option<RiskModel> {
    let mut k = Keys { section: "model", problems };
    let kind = m.kind.as_deref()?;
    match kind {
        "least_squares" => {
            k.reject("quadrature", &m.quadrature, kind);
            k.core(RiskModel::least_squares(m.omega.unwrap_or(0.0)))
        }
        "logistic" => {
            if m.omega.is_some_and(|w| w != 0.0) {
                k.problems.push("model.omega: logistic regression has no label noise".into());
            }
            k.core(RiskModel::logistic(m.quadrature.unwrap_or(adaflow::riskmodel::DEFAULT_QUADRATURE)))
        }
        other => {
            k.unknown_kind(other, "least_squares, logistic");
            None
        }
    }
}

fn build_spectrum(s: &SpectrumSection, problems: &mut Vec<String>) -> Option<Spectrum> {
    let mut k = Keys { section: "spectrum", problems };
    let kind = s.kind.as_deref()?;
    let unused = |k: &mut Keys, keys: &[&str]| {
        for key in keys {
            match *key {
                "d" => k.reject("d", &s.d, kind),
                "lambda1" => k.reject("lambda1", &s.lambda1, kind),
                "lambda2" => k.reject("lambda2", &s.lambda2, kind),
                "beta" => k.reject("beta", &s.beta, kind),
                "s" => k.reject("s", &s.s, kind),
                "lambdas" => k.reject("lambdas", &s.lambdas, kind),
                "path" => k.reject("path", &s.path, kind),
                _ => unreachable!(),
            }
        }
    };
    match kind {
        "identity" => {
            unused(&mut k, &["lambda1", "lambda2", "beta", "s", "lambdas", "path"]);
            let d = k.require("d", &s.d, kind)?;
            k.core(Spectrum::identity(d))
        }
        "two_point" => {
            unused(&mut k, &["beta", "s", "lambdas", "path"]);
            let (l1, l2, d) = (k.require("lambda1", &s.lambda1, kind), k.require("lambda2", &s.lambda2, kind), k.require("d", &s.d, kind));
            k.core(Spectrum::two_point(l1?, l2?, d?))
        }
        "power_law" => {
            unused(&mut k, &["lambda1", "lambda2", "s", "lambdas", "path"]);
            let (beta, d) = (k.require("beta", &s.beta, kind), k.require("d", &s.d, kind));
            k.core(Spectrum::power_law(beta?, d?))
        }
        "cond" => {
            unused(&mut k, &["lambda1", "lambda2", "beta", "lambdas", "path"]);
            let (sv, d) = (k.require("s", &s.s, kind), k.require("d", &s.d, kind));
            k.core(Spectrum::cond(sv?, d?))
        }
        "explicit" => {
            unused(&mut k, &["lambda1", "lambda2", "beta", "s", "path"]);
            let lambdas = k.require("lambdas", &s.lambdas, kind)?;
            let spectrum = k.core(Spectrum::explicit(&lambdas))?;
            match s.d {
                Some(d) => k.core(spectrum.with_dimension(d)),
                None => Some(spectrum),
            }
        }
        "file" => {
            unused(&mut k, &["lambda1", "lambda2", "beta", "s", "lambdas"]);
            let path = k.require("path", &s.path, kind)?;
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => {
                    k.problems.push(format!("spectrum.path: cannot read {}: {e}", path.display()));
                    return None;
                }
            };
            let spectrum = k.core(Spectrum::from_text(&text))?;
            match s.d {
                Some(d) => k.core(spectrum.with_dimension(d)),
                None => Some(spectrum),
            }
        }
        other => {
            k.unknown_kind(other, "identity, two_point, power_law, cond, explicit, file");
            None
        }
    }
}

fn build_rule(r: &RuleSection, problems: &mut Vec<String>) -> Option<StepsizeRule> {
    let mut k = Keys { section: "rule", problems };
    let kind = r.kind.as_deref()?;
    let (uses_gamma0, uses_b_eta, uses_alpha) = match kind {
        "constant" => (true, false, false),
        "adagrad" => (false, true, false),
        "rmsprop" => (false, true, true),
        "linesearch" | "polyak" => (false, false, false),
        other => {
            k.unknown_kind(other, "constant, adagrad, rmsprop, linesearch, polyak");
            return None;
        }
    };
    if !uses_gamma0 {
        k.reject("gamma0", &r.gamma0, kind);
    }
    if !uses_b_eta {
        k.reject("b", &r.b, kind);
        k.reject("eta", &r.eta, kind);
    }
    if !uses_alpha {
        k.reject("alpha", &r.alpha, kind);
    }
    match kind {
        "constant" => {
            let g = k.require("gamma0", &r.gamma0, kind)?;
            k.core(StepsizeRule::constant(g))
        }
        "adagrad" => {
            let (b, eta) = (k.require("b", &r.b, kind), k.require("eta", &r.eta, kind));
            k.core(StepsizeRule::adagrad_norm(b?, eta?))
        }
        "rmsprop" => {
            let (b, eta, alpha) = (k.require("b", &r.b, kind), k.require("eta", &r.eta, kind), k.require("alpha", &r.alpha, kind));
            k.core(StepsizeRule::rmsprop_norm(b?, eta?, alpha?))
        }
        "linesearch" => Some(StepsizeRule::line_search()),
        _ => Some(StepsizeRule::polyak()),
    }
}

fn build_init(i: &InitSection, problems: &mut Vec<String>) -> Option<InitSpec> {
    let mut k = Keys { section: "init", problems };
    let kind = i.kind.as_deref()?;
    match kind {
        "zero_start" => {
            k.reject("x0_sq", &i.x0_sq, kind);
            k.reject("delta", &i.delta, kind);
            Some(InitSpec::zero_start(i.star_sq.unwrap_or(1.0)))
        }
        "gaussian_both" => {
            k.reject("delta", &i.delta, kind);
            Some(InitSpec::gaussian_both(i.x0_sq.unwrap_or(1.0), i.star_sq.unwrap_or(1.0)))
        }
        "powerlaw_residual" => {
            k.reject("star_sq", &i.star_sq, kind);
            k.reject("x0_sq", &i.x0_sq, kind);
            Some(InitSpec::powerlaw_residual(k.require("delta", &i.delta, kind)?))
        }
        "ones_star" => {
            k.reject("star_sq", &i.star_sq, kind);
            k.reject("x0_sq", &i.x0_sq, kind);
            k.reject("delta", &i.delta, kind);
            Some(InitSpec::OnesStar)
        }
        other => {
            k.unknown_kind(other, "zero_start, gaussian_both, powerlaw_residual, ones_star");
            None
        }
    }
}

fn build_run(r: &RunSection, problems: &mut Vec<String>) -> Option<RunSettings> {
    let t_end = r.t_end?;
    let run = RunSettings {
        t_end,
        dt: r.dt.unwrap_or(1e-3),
        record_every: r.record_every.unwrap_or(0.1),
        seed: r.seed.unwrap_or(0),
        n_runs: r.n_runs.unwrap_or(1),
    };
    if run.n_runs == 0 {
        problems.push("run.n_runs: must be at least 1".into());
    }
    match run.grid() {
        Ok(_) => Some(run),
        Err(Error::InvalidParameter { name, reason }) => {
            problems.push(format!("run.{name}: {reason}"));
            None
        }
        Err(e) => {
            problems.push(format!("run: {e}"));
            None
        }
    }
}

fn build_compare(c: &CompareSection, problems: &mut Vec<String>) -> CompareSettings {
    let candidate = c.candidate.as_deref().map_or(Some(Solver::Sgd), |n| Solver::parse("compare.candidate", n, problems));
    let reference = c.reference.as_deref().map_or(Some(Solver::Ode), |n| Solver::parse("compare.reference", n, problems));
    if reference == Some(Solver::Sgd) {
        problems.push("compare.reference: must be deterministic (ode or volterra)".into());
    }
    for (key, tol) in [("risk_tol", c.risk_tol), ("gamma_tol", c.gamma_tol)] {
        if tol.is_some_and(|t| !(t > 0.0)) {
            problems.push(format!("compare.{key}: must be positive"));
        }
    }
    if c.dims.as_ref().is_some_and(|d| d.is_empty() || d.contains(&0)) {
        problems.push("compare.dims: needs at least one positive dimension".into());
    }
    CompareSettings {
        candidate: candidate.unwrap_or(Solver::Sgd),
        reference: reference.unwrap_or(Solver::Ode),
        dims: c.dims.clone(),
        risk_tol: c.risk_tol.unwrap_or(0.05),
        gamma_tol: c.gamma_tol.unwrap_or(0.05),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError { problems: vec![e.message().to_string()] })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config sections always serialize")
    }

    pub fn validate(&self) -> Result<Experiment, ConfigError> {
        let present = [
            self.model.kind.is_some(),
            self.spectrum.kind.is_some(),
            self.rule.kind.is_some(),
            self.init.kind.is_some(),
            self.run.t_end.is_some(),
        ];
        let missing: Vec<&str> = REQUIRED_KEYS.iter().zip(present).filter(|(_, p)| !p).map(|(k, _)| *k).collect();
        let mut problems = Vec::new();
        if !missing.is_empty() {
            problems.push(format!("missing required keys: {}", missing.join(", ")));
        }
        let model = build_model(&self.model, &mut problems);
        let spectrum = build_spectrum(&self.spectrum, &mut problems);
        let rule = build_rule(&self.rule, &mut problems);
        let init = build_init(&self.init, &mut problems);
        let run = build_run(&self.run, &mut problems);
        let compare = build_compare(&self.compare, &mut problems);
        if let Some(f) = self.output.format.as_deref().filter(|f| *f != "csv") {
            problems.push(format!("output.format: unsupported format `{f}` (only csv)"));
        }
        if let (Some(m), Some(r)) = (&model, &rule) {
            if m.kind() == ModelKind::Logistic && matches!(r, StepsizeRule::LineSearch | StepsizeRule::Polyak) {
                problems.push(format!("rule.kind: `{}` is defined for least squares only", r.name()));
            }
        }
        match (model, spectrum, rule, init, run) {
            (Some(model), Some(spectrum), Some(rule), Some(init), Some(run)) if problems.is_empty() => Ok(Experiment {
                model,
                spectrum,
                rule,
                init,
                run,
                output: self.output.path.clone(),
                per_run: self.output.per_run.unwrap_or(false),
                compare,
                raw_spectrum: self.spectrum.clone(),
            }),
            _ => Err(ConfigError { problems }),
        }
    }
}
