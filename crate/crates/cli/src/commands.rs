use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use adaflow::asymptotics::{
    adagrad_limit_bracket, kappa_exponents, line_search_bounds, line_search_limit, noisy_adagrad_asymptote,
    power_law_rates, strongly_convex_lower_bound,
};
use adaflow::prelude::*;
use rayon::prelude::*;

use crate::config::{ConfigError, Experiment, ExperimentConfig, Solver};
use crate::CliError;

/// Where a command's text output goes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sink {
    Stdout,
    File(PathBuf),
}

impl Sink {
    pub fn from_option(path: Option<PathBuf>) -> Self {
        path.map_or(Sink::Stdout, Sink::File)
    }

    pub fn write(&self, text: &str) -> Result<(), CliError> {
        match self {
            Sink::Stdout => {
                print!("{text}");
                Ok(())
            }
            Sink::File(p) => write_file(p, text),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn solve_deterministic(solver: Solver, exp: &Experiment, spectrum: &Spectrum) -> Result<Trajectory, CliError> {
    let grid = exp.run.grid()?;
    let traj = match solver {
        Solver::Ode => detflow::solve(&exp.model, spectrum, &exp.rule, &exp.init, &grid)?,
        Solver::Volterra => {
            if exp.model.kind() != ModelKind::LeastSquares {
                return Err(config_problem("model.kind: the Volterra solver needs least_squares"));
            }
            let kp = KernelPair::new(spectrum, &exp.init, exp.model.omega())?;
            volterra::solve_volterra(&kp, &exp.rule, &grid)?
        }
        Solver::Sgd => unreachable!("SGD is not deterministic"),
    };
    Ok(traj.with_meta("spectrum_d", spectrum.d()).with_meta("init", exp.init.name()))
}

fn config_problem(msg: &str) -> CliError {
    CliError::Config(ConfigError { problems: vec![msg.to_string()] })
}

fn sgd_config(exp: &Experiment, spectrum: &Spectrum) -> SgdConfig {
    SgdConfig {
        model: exp.model.clone(),
        spectrum: spectrum.clone(),
        rule: exp.rule,
        init: exp.init.clone(),
        t_end: exp.run.t_end,
        record_every: exp.run.record_every,
        seed: exp.run.seed,
    }
}

pub fn ode(exp: &Experiment) -> Result<String, CliError> {
    Ok(solve_deterministic(Solver::Ode, exp, &exp.spectrum)?.to_csv())
}

pub fn volterra(exp: &Experiment) -> Result<String, CliError> {
    Ok(solve_deterministic(Solver::Volterra, exp, &exp.spectrum)?.to_csv())
}

/// A single run, or the ensemble summary when `run.n_runs > 1`. With
/// `output.per_run` the members are returned as well, keyed by index.
pub fn sgd(exp: &Experiment) -> Result<(String, Vec<String>), CliError> {
    let cfg = sgd_config(exp, &exp.spectrum);
    if exp.run.n_runs == 1 {
        return Ok((sgdsim::run(&cfg, 0)?.to_csv(), Vec::new()));
    }
    let ens = sgdsim::ensemble(&cfg, exp.run.n_runs)?;
    let members = if exp.per_run { ens.runs.iter().map(Trajectory::to_csv).collect() } else { Vec::new() };
    Ok((ens.summary.to_csv(), members))
}

fn member_path(base: &Path, index: usize) -> PathBuf {
    let stem = base.file_stem().map_or_else(|| "sgd".into(), |s| s.to_string_lossy().into_owned());
    base.with_file_name(format!("{stem}.run{index}.csv"))
}

pub fn write_sgd(exp: &Experiment, sink: &Sink) -> Result<(), CliError> {
    let (main, members) = sgd(exp)?;
    sink.write(&main)?;
    if !members.is_empty() {
        let Sink::File(base) = sink else {
            return Err(config_problem("output.per_run: needs output.path or --out"));
        };
        for (j, text) in members.iter().enumerate() {
            write_file(&member_path(base, j), text)?;
        }
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    sgdsim::quantile(&v, 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub d: usize,
    pub risk_gap: f64,
    pub gamma_gap: f64,
}

/// Sup-norm gaps of the candidate against the deterministic reference, one
/// row per dimension. For SGD the gap is that of the median run: the median
/// over runs of each run's own sup gap. The reference is interpolated
/// linearly onto the candidate's times.
pub fn compare_rows(exp: &Experiment) -> Result<Vec<GapRow>, CliError> {
    let dims = exp.compare.dims.clone().unwrap_or_else(|| vec![exp.spectrum.d()]);
    dims.iter()
        .map(|&d| {
            let spectrum = exp.spectrum_at(d)?;
            let reference = solve_deterministic(exp.compare.reference, exp, &spectrum)?;
            let (risk_gap, gamma_gap) = match exp.compare.candidate {
                Solver::Sgd => {
                    let ens = sgdsim::ensemble(&sgd_config(exp, &spectrum), exp.run.n_runs)?;
                    (
                        median(ens.runs.iter().map(|r| r.sup_gap(&reference, Field::Risk)).collect()),
                        median(ens.runs.iter().map(|r| r.sup_gap(&reference, Field::Gamma)).collect()),
                    )
                }
                solver => {
                    let cand = solve_deterministic(solver, exp, &spectrum)?;
                    (cand.sup_gap(&reference, Field::Risk), cand.sup_gap(&reference, Field::Gamma))
                }
            };
            Ok(GapRow { d, risk_gap, gamma_gap })
        })
        .collect()
}

pub fn compare(exp: &Experiment) -> Result<String, CliError> {
    let rows = compare_rows(exp)?;
    let c = &exp.compare;
    let mut out = String::new();
    let _ = writeln!(out, "# candidate={}", c.candidate.name());
    let _ = writeln!(out, "# reference={}", c.reference.name());
    if c.candidate == Solver::Sgd {
        let _ = writeln!(out, "# runs={}", exp.run.n_runs);
    }
    let _ = writeln!(out, "# risk_tol={}", c.risk_tol);
    let _ = writeln!(out, "# gamma_tol={}", c.gamma_tol);
    out.push_str("d,risk_gap,gamma_gap,verdict\n");
    let mut all_pass = true;
    for r in &rows {
        let pass = r.risk_gap <= c.risk_tol && r.gamma_gap <= c.gamma_tol;
        all_pass &= pass;
        let _ = writeln!(out, "{},{},{},{}", r.d, r.risk_gap, r.gamma_gap, if pass { "PASS" } else { "FAIL" });
    }
    if rows.len() > 1 {
        let decreasing = rows.windows(2).all(|w| w[1].risk_gap < w[0].risk_gap && w[1].gamma_gap < w[0].gamma_gap);
        let _ = writeln!(out, "# decreasing_in_d={decreasing}");
    }
    let _ = writeln!(out, "# verdict={}", if all_pass { "PASS" } else { "FAIL" });
    Ok(out)
}

/// Closed-form predictions for the configured experiment, one `key=value`
/// per line; predictions whose hypotheses fail say why instead.
pub fn asymptotics(exp: &Experiment) -> Result<String, CliError> {
    let s = &exp.spectrum;
    let mut out = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("d", &s.d());
    kv("groups", &s.groups().len());
    kv("avg_eig", &s.avg_eig());
    kv("avg_eig2", &s.avg_eig2());
    kv("lambda_min", &s.lambda_min());
    kv("lambda_max", &s.lambda_max());
    let modes = detflow::init_modes(s, &exp.init)?;
    let d2_0: f64 = modes.iter().map(|m| m.weight * m.d2()).sum();
    kv("d2_0", &d2_0);
    let ls = exp.model.kind() == ModelKind::LeastSquares;
    let omega = exp.model.omega();

    if ls && s.lambda_min() > 0.0 {
        let (lo, hi) = line_search_bounds(s.lambda_min(), s.avg_eig2());
        kv("line_search_lower", &lo);
        kv("line_search_upper", &hi);
        let g = s.groups();
        if g.len() == 2 && (g[0].weight - 0.5).abs() < 1e-12 && omega == 0.0 {
            let (l1, l2) = (g[0].lambda.max(g[1].lambda), g[0].lambda.min(g[1].lambda));
            kv("line_search_limit", &line_search_limit(l1, l2)?);
        }
    }
    if ls && omega == 0.0 {
        kv("polyak_rate", &(1.0 / s.avg_eig()));
    }

    if let StepsizeRule::AdagradNorm { b, eta } = exp.rule {
        let gamma0 = eta / b;
        kv("gamma0", &gamma0);
        if ls && omega > 0.0 {
            kv("noisy_asymptote_at_t_end", &noisy_adagrad_asymptote(b, eta, omega, s.avg_eig(), exp.run.t_end));
        }
        if ls && omega == 0.0 {
            match adagrad_limit_bracket(b, eta, s.avg_eig(), d2_0, gamma0) {
                Ok(br) => {
                    kv("adagrad_limit_lower", &br.lower);
                    kv("adagrad_limit_central", &br.central);
                    kv("adagrad_limit_upper", &br.upper);
                    kv("adagrad_limit_printed", &br.printed);
                }
                Err(e) => kv("adagrad_limit", &format!("unavailable ({e})")),
            }
            let zeta = gamma0 * s.avg_eig() / 2.0;
            if zeta > 0.0 && zeta < 1.0 {
                let bound = strongly_convex_lower_bound(1.0, 1.0, s.avg_eig(), eta, b, zeta, d2_0)?;
                kv("strongly_convex_zeta", &zeta);
                kv("strongly_convex_guaranteed", &bound.guaranteed);
                kv("strongly_convex_final", &bound.final_bracket);
            }
        }
        if let (Some(beta), InitSpec::PowerlawResidual { delta }) = (exp.power_law_beta(), &exp.init) {
            if ls && omega == 0.0 {
                match power_law_rates(beta, *delta) {
                    Ok(r) => {
                        kv("power_law_regime", &format!("{:?}", r.regime).to_lowercase());
                        kv("power_law_risk_exponent", &r.risk_exponent);
                        kv("power_law_gamma_exponent", &r.gamma_exponent);
                        kv("power_law_log_corrected", &r.log_corrected);
                        let k = kappa_exponents(beta, *delta)?;
                        kv("kappa1", &k.kappa1);
                        kv("kappa2", &k.kappa2);
                    }
                    Err(e) => kv("power_law_rates", &format!("unavailable ({e})")),
                }
            }
        }
    }
    Ok(out)
}

/// Sets `value` at a dotted path such as `init.star_sq`, creating tables on
/// the way.
pub fn set_dotted(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|p| !p.is_empty()).ok_or_else(|| config_problem("sweep.parameter: empty path"))?;
    let mut node = root;
    for part in parts {
        let table = node
            .as_table_mut()
            .ok_or_else(|| config_problem(&format!("sweep.parameter: `{path}` runs through a non-table value")))?;
        node = table.entry(part).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| config_problem(&format!("sweep.parameter: `{path}` runs through a non-table value")))?
        .insert(last.to_string(), value);
    Ok(())
}

/// Reads a command-line sweep value as the narrowest TOML scalar it spells.
pub fn parse_value(text: &str) -> toml::Value {
    let t = text.trim();
    if let Ok(i) = t.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(x) = t.parse::<f64>() {
        toml::Value::Float(x)
    } else if let Ok(b) = t.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(t.to_string())
    }
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn file_label(v: &toml::Value) -> String {
    value_label(v).chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepCommand {
    Ode,
    Volterra,
    Sgd,
    Compare,
}

impl SweepCommand {
    pub fn parse(name: &str) -> Result<Self, CliError> {
        Ok(match name {
            "ode" => SweepCommand::Ode,
            "volterra" => SweepCommand::Volterra,
            "sgd" => SweepCommand::Sgd,
            "compare" => SweepCommand::Compare,
            other => return Err(config_problem(&format!("sweep.command: unknown command `{other}` (expected ode, volterra, sgd or compare)"))),
        })
    }

    fn run(self, exp: &Experiment) -> Result<String, CliError> {
        match self {
            SweepCommand::Ode => ode(exp),
            SweepCommand::Volterra => volterra(exp),
            SweepCommand::Sgd => sgd(exp).map(|(main, _)| main),
            SweepCommand::Compare => compare(exp),
        }
    }
}

/// Result of a sweep: the file written for each value, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepIndex {
    pub parameter: String,
    pub entries: Vec<(String, PathBuf)>,
}

impl SweepIndex {
    pub fn to_csv(&self) -> String {
        let mut out = format!("# parameter={}\nvalue,file\n", self.parameter);
        for (v, f) in &self.entries {
            let name = f.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            let _ = writeln!(out, "{v},{name}");
        }
        out
    }
}

/// Runs `command` once per value of `parameter`, writing one CSV per value
/// and `index.csv` into `dir`. Every variant is validated before any runs.
pub fn sweep(
    base: &toml::Value,
    parameter: &str,
    values: &[toml::Value],
    command: SweepCommand,
    seed: Option<u64>,
    dir: &Path,
) -> Result<SweepIndex, CliError> {
    let variants = values
        .iter()
        .map(|v| {
            let mut tree = base.clone();
            if let Some(table) = tree.as_table_mut() {
                table.remove("sweep");
            }
            set_dotted(&mut tree, parameter, v.clone())?;
            let mut cfg: ExperimentConfig = tree.try_into().map_err(|e: toml::de::Error| {
                config_problem(&format!("{parameter} = {}: {}", value_label(v), e.message()))
            })?;
            if seed.is_some() {
                cfg.run.seed = seed;
            }
            let exp = cfg.validate().map_err(|e| {
                let problems = e.problems.into_iter().map(|p| format!("{parameter} = {}: {p}", value_label(v))).collect();
                CliError::Config(ConfigError { problems })
            })?;
            Ok((v, exp))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let entries = variants
        .par_iter()
        .enumerate()
        .map(|(i, (v, exp))| {
            let path = dir.join(format!("{i:03}_{}.csv", file_label(v)));
            write_file(&path, &command.run(exp)?)?;
            Ok((value_label(v), path))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let index = SweepIndex { parameter: parameter.to_string(), entries };
    write_file(&dir.join("index.csv"), &index.to_csv())?;
    Ok(index)
}
