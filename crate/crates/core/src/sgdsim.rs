//! Finite-dimensional one-pass SGD on Gaussian data, simulated in the
//! eigenbasis of `K`.
//!
//! In that basis a sample is `a_i = sqrt(lambda_i) z_i` with `z` standard
//! normal, so a step costs `O(d)` and never touches a dense matrix. Runs are
//! reproducible: run `j` of seed `s` draws from `ChaCha8Rng` seeded with `s`
//! on stream `j`, so an ensemble can execute in any order, in parallel.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::detflow::InitSpec;
use crate::riskmodel::{CovB, ModelKind, RiskModel};
use crate::spectrum::Spectrum;
use crate::stepsize::{PopulationInputs, StepsizeRule};
use crate::trajectory::{Field, Record, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub model: RiskModel,
    /// Must expand to exactly `spectrum.d()` eigenvalues.
    pub spectrum: Spectrum,
    pub rule: StepsizeRule,
    pub init: InitSpec,
    pub t_end: f64,
    pub record_every: f64,
    pub seed: u64,
}

impl SgdConfig {
    pub fn d(&self) -> usize {
        self.spectrum.d()
    }

    pub fn steps(&self) -> usize {
        (self.t_end * self.d() as f64 - 1e-9).ceil().max(1.0) as usize
    }

    fn stride(&self) -> usize {
        (self.record_every * self.d() as f64).round().max(1.0) as usize
    }

    /// Steps at which a record is taken.
    pub fn record_steps(&self) -> Vec<usize> {
        let (n, s) = (self.steps(), self.stride());
        (0..=n).filter(|k| k % s == 0 || *k == n).collect()
    }
}

pub fn rng_for(seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    rng
}

/// Initial iterate and target in eigenbasis coordinates.
pub fn init_vectors(init: &InitSpec, lambdas: &[f64], rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = lambdas.len();
    let scale = (d as f64).sqrt().recip();
    let mut gaussian = |sq: f64| -> Vec<f64> {
        let s = sq.sqrt() * scale;
        (0..d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let check = |name: &'static str, v: f64| {
        if v >= 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::param(name, format!("must be finite and non-negative, got {v}")))
        }
    };
    Ok(match *init {
        InitSpec::ZeroStart { star_sq } => (vec![0.0; d], gaussian(check("star_sq", star_sq)?)),
        InitSpec::GaussianBoth { x0_sq, star_sq } => {
            let (x0_sq, star_sq) = (check("x0_sq", x0_sq)?, check("star_sq", star_sq)?);
            let x0 = gaussian(x0_sq);
            (x0, gaussian(star_sq))
        }
        InitSpec::OnesStar => (vec![0.0; d], vec![scale; d]),
        InitSpec::PowerlawResidual { delta } => {
            let delta = check("delta", delta)?;
            if delta > 0.0 && lambdas.iter().any(|&l| l <= 0.0) {
                return Err(Error::param("delta", "a zero eigenvalue has an infinite power-law residual"));
            }
            let star = lambdas
                .iter()
                .enumerate()
                .map(|(i, &l)| if i % 2 == 0 { 1.0 } else { -1.0 } * l.powf(-0.5 * delta) * scale)
                .collect();
            (vec![0.0; d], star)
        }
        InitSpec::Overlaps(_) => {
            return Err(Error::Unsupported("explicit overlaps do not determine finite-d vectors".into()));
        }
    })
}

/// Per-group `(d x0_i^2, d x0_i x*_i, d x*_i^2)` averages: the mode
/// initialization the ODE should use to follow one particular finite-`d` draw.
pub fn overlaps_of(spectrum: &Spectrum, x0: &[f64], xstar: &[f64]) -> Result<InitSpec> {
    let d = spectrum.d();
    if x0.len() != d || xstar.len() != d {
        return Err(Error::param("d", "vector lengths must equal the spectrum dimension"));
    }
    let mut out = Vec::with_capacity(spectrum.groups().len());
    let mut start = 0;
    for g in spectrum.groups() {
        let count = (g.weight * d as f64).round() as usize;
        let range = start..start + count;
        let mut v = CovB::default();
        for i in range {
            v.b11 += x0[i] * x0[i];
            v.b12 += x0[i] * xstar[i];
            v.b22 += xstar[i] * xstar[i];
        }
        let f = d as f64 / count as f64;
        out.push(CovB::new(v.b11 * f, v.b12 * f, v.b22 * f));
        start += count;
    }
    Ok(InitSpec::Overlaps(out))
}

/// One simulated run.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub x: Vec<f64>,
    pub xstar: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub k: usize,
    bk: crate::stepsize::DiscreteState,
    last_gamma: f64,
    converged_at: Option<usize>,
    z: Vec<f64>,
}

impl SgdState {
    pub fn new(x: Vec<f64>, xstar: Vec<f64>, lambdas: Vec<f64>, rule: &StepsizeRule) -> Self {
        let d = lambdas.len();
        SgdState { bk: rule.initial_discrete(d), x, xstar, lambdas, k: 0, last_gamma: 0.0, converged_at: None, z: vec![0.0; d] }
    }

    pub fn d(&self) -> usize {
        self.lambdas.len()
    }

    pub fn b(&self) -> CovB {
        let mut b = CovB::default();
        for ((l, x), s) in self.lambdas.iter().zip(&self.x).zip(&self.xstar) {
            b.b11 += l * x * x;
            b.b12 += l * x * s;
            b.b22 += l * s * s;
        }
        b
    }

    pub fn distance_sq(&self) -> f64 {
        self.x.iter().zip(&self.xstar).map(|(x, s)| (x - s) * (x - s)).sum()
    }

    /// Population risk. For least squares this is
    /// `1/2 sum lambda_i (x_i - x*_i)^2 + omega^2/2`.
    pub fn risk(&self, model: &RiskModel) -> Result<f64> {
        match model.kind() {
            ModelKind::LeastSquares => Ok(0.5
                * self.lambdas.iter().zip(&self.x).zip(&self.xstar).map(|((l, x), s)| l * (x - s) * (x - s)).sum::<f64>()
                + 0.5 * model.omega_sq()),
            ModelKind::Logistic => model.h(&self.b()),
        }
    }

    fn population(&self, model: &RiskModel, spectrum: &Spectrum) -> Result<PopulationInputs> {
        let wl2d2 =
            self.lambdas.iter().zip(&self.x).zip(&self.xstar).map(|((l, x), s)| l * l * (x - s) * (x - s)).sum::<f64>();
        Ok(PopulationInputs {
            risk: self.risk(model)?,
            wl2d2,
            avg_eig: spectrum.avg_eig(),
            avg_eig2: spectrum.avg_eig2(),
            omega_sq: model.omega_sq(),
        })
    }

    /// Draws a sample and computes its learning rate. When `apply` is set the
    /// iterate then takes the step. Returns the rate used.
    pub fn sample_step(
        &mut self,
        model: &RiskModel,
        spectrum: &Spectrum,
        rule: &StepsizeRule,
        rng: &mut impl Rng,
        apply: bool,
    ) -> Result<f64> {
        let (mut r, mut rs, mut norm_sq) = (0.0, 0.0, 0.0);
        for (((z, l), x), s) in self.z.iter_mut().zip(&self.lambdas).zip(&self.x).zip(&self.xstar) {
            *z = rng.sample(StandardNormal);
            let a = l.sqrt() * *z;
            r += a * x;
            rs += a * s;
            norm_sq += l * *z * *z;
        }
        let eps = if model.omega() > 0.0 { model.omega() * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        let fp = model.f_prime(r, rs, eps);
        let pop = match rule {
            StepsizeRule::LineSearch | StepsizeRule::Polyak => self.population(model, spectrum)?,
            _ => PopulationInputs { risk: 0.0, wl2d2: 0.0, avg_eig: 0.0, avg_eig2: 0.0, omega_sq: 0.0 },
        };
        let d = self.d();
        let gamma = match self.converged_at {
            Some(_) => self.last_gamma,
            None => match rule.gamma_discrete(&mut self.bk, fp * fp * norm_sq, &pop, d) {
                Some(g) => g,
                None => {
                    self.converged_at = Some(self.k);
                    self.last_gamma
                }
            },
        };
        self.last_gamma = gamma;
        if apply {
            let c = gamma / self.d() as f64 * fp;
            for ((x, z), l) in self.x.iter_mut().zip(&self.z).zip(&self.lambdas) {
                *x -= c * l.sqrt() * z;
            }
            self.k += 1;
        }
        Ok(gamma)
    }
}

fn check_supported(model: &RiskModel, rule: &StepsizeRule) -> Result<()> {
    if model.kind() == ModelKind::Logistic && matches!(rule, StepsizeRule::LineSearch | StepsizeRule::Polyak) {
        return Err(Error::Unsupported(format!("`{}` is defined for least squares only", rule.name())));
    }
    Ok(())
}

/// One seeded run on stream `run_index`.
pub fn run(cfg: &SgdConfig, run_index: u64) -> Result<Trajectory> {
    check_supported(&cfg.model, &cfg.rule)?;
    if !(cfg.t_end > 0.0) || !(cfg.record_every > 0.0) {
        return Err(Error::param("t_end", "t_end and record_every must be positive"));
    }
    let lambdas = cfg.spectrum.expand()?;
    let mut rng = rng_for(cfg.seed, run_index);
    let (x0, xstar) = init_vectors(&cfg.init, &lambdas, &mut rng)?;
    let mut state = SgdState::new(x0, xstar, lambdas, &cfg.rule);
    let d = cfg.d();
    let steps = cfg.steps();
    let stride = cfg.stride();
    let mut traj = Trajectory::new()
        .with_meta("solver", "sgd")
        .with_meta("model", format!("{:?}", cfg.model.kind()).to_lowercase())
        .with_meta("omega", cfg.model.omega())
        .with_meta("rule", cfg.rule.name())
        .with_meta("d", d)
        .with_meta("seed", cfg.seed)
        .with_meta("run", run_index)
        .with_meta("t_end", cfg.t_end);
    for k in 0..=steps {
        let last = k == steps;
        let record = k % stride == 0 || last;
        let before = if record { Some((state.risk(&cfg.model)?, state.distance_sq(), state.b())) } else { None };
        let gamma = state.sample_step(&cfg.model, &cfg.spectrum, &cfg.rule, &mut rng, !last)?;
        if let Some((risk, d2, b)) = before {
            if !risk.is_finite() {
                return Err(Error::NonFinite { t: k as f64 / d as f64, what: "SGD iterate".into() });
            }
            traj.push(Record { t: k as f64 / d as f64, risk, gamma, d2, b });
        }
    }
    traj.converged_at = state.converged_at.map(|k| k as f64 / d as f64);
    Ok(traj)
}

/// Pointwise median trajectory with 5%/95% bands for the risk and the rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub median: Trajectory,
    pub risk_q05: Vec<f64>,
    pub risk_q95: Vec<f64>,
    pub gamma_q05: Vec<f64>,
    pub gamma_q95: Vec<f64>,
}

impl EnsembleSummary {
    pub fn to_csv(&self) -> String {
        let mut lines = self.median.to_csv().lines().map(str::to_owned).collect::<Vec<_>>();
        let header = lines.iter().position(|l| !l.starts_with('#')).expect("csv has a header");
        lines[header].push_str(",risk_q05,risk_q95,gamma_q05,gamma_q95");
        for (i, line) in lines[header + 1..].iter_mut().enumerate() {
            line.push_str(&format!(
                ",{},{},{},{}",
                self.risk_q05[i], self.risk_q95[i], self.gamma_q05[i], self.gamma_q95[i]
            ));
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub runs: Vec<Trajectory>,
    pub summary: EnsembleSummary,
}

/// Linear-interpolation quantile of a sorted slice.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn ensemble(cfg: &SgdConfig, n_runs: usize) -> Result<Ensemble> {
    if n_runs == 0 {
        return Err(Error::param("n_runs", "need at least one run"));
    }
    let runs = (0..n_runs as u64).into_par_iter().map(|j| run(cfg, j)).collect::<Result<Vec<_>>>()?;
    let summary = summarize(&runs);
    Ok(Ensemble { runs, summary })
}

/// Aggregates runs recorded on a common grid.
pub fn summarize(runs: &[Trajectory]) -> EnsembleSummary {
    let n = runs[0].len();
    let mut median = Trajectory { meta: runs[0].meta.clone(), records: Vec::with_capacity(n), converged_at: None };
    median.meta.retain(|(k, _)| k != "run");
    median.meta.push(("runs".into(), runs.len().to_string()));
    let (mut rq05, mut rq95, mut gq05, mut gq95) = (vec![], vec![], vec![], vec![]);
    let mut buf = Vec::with_capacity(runs.len());
    let column = |i: usize, field: Field, buf: &mut Vec<f64>| {
        buf.clear();
        buf.extend(runs.iter().map(|r| r.records[i].get(field)));
        buf.sort_by(|a, b| a.total_cmp(b));
    };
    for i in 0..n {
        column(i, Field::Risk, &mut buf);
        let risk = quantile(&buf, 0.5);
        rq05.push(quantile(&buf, 0.05));
        rq95.push(quantile(&buf, 0.95));
        column(i, Field::Gamma, &mut buf);
        let gamma = quantile(&buf, 0.5);
        gq05.push(quantile(&buf, 0.05));
        gq95.push(quantile(&buf, 0.95));
        let mut med = |f| {
            column(i, f, &mut buf);
            quantile(&buf, 0.5)
        };
        let d2 = med(Field::D2);
        let b = CovB::new(med(Field::B11), med(Field::B12), med(Field::B22));
        median.records.push(Record { t: runs[0].records[i].t, risk, gamma, d2, b });
    }
    EnsembleSummary { median, risk_q05: rq05, risk_q95: rq95, gamma_q05: gq05, gamma_q95: gq95 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(model: RiskModel, spectrum: Spectrum, rule: StepsizeRule) -> SgdConfig {
        SgdConfig { model, spectrum, rule, init: InitSpec::zero_start(1.0), t_end: 2.0, record_every: 0.5, seed: 11 }
    }

    #[test]
    fn fixed_point_does_not_move() {
        let model = RiskModel::least_squares(0.0).unwrap();
        let s = Spectrum::identity(20).unwrap();
        let rule = StepsizeRule::constant(1.0).unwrap();
        let xs = vec![0.3; 20];
        let mut st = SgdState::new(xs.clone(), xs.clone(), s.expand().unwrap(), &rule);
        let mut rng = rng_for(1, 0);
        for _ in 0..10 {
            st.sample_step(&model, &s, &rule, &mut rng, true).unwrap();
        }
        assert_eq!(st.x, xs);
    }

    #[test]
    fn zero_rate_leaves_iterate() {
        let model = RiskModel::least_squares(1.0).unwrap();
        let s = Spectrum::identity(20).unwrap();
        let rule = StepsizeRule::constant(0.0).unwrap();
        let mut st = SgdState::new(vec![0.0; 20], vec![1.0; 20], s.expand().unwrap(), &rule);
        st.sample_step(&model, &s, &rule, &mut rng_for(1, 0), true).unwrap();
        assert_eq!(st.x, vec![0.0; 20]);
    }

    #[test]
    fn init_vectors_variants() {
        let lambdas = Spectrum::power_law(0.2, 8).unwrap().expand().unwrap();
        let mut rng = rng_for(3, 0);
        let (x0, s) = init_vectors(&InitSpec::OnesStar, &lambdas, &mut rng).unwrap();
        assert!(x0.iter().all(|&x| x == 0.0));
        assert_abs_diff_eq!(s.iter().map(|x| x * x).sum::<f64>(), 1.0, epsilon = 1e-15);
        let (_, s) = init_vectors(&InitSpec::powerlaw_residual(0.0), &lambdas, &mut rng).unwrap();
        assert!(s.iter().all(|x| (8.0 * x * x - 1.0).abs() < 1e-14));
        let (_, s) = init_vectors(&InitSpec::powerlaw_residual(0.7), &lambdas, &mut rng).unwrap();
        for (x, l) in s.iter().zip(&lambdas) {
            assert_abs_diff_eq!(8.0 * x * x, l.powf(-0.7), epsilon = 1e-12 * l.powf(-0.7));
        }
        // E|x*|^2 = 1 for the Gaussian target
        let big = vec![1.0; 20_000];
        let (_, s) = init_vectors(&InitSpec::zero_start(1.0), &big, &mut rng).unwrap();
        assert_abs_diff_eq!(s.iter().map(|x| x * x).sum::<f64>(), 1.0, epsilon = 0.05);
        assert!(init_vectors(&InitSpec::Overlaps(vec![]), &lambdas, &mut rng).is_err());
    }

    #[test]
    fn recorded_risk_is_the_closed_form() {
        let model = RiskModel::least_squares(0.5).unwrap();
        let st = SgdState::new(vec![1.0, 2.0], vec![0.0, 1.0], vec![2.0, 0.5], &StepsizeRule::polyak());
        assert_abs_diff_eq!(st.risk(&model).unwrap(), 0.5 * (2.0 + 0.5) + 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(st.risk(&model).unwrap(), model.h(&st.b()).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn polyak_rate_is_one() {
        let c = cfg(RiskModel::least_squares(0.0).unwrap(), Spectrum::cond(3.0, 50).unwrap(), StepsizeRule::polyak());
        let s = c.spectrum.clone();
        // rescale so that avg_eig = 1
        let groups = s.groups().iter().map(|g| crate::spectrum::Group { lambda: g.lambda / s.avg_eig(), weight: g.weight }).collect();
        let c = SgdConfig { spectrum: Spectrum::from_groups(groups, 50).unwrap(), ..c };
        let traj = run(&c, 0).unwrap();
        assert!(traj.records.iter().all(|r| (r.gamma - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_rate_above_threshold_diverges() {
        let c = SgdConfig {
            t_end: 6.0,
            ..cfg(RiskModel::least_squares(0.0).unwrap(), Spectrum::identity(200).unwrap(), StepsizeRule::constant(2.6).unwrap())
        };
        let traj = run(&c, 0).unwrap();
        assert!(traj.last().risk > 10.0 * traj.first().risk);
    }

    #[test]
    fn seeds_are_deterministic_and_streams_differ() {
        let c = cfg(RiskModel::least_squares(1.0).unwrap(), Spectrum::identity(64).unwrap(), StepsizeRule::adagrad_norm(1.0, 1.0).unwrap());
        let a = run(&c, 0).unwrap();
        assert_eq!(a.to_csv(), run(&c, 0).unwrap().to_csv());
        assert_ne!(a.records, run(&c, 1).unwrap().records);
        assert_eq!(a.times(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn single_run_ensemble_is_degenerate() {
        let c = cfg(RiskModel::least_squares(1.0).unwrap(), Spectrum::identity(32).unwrap(), StepsizeRule::adagrad_norm(1.0, 1.0).unwrap());
        let e = ensemble(&c, 1).unwrap();
        let only = &e.runs[0];
        assert_eq!(e.summary.median.records, only.records);
        assert_eq!(e.summary.risk_q05, only.series(Field::Risk));
        assert_eq!(e.summary.gamma_q95, only.series(Field::Gamma));
        let csv = e.summary.to_csv();
        assert!(csv.contains("t,risk,gamma,d2,b11,b12,b22,risk_q05,risk_q95,gamma_q05,gamma_q95\n"));
        assert_eq!(Trajectory::from_csv(&csv).unwrap().records, only.records);
    }

    #[test]
    fn logistic_rejects_idealized_rules() {
        let c = cfg(RiskModel::logistic(16).unwrap(), Spectrum::identity(8).unwrap(), StepsizeRule::line_search());
        assert!(matches!(run(&c, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn overlaps_average_each_group() {
        let s = Spectrum::two_point(1.0, 0.5, 4).unwrap();
        let x0 = [1.0, 0.0, 0.5, 0.5];
        let xs = [1.0, 1.0, 0.0, 2.0];
        let InitSpec::Overlaps(v) = overlaps_of(&s, &x0, &xs).unwrap() else { panic!() };
        assert_eq!(v[0], CovB::new(2.0, 2.0, 4.0));
        assert_eq!(v[1], CovB::new(1.0, 2.0, 8.0));
    }

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_abs_diff_eq!(quantile(&v, 0.05), 1.2, epsilon = 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn adagrad_rate_never_increases(seed in 0u64..1000, omega in 0.0f64..2.0) {
                let c = SgdConfig {
                    record_every: 1.0 / 40.0,
                    seed,
                    ..cfg(RiskModel::least_squares(omega).unwrap(), Spectrum::power_law(0.3, 40).unwrap(), StepsizeRule::adagrad_norm(0.5, 1.2).unwrap())
                };
                let g = run(&c, 0).unwrap().series(Field::Gamma);
                prop_assert!(g.windows(2).all(|w| w[1] <= w[0]));
            }
        }
    }
}
