//! Deterministic dynamics: the coupled mode ODEs.
//!
//! Every eigenvalue group `i` carries a symmetric 2x2 matrix
//! `V_i = [[v11, v12], [v12, v22]]`, the `d`-scaled projection of
//! `W = [X | X*]` onto the group's eigenvectors. With `grad h(B) = [[H1, H2],
//! [H2, H3]]` and `B = sum_i w_i lambda_i V_i`, the flow is
//!
//! ```text
//! dv11/dt = -4 lambda gamma (H1 v11 + H2 v12) + lambda gamma^2 I(B)
//! dv12/dt = -2 lambda gamma (H1 v12 + H2 v22)
//! dv22/dt = 0
//! ```
//!
//! Rather than `(v11, v12)` the integrator carries the residual
//! `D_i^2 = v11 - 2 v12 + v22` and the gap `u_i = v22 - v12`, in which the
//! same flow reads
//!
//! ```text
//! dD^2/dt = -4 lambda gamma (H1 D^2 - (H1 + H2) u) + lambda gamma^2 I(B)
//! du/dt   =  2 lambda gamma ((H1 + H2) v22 - H1 u)
//! ```
//!
//! Both vanish at the optimum instead of being differences of order-one
//! numbers, and `H1 + H2` is exactly zero for least squares, so risks far
//! below machine epsilon stay accurate.
//!
//! The learning rate `gamma_t` is re-evaluated from the current state at every
//! Runge-Kutta substage, and the rule's own accumulators are integrated as
//! extra components of the same system.

use crate::riskmodel::{CovB, HGrad, ModelKind, RiskModel};
use crate::spectrum::Spectrum;
use crate::stepsize::{RuleInputs, RuleState, StepsizeRule};
use crate::trajectory::{Record, Trajectory};
use crate::{Error, Result};

/// Relative PSD violation above which integration aborts instead of clipping.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Uniform integration grid with a coarser recording stride.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    steps: usize,
    stride: usize,
}

impl TimeGrid {
    /// `t_end / dt` is rounded to the nearest whole number of steps and
    /// `record_every / dt` to the nearest whole stride; the final time is
    /// always recorded.
    pub fn new(t_end: f64, dt: f64, record_every: f64) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::param("t_end", format!("must be positive and finite, got {t_end}")));
        }
        if !(dt > 0.0 && dt <= t_end) {
            return Err(Error::param("dt", format!("must lie in (0, t_end], got {dt}")));
        }
        if !(record_every > 0.0) {
            return Err(Error::param("record_every", format!("must be positive, got {record_every}")));
        }
        let steps = (t_end / dt).round().max(1.0) as usize;
        let stride = (record_every / dt).round().max(1.0) as usize;
        Ok(TimeGrid { t_end, steps, stride })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_end
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn is_recorded(&self, k: usize) -> bool {
        k % self.stride == 0 || k == self.steps
    }

    pub fn recorded_times(&self) -> Vec<f64> {
        (0..=self.steps).filter(|&k| self.is_recorded(k)).map(|k| self.time(k)).collect()
    }
}

/// How `V_i(0)` is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// `X_0 = 0`, isotropic `X*` with `|X*|^2 = star_sq`.
    ZeroStart { star_sq: f64 },
    /// Independent isotropic `X_0`, `X*`.
    GaussianBoth { x0_sq: f64, star_sq: f64 },
    /// `X_0 = 0` and `D_i^2(0) = lambda_i^{-delta}`.
    PowerlawResidual { delta: f64 },
    /// `X_0 = 0`, `X* = 1/sqrt(d)`; in expectation the same as `ZeroStart(1)`.
    OnesStar,
    /// Explicit per-group `(v11, v12, v22)`, in the same order as the spectrum groups.
    Overlaps(Vec<CovB>),
}

impl InitSpec {
    pub fn zero_start(star_sq: f64) -> Self {
        InitSpec::ZeroStart { star_sq }
    }

    pub fn gaussian_both(x0_sq: f64, star_sq: f64) -> Self {
        InitSpec::GaussianBoth { x0_sq, star_sq }
    }

    pub fn powerlaw_residual(delta: f64) -> Self {
        InitSpec::PowerlawResidual { delta }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitSpec::ZeroStart { .. } => "zero_start",
            InitSpec::GaussianBoth { .. } => "gaussian_both",
            InitSpec::PowerlawResidual { .. } => "powerlaw_residual",
            InitSpec::OnesStar => "ones_star",
            InitSpec::Overlaps(_) => "overlaps",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeState {
    pub lambda: f64,
    pub weight: f64,
    pub v22: f64,
    /// `D_i^2 = v11 - 2 v12 + v22`.
    pub dist_sq: f64,
    /// `v22 - v12`.
    pub gap: f64,
}

impl ModeState {
    pub fn from_overlaps(lambda: f64, weight: f64, v11: f64, v12: f64, v22: f64) -> Self {
        ModeState { lambda, weight, v22, dist_sq: v11 - 2.0 * v12 + v22, gap: v22 - v12 }
    }

    pub fn d2(&self) -> f64 {
        self.dist_sq
    }

    pub fn v11(&self) -> f64 {
        self.dist_sq + self.v22 - 2.0 * self.gap
    }

    pub fn v12(&self) -> f64 {
        self.v22 - self.gap
    }

    /// `det V_i = D_i^2 v22 - u_i^2`.
    pub fn det(&self) -> f64 {
        self.dist_sq * self.v22 - self.gap * self.gap
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::param(name, format!("must be finite and non-negative, got {v}")))
    }
}

pub fn init_modes(spectrum: &Spectrum, init: &InitSpec) -> Result<Vec<ModeState>> {
    let groups = spectrum.groups();
    let uniform = |v11: f64, v22: f64| {
        groups
            .iter()
            .map(|g| ModeState::from_overlaps(g.lambda, g.weight, v11, 0.0, v22))
            .collect()
    };
    Ok(match init {
        InitSpec::ZeroStart { star_sq } => uniform(0.0, non_negative("star_sq", *star_sq)?),
        InitSpec::GaussianBoth { x0_sq, star_sq } => {
            uniform(non_negative("x0_sq", *x0_sq)?, non_negative("star_sq", *star_sq)?)
        }
        InitSpec::OnesStar => uniform(0.0, 1.0),
        InitSpec::PowerlawResidual { delta } => {
            let delta = non_negative("delta", *delta)?;
            if delta > 0.0 && spectrum.lambda_min() <= 0.0 {
                return Err(Error::param("delta", "a zero eigenvalue has an infinite power-law residual"));
            }
            groups
                .iter()
                .map(|g| ModeState::from_overlaps(g.lambda, g.weight, 0.0, 0.0, g.lambda.powf(-delta)))
                .collect()
        }
        InitSpec::Overlaps(v) => {
            if v.len() != groups.len() {
                return Err(Error::param(
                    "overlaps",
                    format!("{} entries for {} eigenvalue groups", v.len(), groups.len()),
                ));
            }
            groups
                .iter()
                .zip(v)
                .map(|(g, b)| {
                    if !b.is_psd() {
                        return Err(Error::NotPsd { b11: b.b11, b12: b.b12, b22: b.b22 });
                    }
                    Ok(ModeState::from_overlaps(g.lambda, g.weight, b.b11, b.b12, b.b22))
                })
                .collect::<Result<_>>()?
        }
    })
}

/// `(dD_i^2, du_i)` for one mode.
pub fn mode_derivative(mode: &ModeState, gamma: f64, grad: &HGrad, fisher: f64) -> (f64, f64) {
    let lg = mode.lambda * gamma;
    let (h1, h2) = (grad.h1, grad.h2);
    (
        -4.0 * lg * (h1 * mode.dist_sq - (h1 + h2) * mode.gap) + lg * gamma * fisher,
        2.0 * lg * ((h1 + h2) * mode.v22 - h1 * mode.gap),
    )
}

/// Everything the flow and the rules read off the mode matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub b: CovB,
    pub n: CovB,
    pub risk: f64,
    pub fisher: f64,
    pub d2: f64,
    pub wl2d2: f64,
    pub gamma: f64,
    pub grad: HGrad,
}

/// Sums over the modes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub b: CovB,
    pub n: CovB,
    /// `sum w lambda D_i^2`, equal to `b11 - 2 b12 + b22` but without cancellation.
    pub residual: f64,
    pub d2: f64,
    pub wl2d2: f64,
}

pub fn aggregate(modes: &[ModeState]) -> Aggregate {
    let mut a = Aggregate::default();
    for m in modes {
        let wl = m.weight * m.lambda;
        let (v11, v12) = (m.v11(), m.v12());
        a.b.b11 += wl * v11;
        a.b.b12 += wl * v12;
        a.b.b22 += wl * m.v22;
        a.n.b11 += m.weight * v11;
        a.n.b12 += m.weight * v12;
        a.n.b22 += m.weight * m.v22;
        a.residual += wl * m.dist_sq;
        a.d2 += m.weight * m.dist_sq;
        a.wl2d2 += wl * m.lambda * m.dist_sq;
    }
    a
}

/// Rule inputs and learning rate at one state; `frozen` holds the last rate
/// once an idealized rule has seen the risk underflow.
struct Evaluator<'a> {
    model: &'a RiskModel,
    rule: &'a StepsizeRule,
    avg_eig: f64,
    avg_eig2: f64,
    frozen: Option<f64>,
    last_gamma: f64,
}

impl Evaluator<'_> {
    fn observe(&mut self, modes: &[ModeState], rule_state: &RuleState, t: f64) -> Result<(Observables, RuleInputs)> {
        let Aggregate { b, n, residual, d2, wl2d2 } = aggregate(modes);
        let eval = self.model.evaluate(&b, residual)?;
        let (risk, fisher, grad) = (eval.h, eval.fisher, eval.grad);
        let inputs = RuleInputs {
            risk,
            fisher,
            wl2d2,
            avg_eig: self.avg_eig,
            avg_eig2: self.avg_eig2,
            omega_sq: self.model.omega_sq(),
        };
        let gamma = match self.frozen {
            Some(g) => g,
            None => match self.rule.gamma_det(rule_state, &inputs)? {
                Some(g) => g,
                None => {
                    self.frozen = Some(self.last_gamma);
                    self.last_gamma
                }
            },
        };
        if !gamma.is_finite() || !risk.is_finite() {
            return Err(Error::NonFinite { t, what: format!("risk {risk}, gamma {gamma}") });
        }
        self.last_gamma = gamma;
        Ok((Observables { b, n, risk, fisher, d2, wl2d2, gamma, grad }, inputs))
    }
}

fn derivative(modes: &[ModeState], obs: &Observables, out: &mut [(f64, f64)]) {
    for (m, o) in modes.iter().zip(out.iter_mut()) {
        *o = mode_derivative(m, obs.gamma, &obs.grad, obs.fisher);
    }
}

fn shifted(base: &[ModeState], k: &[(f64, f64)], h: f64, out: &mut [ModeState]) {
    for ((o, m), d) in out.iter_mut().zip(base).zip(k) {
        *o = ModeState { dist_sq: m.dist_sq + h * d.0, gap: m.gap + h * d.1, ..*m };
    }
}

fn enforce_psd(modes: &mut [ModeState], t: f64) -> Result<()> {
    for (index, m) in modes.iter_mut().enumerate() {
        if !(m.dist_sq.is_finite() && m.gap.is_finite()) {
            return Err(Error::NonFinite { t, what: format!("mode {index} (lambda = {})", m.lambda) });
        }
        // With v22 fixed, PSD reads u^2 <= D^2 v22 (which forces D^2 >= 0);
        // the gap is relative to the magnitudes in play, however small.
        let deficit = m.det();
        if deficit >= 0.0 && m.dist_sq >= 0.0 {
            continue;
        }
        let scale = (m.dist_sq.abs() * m.v22).max(m.gap * m.gap).max(m.dist_sq * m.dist_sq);
        if -deficit.min(0.0) > PSD_TOLERANCE * scale && -m.dist_sq.min(0.0) > PSD_TOLERANCE * m.v22.max(m.gap.abs()) {
            return Err(Error::PsdBreach { index, lambda: m.lambda, t, deficit });
        }
        m.dist_sq = if m.v22 > 0.0 { m.dist_sq.max(m.gap * m.gap / m.v22) } else { m.dist_sq.max(0.0) };
    }
    Ok(())
}

fn record(t: f64, obs: &Observables) -> Record {
    Record { t, risk: obs.risk, gamma: obs.gamma, d2: obs.d2, b: obs.b }
}

/// Integrates the mode ODEs with classical fixed-step RK4.
pub fn solve(
    model: &RiskModel,
    spectrum: &Spectrum,
    rule: &StepsizeRule,
    init: &InitSpec,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let modes = init_modes(spectrum, init)?;
    solve_modes(model, spectrum, rule, modes, grid).map(|(traj, _)| traj)
}

/// As [`solve`], starting from given mode matrices, and also returning the
/// final modes.
pub fn solve_modes(
    model: &RiskModel,
    spectrum: &Spectrum,
    rule: &StepsizeRule,
    mut modes: Vec<ModeState>,
    grid: &TimeGrid,
) -> Result<(Trajectory, Vec<ModeState>)> {
    if model.kind() == ModelKind::Logistic && matches!(rule, StepsizeRule::LineSearch | StepsizeRule::Polyak) {
        return Err(Error::Unsupported(format!("`{}` is defined for least squares only", rule.name())));
    }
    let mut traj = Trajectory::new()
        .with_meta("solver", "detflow")
        .with_meta("model", format!("{:?}", model.kind()).to_lowercase())
        .with_meta("omega", model.omega())
        .with_meta("rule", rule.name())
        .with_meta("d", spectrum.d())
        .with_meta("groups", spectrum.groups().len())
        .with_meta("dt", grid.dt())
        .with_meta("t_end", grid.t_end());
    let mut eval = Evaluator {
        model,
        rule,
        avg_eig: spectrum.avg_eig(),
        avg_eig2: spectrum.avg_eig2(),
        frozen: None,
        last_gamma: 0.0,
    };
    let n = modes.len();
    let h = grid.dt();
    let mut rs = rule.initial_state();
    let mut stage = modes.clone();
    let mut k = [vec![(0.0, 0.0); n], vec![(0.0, 0.0); n], vec![(0.0, 0.0); n], vec![(0.0, 0.0); n]];
    let mut kr = [RuleState::default(); 4];

    enforce_psd(&mut modes, 0.0)?;
    for step in 0..=grid.steps() {
        let t = grid.time(step);
        let (obs, inputs) = eval.observe(&modes, &rs, t)?;
        if eval.frozen.is_some() && traj.converged_at.is_none() {
            traj.converged_at = Some(t);
        }
        if grid.is_recorded(step) {
            traj.push(record(t, &obs));
        }
        if step == grid.steps() {
            break;
        }
        derivative(&modes, &obs, &mut k[0]);
        kr[0] = rule.state_derivative(&rs, &inputs);
        for s in 1..4 {
            let frac = if s == 3 { 1.0 } else { 0.5 };
            shifted(&modes, &k[s - 1], frac * h, &mut stage);
            let rs_stage = rs.axpy(frac * h, &kr[s - 1]);
            let (obs, inputs) = eval.observe(&stage, &rs_stage, t + frac * h)?;
            derivative(&stage, &obs, &mut k[s]);
            kr[s] = rule.state_derivative(&rs_stage, &inputs);
        }
        for (i, m) in modes.iter_mut().enumerate() {
            m.dist_sq += h / 6.0 * (k[0][i].0 + 2.0 * k[1][i].0 + 2.0 * k[2][i].0 + k[3][i].0);
            m.gap += h / 6.0 * (k[0][i].1 + 2.0 * k[1][i].1 + 2.0 * k[2][i].1 + k[3][i].1);
        }
        rs.acc_i += h / 6.0 * (kr[0].acc_i + 2.0 * kr[1].acc_i + 2.0 * kr[2].acc_i + kr[3].acc_i);
        rs.ema += h / 6.0 * (kr[0].ema + 2.0 * kr[1].ema + 2.0 * kr[2].ema + kr[3].ema);
        enforce_psd(&mut modes, grid.time(step + 1))?;
    }
    Ok((traj, modes))
}

/// The closed scalar flow of noiseless AdaGrad-Norm on identity covariance:
/// with `Q = int_0^t R`,
/// `dR/dt = eta^2 R / (b^2 + 2Q) - 2 eta R / sqrt(b^2 + 2Q)`.
///
/// Only the risk, the rate and `D^2 = 2R` are known here; the `B` columns are
/// NaN.
pub fn scalar_identity_risk(b: f64, eta: f64, r0: f64, grid: &TimeGrid) -> Result<Trajectory> {
    if !(b > 0.0 && eta > 0.0) {
        return Err(Error::param("b, eta", "must be positive"));
    }
    non_negative("r0", r0)?;
    let gamma = |q: f64| eta / (b * b + 2.0 * q).sqrt();
    let f = |r: f64, q: f64| {
        let g = gamma(q);
        ((g * g - 2.0 * g) * r, r)
    };
    let mut traj = Trajectory::new()
        .with_meta("solver", "scalar_identity")
        .with_meta("dt", grid.dt())
        .with_meta("t_end", grid.t_end());
    let (mut r, mut q) = (r0, 0.0);
    let h = grid.dt();
    let nan = f64::NAN;
    for step in 0..=grid.steps() {
        if grid.is_recorded(step) {
            traj.push(Record { t: grid.time(step), risk: r, gamma: gamma(q), d2: 2.0 * r, b: CovB::new(nan, nan, nan) });
        }
        if step == grid.steps() {
            break;
        }
        let k1 = f(r, q);
        let k2 = f(r + 0.5 * h * k1.0, q + 0.5 * h * k1.1);
        let k3 = f(r + 0.5 * h * k2.0, q + 0.5 * h * k2.1);
        let k4 = f(r + h * k3.0, q + h * k3.1);
        r += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        q += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        if !r.is_finite() {
            return Err(Error::NonFinite { t: grid.time(step + 1), what: "scalar risk".into() });
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Field;
    use approx::assert_abs_diff_eq;

    fn ls(omega: f64) -> RiskModel {
        RiskModel::least_squares(omega).unwrap()
    }

    #[test]
    fn grid_rounding_and_recording() {
        let g = TimeGrid::new(1.0, 0.1, 0.2).unwrap();
        assert_eq!(g.steps(), 10);
        assert_eq!(g.recorded_times(), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert!(TimeGrid::new(0.0, 0.1, 0.1).is_err());
        assert!(TimeGrid::new(1.0, -0.1, 0.1).is_err());
    }

    #[test]
    fn init_variants() {
        let s = Spectrum::two_point(1.0, 0.25, 4).unwrap();
        let m = init_modes(&s, &InitSpec::zero_start(1.0)).unwrap();
        assert!(m.iter().all(|m| (m.v11(), m.v12(), m.v22) == (0.0, 0.0, 1.0)));
        let m = init_modes(&s, &InitSpec::gaussian_both(1.0, 1.0)).unwrap();
        assert!(m.iter().all(|m| (m.v11(), m.v12(), m.v22) == (1.0, 0.0, 1.0)));
        let m = init_modes(&s, &InitSpec::powerlaw_residual(0.0)).unwrap();
        assert!(m.iter().all(|m| m.v22 == 1.0));
        let m = init_modes(&s, &InitSpec::powerlaw_residual(1.0)).unwrap();
        assert_eq!(m[1].v22, 4.0);
        assert!(init_modes(&s, &InitSpec::zero_start(-1.0)).is_err());
        assert!(init_modes(&s, &InitSpec::Overlaps(vec![CovB::default()])).is_err());
    }

    #[test]
    fn zero_start_initial_risk() {
        let s = Spectrum::two_point(1.0, 0.5, 4).unwrap();
        let grid = TimeGrid::new(0.01, 0.01, 0.01).unwrap();
        let r = StepsizeRule::constant(0.0).unwrap();
        let traj = solve(&ls(0.5), &s, &r, &InitSpec::zero_start(1.0), &grid).unwrap();
        assert_abs_diff_eq!(traj.first().risk, 0.5 * 0.75 + 0.5 * 0.25, epsilon = 1e-15);
    }

    #[test]
    fn mode_derivative_least_squares_form() {
        let m = ModeState::from_overlaps(0.7, 1.0, 0.9, 0.3, 1.2);
        let (g, i) = (0.4, 1.1);
        let lsq = HGrad { h1: 0.5, h2: -0.5, h3: 0.5 };
        let (dd, du) = mode_derivative(&m, g, &lsq, i);
        // dD^2 = -2 gamma lambda D^2 + 2 gamma^2 lambda R with I = 2R
        assert_abs_diff_eq!(dd, -2.0 * g * 0.7 * m.d2() + g * g * 0.7 * i, epsilon = 1e-15);
        assert_abs_diff_eq!(du, -0.7 * g * m.gap, epsilon = 1e-15);
        assert_eq!(mode_derivative(&m, 0.0, &lsq, i), (0.0, 0.0));
    }

    #[test]
    fn residual_form_matches_overlap_form() {
        // dv11 = -4 lg (H1 v11 + H2 v12) + lg gamma I, dv12 = -2 lg (H1 v12 + H2 v22)
        let m = ModeState::from_overlaps(1.3, 0.5, 0.8, -0.2, 0.6);
        let grad = HGrad { h1: 0.21, h2: -0.07, h3: 0.3 };
        let (g, i) = (0.9, 0.4);
        let lg = m.lambda * g;
        let d11 = -4.0 * lg * (grad.h1 * m.v11() + grad.h2 * m.v12()) + lg * g * i;
        let d12 = -2.0 * lg * (grad.h1 * m.v12() + grad.h2 * m.v22);
        let (dd, du) = mode_derivative(&m, g, &grad, i);
        assert_abs_diff_eq!(dd, d11 - 2.0 * d12, epsilon = 1e-14);
        assert_abs_diff_eq!(du, -d12, epsilon = 1e-14);
    }

    #[test]
    fn polyak_identity_decays_as_half_exp() {
        let s = Spectrum::identity(100).unwrap();
        let grid = TimeGrid::new(5.0, 1e-3, 0.1).unwrap();
        let traj = solve(&ls(0.0), &s, &StepsizeRule::polyak(), &InitSpec::zero_start(1.0), &grid).unwrap();
        for r in &traj.records {
            assert_abs_diff_eq!(r.gamma, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(r.risk, 0.5 * (-r.t).exp(), epsilon = 1e-8);
        }
    }

    #[test]
    fn constant_rate_above_threshold_increases_risk() {
        let s = Spectrum::two_point(1.0, 0.5, 4).unwrap();
        let grid = TimeGrid::new(3.0, 1e-3, 0.5).unwrap();
        let rule = StepsizeRule::constant(2.2 / s.avg_eig()).unwrap();
        let traj = solve(&ls(0.0), &s, &rule, &InitSpec::zero_start(1.0), &grid).unwrap();
        let late = traj.series(Field::Risk);
        assert!(late.last().unwrap() > &late[late.len() - 2]);
    }

    #[test]
    fn frozen_dynamics_when_gamma_is_zero() {
        let s = Spectrum::power_law(0.3, 10).unwrap();
        let grid = TimeGrid::new(1.0, 0.01, 0.1).unwrap();
        let first = solve(&ls(0.3), &s, &StepsizeRule::constant(0.0).unwrap(), &InitSpec::gaussian_both(0.5, 1.0), &grid).unwrap();
        for r in &first.records {
            assert_eq!(r.risk, first.first().risk);
            assert_eq!(r.b, first.first().b);
        }
    }

    #[test]
    fn scalar_flow_fixed_point_and_initial_sign() {
        let grid = TimeGrid::new(1.0, 1e-3, 0.5).unwrap();
        let z = scalar_identity_risk(1.0, 1.0, 0.0, &grid).unwrap();
        assert!(z.records.iter().all(|r| r.risk == 0.0));
        let grid = TimeGrid::new(0.01, 1e-3, 0.01).unwrap();
        let up = scalar_identity_risk(1.0, 2.5, 1.0, &grid).unwrap();
        assert!(up.last().risk > 1.0);
        let down = scalar_identity_risk(1.0, 1.5, 1.0, &grid).unwrap();
        assert!(down.last().risk < 1.0);
    }

    #[test]
    fn scalar_flow_matches_mode_flow_on_identity() {
        let grid = TimeGrid::new(5.0, 1e-3, 0.05).unwrap();
        let s = Spectrum::identity(1).unwrap();
        let rule = StepsizeRule::adagrad_norm(1.0, 1.3).unwrap();
        let full = solve(&ls(0.0), &s, &rule, &InitSpec::zero_start(1.0), &grid).unwrap();
        let scalar = scalar_identity_risk(1.0, 1.3, 0.5, &grid).unwrap();
        assert!(full.sup_gap(&scalar, Field::Risk) < 1e-6);
        assert!(full.sup_gap(&scalar, Field::Gamma) < 1e-6);
    }

    #[test]
    fn line_search_risk_is_monotone() {
        let s = Spectrum::cond(3.0, 50).unwrap();
        let grid = TimeGrid::new(20.0, 1e-2, 0.5).unwrap();
        let traj = solve(&ls(0.0), &s, &StepsizeRule::line_search(), &InitSpec::zero_start(1.0), &grid).unwrap();
        let risk = traj.series(Field::Risk);
        assert!(risk.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn noisy_risk_stays_above_floor() {
        let s = Spectrum::power_law(0.4, 20).unwrap();
        let grid = TimeGrid::new(30.0, 1e-2, 0.5).unwrap();
        for rule in [
            StepsizeRule::adagrad_norm(1.0, 1.0).unwrap(),
            StepsizeRule::polyak(),
            StepsizeRule::line_search(),
            StepsizeRule::rmsprop_norm(1.0, 0.5, 0.2).unwrap(),
        ] {
            let traj = solve(&ls(0.7), &s, &rule, &InitSpec::zero_start(1.0), &grid).unwrap();
            assert!(traj.records.iter().all(|r| r.risk >= 0.5 * 0.49 - 1e-12), "{}", rule.name());
        }
    }
}
