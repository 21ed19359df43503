//! The least-squares risk as a convolution Volterra equation.
//!
//! For least squares the mode ODEs collapse to a scalar integral equation in
//! the accumulated learning rate `Gamma(t) = int_0^t gamma_s ds`:
//!
//! ```text
//! R(t) = F(Gamma(t)) + omega^2/2 + int_0^t gamma_s^2 K(Gamma(t) - Gamma(s)) R(s) ds
//! F(x) = 1/2 sum_i w_i lambda_i D_i^2(0) e^{-2 lambda_i x}
//! K(x) = sum_i w_i lambda_i^2 e^{-2 lambda_i x}
//! ```
//!
//! This module solves it on a uniform grid as an independent check on the ODE
//! integrator, and evaluates the closed-form lower/upper envelopes that bound
//! the noiseless solution for a constant learning rate.

use crate::detflow::{init_modes, InitSpec, ModeState, TimeGrid};
use crate::riskmodel::CovB;
use crate::spectrum::Spectrum;
use crate::stepsize::StepsizeRule;
use crate::trajectory::{Record, Trajectory};
use crate::{Error, Result};

const CORRECTOR_PASSES: usize = 12;

/// The forcing `F` and memory kernel `K` of one problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair {
    modes: Vec<ModeState>,
    omega: f64,
}

impl KernelPair {
    pub fn new(spectrum: &Spectrum, init: &InitSpec, omega: f64) -> Result<Self> {
        Self::from_modes(init_modes(spectrum, init)?, omega)
    }

    pub fn from_modes(modes: Vec<ModeState>, omega: f64) -> Result<Self> {
        if !(omega >= 0.0 && omega.is_finite()) {
            return Err(Error::param("omega", "label noise must be finite and non-negative"));
        }
        if modes.is_empty() {
            return Err(Error::param("modes", "at least one eigenvalue group is required"));
        }
        Ok(KernelPair { modes, omega })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn modes(&self) -> &[ModeState] {
        &self.modes
    }

    pub fn forcing(&self, x: f64) -> f64 {
        0.5 * self.modes.iter().map(|m| m.weight * m.lambda * m.d2() * (-2.0 * m.lambda * x).exp()).sum::<f64>()
    }

    pub fn kernel(&self, x: f64) -> f64 {
        self.modes.iter().map(|m| m.weight * m.lambda * m.lambda * (-2.0 * m.lambda * x).exp()).sum()
    }

    /// `(F(x), K(x))`.
    pub fn kernels(&self, x: f64) -> (f64, f64) {
        (self.forcing(x), self.kernel(x))
    }

    /// `int_0^inf K = avg_eig / 2`.
    pub fn kernel_l1(&self) -> f64 {
        0.5 * self.modes.iter().map(|m| m.weight * m.lambda).sum::<f64>()
    }

    /// `int_0^inf F`, over the groups that actually decay.
    pub fn forcing_l1(&self) -> f64 {
        0.25 * self.modes.iter().filter(|m| m.lambda > 0.0).map(|m| m.weight * m.d2()).sum::<f64>()
    }

    /// `(K * K)(x) = int_0^x K(s) K(x - s) ds`, in closed form.
    pub fn kernel_self_convolution(&self, x: f64) -> f64 {
        let mut total = 0.0;
        for a in &self.modes {
            let ca = a.weight * a.lambda * a.lambda;
            for b in &self.modes {
                total += ca * b.weight * b.lambda * b.lambda * exp_convolution(a.lambda, b.lambda, x);
            }
        }
        total
    }

    /// `(K * F)(x) = int_0^x K(x - u) F(u) du`, in closed form.
    pub fn kernel_forcing_convolution(&self, x: f64) -> f64 {
        let mut total = 0.0;
        for a in &self.modes {
            let ca = a.weight * a.lambda * a.lambda;
            for b in &self.modes {
                total += ca * 0.5 * b.weight * b.lambda * b.d2() * exp_convolution(a.lambda, b.lambda, x);
            }
        }
        total
    }
}

/// `int_0^x e^{-2a(x-u)} e^{-2bu} du`, stable when `a` and `b` are close.
fn exp_convolution(a: f64, b: f64, x: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let gap = hi - lo;
    let decay = (-2.0 * lo * x).exp();
    if gap * x == 0.0 {
        x * decay
    } else {
        decay * -(-2.0 * gap * x).exp_m1() / (2.0 * gap)
    }
}

/// Marches the Volterra equation on `grid`.
///
/// The memory integral uses the trapezoid rule. Because the kernel is a sum of
/// exponentials, the history sum is carried as one running accumulator per
/// eigenvalue group, rescaled by `e^{-2 lambda dGamma}` each step; this is the
/// same quadrature as summing the full history. The implicit same-step term is
/// solved exactly; for AdaGrad the dependence of `gamma_t` on `R(t)` is
/// resolved with predictor-corrector passes.
///
/// Alongside the risk, the per-group `D_i^2` and the off-diagonal overlaps
/// are reconstructed so that records carry `d2` and `B` like the ODE solver's.
pub fn solve_volterra(kp: &KernelPair, rule: &StepsizeRule, grid: &TimeGrid) -> Result<Trajectory> {
    if !rule.is_risk_integral_rule() {
        return Err(Error::Unsupported(format!(
            "the Volterra solver needs a learning rate driven by the risk integral; `{}` is not",
            rule.name()
        )));
    }
    let modes = &kp.modes;
    let avg_eig = 2.0 * kp.kernel_l1();
    let k0 = kp.kernel(0.0);
    let floor = 0.5 * kp.omega * kp.omega;
    let h = grid.dt();
    // gamma as a function of Q = int_0^t R
    let gamma_of = |q: f64| -> f64 {
        match *rule {
            StepsizeRule::Constant { gamma0 } => gamma0,
            StepsizeRule::AdagradNorm { b, eta } => eta / (b * b + 2.0 * avg_eig * q).sqrt(),
            _ => unreachable!("checked above"),
        }
    };

    let mut traj = Trajectory::new()
        .with_meta("solver", "volterra")
        .with_meta("model", "leastsquares")
        .with_meta("omega", kp.omega)
        .with_meta("rule", rule.name())
        .with_meta("groups", modes.len())
        .with_meta("dt", h)
        .with_meta("t_end", grid.t_end());

    let mut acc = vec![0.0; modes.len()];
    let (mut big_gamma, mut q) = (0.0, 0.0);
    let mut risk = kp.forcing(0.0) + floor;
    let mut gamma = gamma_of(0.0);

    let emit = |traj: &mut Trajectory, t: f64, risk: f64, gamma: f64, big_gamma: f64, acc: &[f64]| {
        let mut b = CovB::default();
        let mut d2 = 0.0;
        for (m, a) in modes.iter().zip(acc) {
            let di = m.d2() * (-2.0 * m.lambda * big_gamma).exp() + 2.0 * m.lambda * h * (a + 0.5 * gamma * gamma * risk);
            let v12 = m.v22 - m.gap * (-m.lambda * big_gamma).exp();
            let v11 = di + 2.0 * v12 - m.v22;
            let wl = m.weight * m.lambda;
            b.b11 += wl * v11;
            b.b12 += wl * v12;
            b.b22 += wl * m.v22;
            d2 += m.weight * di;
        }
        traj.push(Record { t, risk, gamma, d2, b });
    };

    emit_initial(&mut traj, modes, risk, gamma);
    for step in 1..=grid.steps() {
        let t = grid.time(step);
        let c_prev = if step == 1 { 0.5 } else { 1.0 };
        let carry = c_prev * gamma * gamma * risk;
        let mut guess = gamma;
        let mut last_residual = f64::INFINITY;
        let mut new_risk = risk;
        let mut converged = false;
        for _ in 0..CORRECTOR_PASSES {
            let g_next = big_gamma + 0.5 * h * (gamma + guess);
            let d_gamma = g_next - big_gamma;
            let mut memory = 0.0;
            for (m, a) in modes.iter().zip(&acc) {
                memory += m.weight * m.lambda * m.lambda * (-2.0 * m.lambda * d_gamma).exp() * (a + carry);
            }
            let denom = 1.0 - 0.5 * h * guess * guess * k0;
            if denom <= 0.0 {
                return Err(Error::CorrectorDiverged { t, residual: f64::INFINITY });
            }
            new_risk = (kp.forcing(g_next) + floor + h * memory) / denom;
            let next = gamma_of(q + 0.5 * h * (risk + new_risk));
            let residual = (next - guess).abs();
            if !new_risk.is_finite() {
                return Err(Error::NonFinite { t, what: format!("volterra risk {new_risk}") });
            }
            if residual <= 1e-15 * next.abs().max(1e-300) {
                guess = next;
                converged = true;
                break;
            }
            if residual > last_residual {
                return Err(Error::CorrectorDiverged { t, residual });
            }
            last_residual = residual;
            guess = next;
        }
        if !converged && last_residual > 1e-10 * guess.abs() {
            return Err(Error::CorrectorDiverged { t, residual: last_residual });
        }
        // recompute with the settled rate so that every stored quantity is consistent
        let g_next = big_gamma + 0.5 * h * (gamma + guess);
        let d_gamma = g_next - big_gamma;
        let mut memory = 0.0;
        for (m, a) in modes.iter().zip(acc.iter_mut()) {
            *a = (-2.0 * m.lambda * d_gamma).exp() * (*a + carry);
            memory += m.weight * m.lambda * m.lambda * *a;
        }
        let denom = 1.0 - 0.5 * h * guess * guess * k0;
        let settled = (kp.forcing(g_next) + floor + h * memory) / denom;
        debug_assert!((settled - new_risk).abs() <= 1e-8 * settled.abs().max(1.0));
        q += 0.5 * h * (risk + settled);
        risk = settled;
        gamma = guess;
        big_gamma = g_next;
        if grid.is_recorded(step) {
            emit(&mut traj, t, risk, gamma, big_gamma, &acc);
        }
    }
    Ok(traj)
}

fn emit_initial(traj: &mut Trajectory, modes: &[ModeState], risk: f64, gamma: f64) {
    let mut b = CovB::default();
    let mut d2 = 0.0;
    for m in modes {
        let wl = m.weight * m.lambda;
        b.b11 += wl * m.v11();
        b.b12 += wl * m.v12();
        b.b22 += wl * m.v22;
        d2 += m.weight * m.d2();
    }
    traj.push(Record { t: 0.0, risk, gamma, d2, b });
}

/// The constant of the upper envelope and the `(epsilon, T)` it was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeConstant {
    pub epsilon: f64,
    /// Threshold in accumulated-rate units `Gamma`.
    pub threshold: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelopes {
    pub times: Vec<f64>,
    pub lower: Vec<f64>,
    /// `None` when no `(epsilon, T)` satisfies the contraction condition.
    pub upper: Option<Vec<f64>>,
    pub constant: Option<EnvelopeConstant>,
}

/// Lower and upper envelopes of the noiseless risk under a constant rate
/// `gamma0`:
///
/// ```text
/// lower(t) = F(Gamma) + int_0^t gamma0^2 K(Gamma(t) - Gamma(s)) F(Gamma(s)) ds
/// upper(t) = F(Gamma) + C * (same integral)
/// C = (K(0) / (K(T) (2 eps + 1)) + 2) / (1 - 2 gamma0 |K|_1 (1 + eps))
/// ```
///
/// where `(K * K)(x) <= 2 (1 + eps) |K|_1 K(x)` must hold for `x >= T`. For a
/// finite spectrum `(K * K)/K` grows without bound, so the condition is
/// checked on the horizon `[T, Gamma(t_end)]` actually covered, which is all
/// the bound needs. `T` is scanned to make `C` as small as possible.
pub fn lower_upper_envelopes(kp: &KernelPair, gamma0: f64, grid: &TimeGrid) -> Result<Envelopes> {
    if kp.omega != 0.0 {
        return Err(Error::Unsupported("envelopes are defined for the noiseless equation only".into()));
    }
    if !(gamma0 > 0.0 && gamma0.is_finite()) {
        return Err(Error::param("gamma0", format!("must be positive, got {gamma0}")));
    }
    let times = grid.recorded_times();
    let lower_integral: Vec<f64> = times.iter().map(|&t| gamma0 * kp.kernel_forcing_convolution(gamma0 * t)).collect();
    let lower = times.iter().zip(&lower_integral).map(|(&t, i)| kp.forcing(gamma0 * t) + i).collect();

    let constant = envelope_constant(kp, gamma0, gamma0 * grid.t_end());
    let upper = constant.map(|c| {
        times.iter().zip(&lower_integral).map(|(&t, i)| kp.forcing(gamma0 * t) + c.c * i).collect()
    });
    Ok(Envelopes { times, lower, upper, constant })
}

fn envelope_constant(kp: &KernelPair, gamma0: f64, horizon: f64) -> Option<EnvelopeConstant> {
    const SAMPLES: usize = 2000;
    let l1 = kp.kernel_l1();
    let k0 = kp.kernel(0.0);
    // ratio (K*K)/(2|K|_1 K) - 1 on a grid, mixing linear and log spacing so
    // both the origin and the tail are resolved
    let mut xs: Vec<f64> = (0..=SAMPLES).map(|i| horizon * i as f64 / SAMPLES as f64).collect();
    if horizon > 0.0 {
        let lo = (horizon * 1e-6).ln();
        xs.extend((0..=SAMPLES).map(|i| (lo + (horizon.ln() - lo) * i as f64 / SAMPLES as f64).exp()));
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.dedup();
    let excess: Vec<f64> = xs
        .iter()
        .map(|&x| kp.kernel_self_convolution(x) / (2.0 * l1 * kp.kernel(x)) - 1.0)
        .collect();
    let mut best: Option<EnvelopeConstant> = None;
    let mut tail_max = f64::NEG_INFINITY;
    for i in (0..xs.len()).rev() {
        tail_max = tail_max.max(excess[i]);
        let epsilon = tail_max.max(0.0);
        let q = 2.0 * gamma0 * l1 * (1.0 + epsilon);
        if q >= 1.0 {
            continue;
        }
        let c = (k0 / (kp.kernel(xs[i]) * (2.0 * epsilon + 1.0)) + 2.0) / (1.0 - q);
        if best.map_or(true, |b| c < b.c) {
            best = Some(EnvelopeConstant { epsilon, threshold: xs[i], c });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detflow::solve;
    use crate::riskmodel::RiskModel;
    use crate::trajectory::Field;
    use approx::assert_abs_diff_eq;

    fn two_point() -> KernelPair {
        KernelPair::new(&Spectrum::two_point(1.0, 0.5, 4).unwrap(), &InitSpec::zero_start(1.0), 0.0).unwrap()
    }

    #[test]
    fn kernel_values() {
        let id = KernelPair::new(&Spectrum::identity(10).unwrap(), &InitSpec::zero_start(1.0), 0.0).unwrap();
        assert_eq!(id.kernels(0.0), (0.5, 1.0));
        let kp = two_point();
        for x in [0.0, 0.3, 2.0] {
            let (f, k) = kp.kernels(x);
            assert_abs_diff_eq!(f, 0.25 * (-2.0 * x).exp() + 0.125 * (-x).exp(), epsilon = 1e-15);
            assert_abs_diff_eq!(k, 0.5 * (-2.0 * x).exp() + 0.125 * (-x).exp(), epsilon = 1e-15);
        }
        let (f, k) = kp.kernels(1e3);
        assert!(f < 1e-100 && k < 1e-100);
        assert_abs_diff_eq!(kp.kernel_l1(), 0.375, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_convolutions_match_quadrature() {
        let kp = KernelPair::new(&Spectrum::power_law(0.3, 6).unwrap(), &InitSpec::powerlaw_residual(0.5), 0.0).unwrap();
        let x = 1.7;
        let n = 20_000;
        let h = x / n as f64;
        let simpson = |f: &dyn Fn(f64) -> f64| {
            (0..=n)
                .map(|i| {
                    let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    w * f(i as f64 * h)
                })
                .sum::<f64>()
                * h
                / 3.0
        };
        let kk = simpson(&|s| kp.kernel(s) * kp.kernel(x - s));
        let kf = simpson(&|u| kp.kernel(x - u) * kp.forcing(u));
        assert_abs_diff_eq!(kp.kernel_self_convolution(x), kk, epsilon = 1e-12);
        assert_abs_diff_eq!(kp.kernel_forcing_convolution(x), kf, epsilon = 1e-12);
        assert_abs_diff_eq!(exp_convolution(0.5, 0.5 + 1e-14, 2.0), 2.0 * (-2.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn zero_rate_keeps_risk_constant() {
        let kp = KernelPair::new(&Spectrum::two_point(1.0, 0.5, 4).unwrap(), &InitSpec::zero_start(1.0), 0.5).unwrap();
        let grid = TimeGrid::new(2.0, 0.01, 0.1).unwrap();
        let traj = solve_volterra(&kp, &StepsizeRule::constant(0.0).unwrap(), &grid).unwrap();
        for r in &traj.records {
            assert_abs_diff_eq!(r.risk, kp.forcing(0.0) + 0.125, epsilon = 1e-15);
        }
    }

    #[test]
    fn constant_rate_below_threshold_reaches_noise_floor() {
        let s = Spectrum::two_point(1.0, 0.5, 4).unwrap();
        let kp = KernelPair::new(&s, &InitSpec::zero_start(1.0), 0.6).unwrap();
        let grid = TimeGrid::new(60.0, 1e-2, 1.0).unwrap();
        let traj = solve_volterra(&kp, &StepsizeRule::constant(1.0).unwrap(), &grid).unwrap();
        // stationary level of the noisy equation is above the floor by the
        // kernel feedback: R_inf = (omega^2/2) / (1 - gamma |K|_1), up to the
        // O(dt^2) trapezoid error in the kernel's integral
        let stationary = 0.18 / (1.0 - 1.0 * kp.kernel_l1());
        assert_abs_diff_eq!(traj.last().risk, stationary, epsilon = 2e-5);
        assert!(traj.records.iter().all(|r| r.risk >= 0.18));
        let quiet = KernelPair::new(&s, &InitSpec::zero_start(1.0), 0.0).unwrap();
        let traj = solve_volterra(&quiet, &StepsizeRule::constant(1.0).unwrap(), &grid).unwrap();
        assert!(traj.last().risk < 1e-12);
    }

    #[test]
    fn matches_mode_flow() {
        let s = Spectrum::power_law(0.4, 12).unwrap();
        let init = InitSpec::gaussian_both(0.3, 1.0);
        let grid = TimeGrid::new(8.0, 1e-3, 0.1).unwrap();
        let rule = StepsizeRule::adagrad_norm(1.0, 1.5).unwrap();
        let model = RiskModel::least_squares(0.4).unwrap();
        let ode = solve(&model, &s, &rule, &init, &grid).unwrap();
        let kp = KernelPair::new(&s, &init, 0.4).unwrap();
        let vol = solve_volterra(&kp, &rule, &grid).unwrap();
        for field in [Field::Risk, Field::Gamma, Field::D2, Field::B11, Field::B12, Field::B22] {
            assert!(vol.sup_gap(&ode, field) < 1e-5, "{field:?}: {}", vol.sup_gap(&ode, field));
        }
    }

    #[test]
    fn refinement_is_second_order() {
        let kp = two_point();
        let rule = StepsizeRule::adagrad_norm(1.0, 1.0).unwrap();
        let run = |dt| solve_volterra(&kp, &rule, &TimeGrid::new(4.0, dt, 0.4).unwrap()).unwrap();
        let (a, b, c) = (run(4e-2), run(2e-2), run(1e-2));
        let ratio = a.sup_gap(&b, Field::Risk) / b.sup_gap(&c, Field::Risk);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn line_search_is_rejected() {
        let grid = TimeGrid::new(1.0, 0.1, 0.1).unwrap();
        assert!(matches!(
            solve_volterra(&two_point(), &StepsizeRule::line_search(), &grid),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn oversized_step_is_flagged() {
        let grid = TimeGrid::new(10.0, 2.5, 2.5).unwrap();
        let r = solve_volterra(&two_point(), &StepsizeRule::constant(1.5).unwrap(), &grid);
        assert!(matches!(r, Err(Error::CorrectorDiverged { .. })), "{r:?}");
    }

    #[test]
    fn noiseless_risk_dominates_forcing_and_envelopes_bracket() {
        let s = Spectrum::power_law(0.2, 50).unwrap();
        let kp = KernelPair::new(&s, &InitSpec::zero_start(1.0), 0.0).unwrap();
        let gamma0 = 0.5;
        let grid = TimeGrid::new(20.0, 1e-3, 0.1).unwrap();
        let traj = solve_volterra(&kp, &StepsizeRule::constant(gamma0).unwrap(), &grid).unwrap();
        let env = lower_upper_envelopes(&kp, gamma0, &grid).unwrap();
        let upper = env.upper.as_ref().expect("contraction condition holds");
        for ((r, lo), up) in traj.records.iter().zip(&env.lower).zip(upper) {
            assert!(r.risk >= kp.forcing(gamma0 * r.t) - 1e-15);
            assert!(*lo <= r.risk + 1e-12 && r.risk <= *up + 1e-12, "t={} {lo} {} {up}", r.t, r.risk);
        }
    }

    #[test]
    fn envelope_precondition_failure_is_reported() {
        let kp = KernelPair::new(&Spectrum::identity(1).unwrap(), &InitSpec::zero_start(1.0), 0.0).unwrap();
        let grid = TimeGrid::new(5.0, 0.01, 0.5).unwrap();
        let env = lower_upper_envelopes(&kp, 1.2, &grid).unwrap();
        assert!(env.upper.is_none());
        assert_eq!(env.lower.len(), env.times.len());
        // condition arithmetic for the identity: 2 * (1/2) * (1/2) < 1
        assert!(2.0 * kp.kernel_l1() * 0.5 < 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn power_law_kernel_halves_bound(beta in 0.0f64..0.9, x in 0.05f64..40.0) {
                let kp = KernelPair::new(&Spectrum::power_law(beta, 40).unwrap(), &InitSpec::zero_start(1.0), 0.0).unwrap();
                let lhs = kp.kernel_self_convolution(x);
                let rhs = 2.0 * kp.kernel(x / 2.0) * kp.kernel_l1();
                prop_assert!(lhs <= rhs * (1.0 + 1e-12));
            }
        }
    }
}
