//! Closed-form limits, exponents and slope fits.
//!
//! Most long-time results for these dynamics are order relations, not
//! equalities, so what this module offers is predictions to check against
//! solver output: limits with brackets, and exponents to compare with
//! log-log slopes.

use crate::trajectory::{Field, Trajectory};
use crate::{Error, Result};

/// Limit of the exact line-search rate on a two-point spectrum with equal
/// halves at `lambda1 >= lambda2 > 0`.
///
/// Evaluates the explicit radical; [`line_search_limit_via_root`] reaches the
/// same number through the positive root of the auxiliary quadratic.
pub fn line_search_limit(lambda1: f64, lambda2: f64) -> Result<f64> {
    check_pair(lambda1, lambda2)?;
    let (a, b) = (lambda1, lambda2);
    let radicand = a.powi(6) - 4.0 * a.powi(5) * b + 8.0 * a.powi(4) * b * b - 6.0 * a.powi(3) * b.powi(3)
        + 8.0 * a * a * b.powi(4)
        - 4.0 * a * b.powi(5)
        + b.powi(6);
    if radicand < 0.0 {
        return Err(Error::NegativeRadicand { rule: "linesearch", value: radicand });
    }
    let num = a.powi(3) + 2.0 * a * a * b + 2.0 * a * b * b + b.powi(3) - radicand.sqrt();
    Ok(num / (a * a + b * b).powi(2))
}

/// The same limit via `x`, the positive root of
/// `P(x) = l1 l2 (x + 1)(l2 x - l1) + (l2 - l1)^3 x`, then
/// `gamma = 2 (l1^2 + l2^2 x) / ((l1 + l2 x)(l1^2 + l2^2))`. Here `x` is the
/// limiting ratio `D_2^2 / D_1^2` of the two halves' distances.
pub fn line_search_limit_via_root(lambda1: f64, lambda2: f64) -> Result<f64> {
    check_pair(lambda1, lambda2)?;
    let (l1, l2) = (lambda1, lambda2);
    let qa = l1 * l2 * l2;
    let qb = l1 * l2 * (l2 - l1) + (l2 - l1).powi(3);
    let qc = -l1 * l1 * l2;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return Err(Error::NegativeRadicand { rule: "linesearch", value: disc });
    }
    let x = if qb >= 0.0 { -2.0 * qc / (qb + disc.sqrt()) } else { (-qb + disc.sqrt()) / (2.0 * qa) };
    Ok(2.0 * (l1 * l1 + l2 * l2 * x) / ((l1 + l2 * x) * (l1 * l1 + l2 * l2)))
}

fn check_pair(lambda1: f64, lambda2: f64) -> Result<()> {
    if lambda2 > 0.0 && lambda1 >= lambda2 && lambda1.is_finite() {
        Ok(())
    } else {
        Err(Error::param("lambda", format!("need lambda1 >= lambda2 > 0, got ({lambda1}, {lambda2})")))
    }
}

/// `[lambda_min / avg_eig2, 2 lambda_min / avg_eig2]`, the range any limiting
/// line-search rate must fall in.
pub fn line_search_bounds(lambda_min: f64, avg_eig2: f64) -> (f64, f64) {
    (lambda_min / avg_eig2, 2.0 * lambda_min / avg_eig2)
}

/// Limiting AdaGrad-Norm rate for noiseless least squares, bracketed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdagradLimit {
    pub lower: f64,
    pub central: f64,
    pub upper: f64,
    /// `eta^2 / (b/eta + avg_eig D^2(0) / 4)`, the expression as usually
    /// printed. It agrees with `central` only when `b = eta = 1`.
    pub printed: f64,
}

/// Brackets `gamma_inf = eta^2 / (b eta + avg_eig |r|_1)`, where `|r|_1 =
/// int R gamma dt` lies in `[D^2(0)/4, D^2(0)/4 / (1 - gamma0 avg_eig / 2)]`.
///
/// Requires the hypothesis `avg_eig <= b / eta`.
pub fn adagrad_limit_bracket(b: f64, eta: f64, avg_eig: f64, d2_0: f64, gamma0: f64) -> Result<AdagradLimit> {
    if !(b > 0.0 && eta > 0.0 && avg_eig >= 0.0 && d2_0 >= 0.0) {
        return Err(Error::param("b, eta, avg_eig, d2_0", "must be positive (avg_eig, d2_0 non-negative)"));
    }
    if avg_eig > b / eta {
        return Err(Error::Unsupported(format!("bracket needs avg_eig <= b/eta, got {avg_eig} > {}", b / eta)));
    }
    if (gamma0 - eta / b).abs() > 1e-12 * gamma0.abs().max(1.0) {
        return Err(Error::param("gamma0", format!("must equal eta/b = {}, got {gamma0}", eta / b)));
    }
    let f_l1 = 0.25 * d2_0;
    let r_hi = f_l1 / (1.0 - 0.5 * gamma0 * avg_eig);
    let upper = eta * eta / (b * eta + avg_eig * f_l1);
    let lower = eta * eta / (b * eta + avg_eig * r_hi);
    Ok(AdagradLimit { lower, central: upper, upper, printed: eta * eta / (b / eta + avg_eig * f_l1) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Fast,
    Critical,
    Slow,
}

/// Long-time behaviour of AdaGrad-Norm on a power-law problem: `gamma ~
/// t^gamma_exponent`, `R ~ t^risk_exponent`, each times a logarithmic factor
/// in the critical regime (`gamma ~ 1/log t`, `R ~ log t / t`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawRates {
    pub beta: f64,
    pub delta: f64,
    pub regime: Regime,
    pub risk_exponent: f64,
    pub gamma_exponent: f64,
    pub log_corrected: bool,
}

fn check_power_law(beta: f64, delta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::param("beta", format!("must lie in [0, 1), got {beta}")));
    }
    if !(delta >= 0.0) || beta + delta > 2.0 {
        return Err(Error::param("delta", format!("need delta >= 0 and beta + delta <= 2, got {delta}")));
    }
    Ok(())
}

pub fn power_law_rates(beta: f64, delta: f64) -> Result<PowerLawRates> {
    check_power_law(beta, delta)?;
    let s = beta + delta;
    let (regime, risk_exponent, gamma_exponent) = if (s - 1.0).abs() < 1e-12 {
        (Regime::Critical, -1.0, 0.0)
    } else if s < 1.0 {
        (Regime::Fast, s - 2.0, 0.0)
    } else {
        (Regime::Slow, 1.0 - 2.0 / s, 1.0 / s - 1.0)
    };
    Ok(PowerLawRates { beta, delta, regime, risk_exponent, gamma_exponent, log_corrected: regime == Regime::Critical })
}

/// Decay exponents of the forcing (`F ~ x^-kappa1`) and kernel (`K ~ x^-kappa2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaPair {
    pub kappa1: f64,
    pub kappa2: f64,
}

pub fn kappa_exponents(beta: f64, delta: f64) -> Result<KappaPair> {
    check_power_law(beta, delta)?;
    Ok(KappaPair { kappa1: 2.0 - beta - delta, kappa2: 3.0 - beta })
}

/// Lower bounds on the limiting AdaGrad-Norm rate for a smooth outer function
/// satisfying a restricted secant inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StronglyConvexBound {
    /// `gamma0 eta^2 / (eta^2 + zeta/(1 - zeta) D^2(0))`.
    pub guaranteed: f64,
    /// `eta^2 / (b eta + avg_eig L^2 D^2(0) / (2 mu (1 - zeta)))`.
    pub final_bracket: f64,
    /// The two bounds in their usual printed form; equal to the above at `eta = 1`.
    pub printed_guaranteed: f64,
    pub printed_final_bracket: f64,
}

/// Requires `gamma0 = eta / b = 2 mu zeta / (L^2 avg_eig)` with `zeta` in (0, 1).
pub fn strongly_convex_lower_bound(
    mu_hat: f64,
    l_hat: f64,
    avg_eig: f64,
    eta: f64,
    b: f64,
    zeta: f64,
    d2_0: f64,
) -> Result<StronglyConvexBound> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::param("zeta", format!("must lie in (0, 1), got {zeta}")));
    }
    if !(mu_hat > 0.0 && l_hat > 0.0 && avg_eig > 0.0 && eta > 0.0 && b > 0.0 && d2_0 >= 0.0) {
        return Err(Error::param("mu_hat, l_hat, avg_eig, eta, b", "must be positive"));
    }
    let gamma0 = eta / b;
    let implied = 2.0 * mu_hat * zeta / (l_hat * l_hat * avg_eig);
    if (gamma0 - implied).abs() > 1e-9 * implied {
        return Err(Error::param("zeta", format!("eta/b = {gamma0} but 2 mu zeta/(L^2 avg_eig) = {implied}")));
    }
    let ratio = zeta / (1.0 - zeta);
    let tail = avg_eig * l_hat * l_hat * d2_0 / (2.0 * mu_hat * (1.0 - zeta));
    Ok(StronglyConvexBound {
        guaranteed: gamma0 * eta * eta / (eta * eta + ratio * d2_0),
        final_bracket: eta * eta / (b * eta + tail),
        printed_guaranteed: gamma0 * eta * eta / (1.0 + ratio * d2_0),
        printed_final_bracket: eta * eta / (b / eta + tail),
    })
}

/// `eta / sqrt(b^2 + omega^2 avg_eig t)`: the fastest AdaGrad-Norm can decay
/// with label noise.
pub fn noisy_adagrad_asymptote(b: f64, eta: f64, omega: f64, avg_eig: f64, t: f64) -> f64 {
    eta / (b * b + omega * omega * avg_eig * t).sqrt()
}

fn window(traj: &Trajectory, field: Field, t_lo: f64, t_hi: f64) -> Result<Vec<(f64, f64)>> {
    if !(t_hi > t_lo) {
        return Err(Error::param("window", format!("need t_hi > t_lo, got [{t_lo}, {t_hi}]")));
    }
    let pts: Vec<(f64, f64)> =
        traj.records.iter().filter(|r| r.t >= t_lo && r.t <= t_hi).map(|r| (r.t, r.get(field))).collect();
    if pts.len() < 8 {
        return Err(Error::param("window", format!("{} records in [{t_lo}, {t_hi}], need at least 8", pts.len())));
    }
    Ok(pts)
}

fn ols_slope(pts: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = pts.clone().count() as f64;
    let (mx, my) = pts.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (sxy, sxx) = pts.fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    sxy / sxx
}

/// Least-squares slope of `log field` against `log t` over `[t_lo, t_hi]`.
pub fn fit_loglog_slope(traj: &Trajectory, field: Field, t_lo: f64, t_hi: f64) -> Result<f64> {
    if !(t_lo > 0.0) {
        return Err(Error::param("window", "log-log fits need t_lo > 0"));
    }
    let pts = window(traj, field, t_lo, t_hi)?;
    if let Some(&(t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::param("field", format!("non-positive value {v} at t = {t}")));
    }
    Ok(ols_slope(pts.iter().map(|&(t, v)| (t.ln(), v.ln()))))
}

/// Least-squares slope of `log field` against `t`: minus the exponential
/// decay rate.
pub fn fit_exponential_rate(traj: &Trajectory, field: Field, t_lo: f64, t_hi: f64) -> Result<f64> {
    let pts = window(traj, field, t_lo, t_hi)?;
    if let Some(&(t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::param("field", format!("non-positive value {v} at t = {t}")));
    }
    Ok(ols_slope(pts.iter().map(|&(t, v)| (t, v.ln()))))
}
