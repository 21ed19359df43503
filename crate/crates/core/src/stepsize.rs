//! Learning-rate rules.
//!
//! Each rule has two faces. The deterministic one, [`StepsizeRule::gamma_det`],
//! maps solver observables plus an internal [`RuleState`] to `gamma_t`; the
//! state is integrated alongside the mode ODEs via
//! [`StepsizeRule::state_derivative`]. The discrete one,
//! [`StepsizeRule::gamma_discrete`], is what the SGD simulator consumes: the
//! stochastic `g_k` in `X_{k+1} = X_k - (g_k / d) grad Psi`.
//!
//! Line search and Polyak are the *idealized* least-squares rules: they read
//! the exact population risk and distance, which no data-driven method can.

use crate::{Error, Result};

/// Below this risk the line-search and Polyak rules stop dividing by it.
pub const CONVERGED_RISK: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsizeRule {
    Constant { gamma0: f64 },
    AdagradNorm { b: f64, eta: f64 },
    RmspropNorm { b: f64, eta: f64, alpha: f64 },
    LineSearch,
    Polyak,
}

/// Internal state of the deterministic rules.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RuleState {
    /// `int_0^t I(B(s)) ds` (AdaGrad-Norm).
    pub acc_i: f64,
    /// `b^2 e^{-alpha t} + avg_eig int_0^t e^{-alpha (t-s)} I(B(s)) ds` (RMSprop-Norm).
    pub ema: f64,
}

impl RuleState {
    pub fn axpy(&self, h: f64, k: &RuleState) -> RuleState {
        RuleState {
            acc_i: self.acc_i + h * k.acc_i,
            ema: self.ema + h * k.ema,
        }
    }
}

/// What a deterministic rule may look at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleInputs {
    pub risk: f64,
    pub fisher: f64,
    /// `sum_i w_i lambda_i^2 D_i^2`.
    pub wl2d2: f64,
    pub avg_eig: f64,
    pub avg_eig2: f64,
    pub omega_sq: f64,
}

/// State of the discrete AdaGrad/RMSprop accumulators, `b_k^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteState {
    pub bk_sq: f64,
}

/// Exact population quantities for the idealized discrete rules, evaluated at
/// the current iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationInputs {
    pub risk: f64,
    /// `(1/d) sum_i lambda_i^2 d (x_i - x*_i)^2`, the discrete `sum w lambda^2 D^2`.
    pub wl2d2: f64,
    pub avg_eig: f64,
    pub avg_eig2: f64,
    pub omega_sq: f64,
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::param(name, format!("must be a finite positive number, got {v}")))
    }
}

impl StepsizeRule {
    pub fn constant(gamma0: f64) -> Result<Self> {
        if !(gamma0 >= 0.0 && gamma0.is_finite()) {
            return Err(Error::param("gamma0", format!("must be finite and non-negative, got {gamma0}")));
        }
        Ok(StepsizeRule::Constant { gamma0 })
    }

    pub fn adagrad_norm(b: f64, eta: f64) -> Result<Self> {
        Ok(StepsizeRule::AdagradNorm {
            b: positive("b", b)?,
            eta: positive("eta", eta)?,
        })
    }

    pub fn rmsprop_norm(b: f64, eta: f64, alpha: f64) -> Result<Self> {
        Ok(StepsizeRule::RmspropNorm {
            b: positive("b", b)?,
            eta: positive("eta", eta)?,
            alpha: positive("alpha", alpha)?,
        })
    }

    pub fn line_search() -> Self {
        StepsizeRule::LineSearch
    }

    pub fn polyak() -> Self {
        StepsizeRule::Polyak
    }

    /// The config name of the rule.
    pub fn name(&self) -> &'static str {
        match self {
            StepsizeRule::Constant { .. } => "constant",
            StepsizeRule::AdagradNorm { .. } => "adagrad",
            StepsizeRule::RmspropNorm { .. } => "rmsprop",
            StepsizeRule::LineSearch => "linesearch",
            StepsizeRule::Polyak => "polyak",
        }
    }

    /// Whether `gamma_t` depends on the iterate only through `int R` (least
    /// squares), which is what the Volterra solver can handle.
    pub fn is_risk_integral_rule(&self) -> bool {
        matches!(self, StepsizeRule::Constant { .. } | StepsizeRule::AdagradNorm { .. })
    }

    pub fn initial_state(&self) -> RuleState {
        match *self {
            StepsizeRule::RmspropNorm { b, .. } => RuleState { acc_i: 0.0, ema: b * b },
            _ => RuleState::default(),
        }
    }

    /// Deterministic `gamma_t`. `Ok(None)` signals that the risk has
    /// underflowed and an idealized rule can no longer be evaluated; the
    /// caller should freeze the last value.
    pub fn gamma_det(&self, state: &RuleState, obs: &RuleInputs) -> Result<Option<f64>> {
        match *self {
            StepsizeRule::Constant { gamma0 } => Ok(Some(gamma0)),
            StepsizeRule::AdagradNorm { b, eta } => {
                let radicand = b * b + obs.avg_eig * state.acc_i;
                if radicand <= 0.0 {
                    return Err(Error::NegativeRadicand { rule: "adagrad", value: radicand });
                }
                Ok(Some(eta / radicand.sqrt()))
            }
            StepsizeRule::RmspropNorm { eta, .. } => {
                if state.ema <= 0.0 {
                    return Err(Error::NegativeRadicand { rule: "rmsprop", value: state.ema });
                }
                Ok(Some(eta / state.ema.sqrt()))
            }
            StepsizeRule::LineSearch => {
                if obs.risk < CONVERGED_RISK {
                    return Ok(None);
                }
                Ok(Some(obs.wl2d2 / (2.0 * obs.avg_eig2 * obs.risk)))
            }
            StepsizeRule::Polyak => {
                if obs.risk < CONVERGED_RISK {
                    return Ok(None);
                }
                Ok(Some((2.0 * obs.risk - obs.omega_sq) / (2.0 * obs.avg_eig * obs.risk)))
            }
        }
    }

    pub fn state_derivative(&self, state: &RuleState, obs: &RuleInputs) -> RuleState {
        match *self {
            StepsizeRule::AdagradNorm { .. } => RuleState {
                acc_i: obs.fisher,
                ema: 0.0,
            },
            StepsizeRule::RmspropNorm { alpha, .. } => RuleState {
                acc_i: 0.0,
                ema: -alpha * state.ema + obs.avg_eig * obs.fisher,
            },
            _ => RuleState::default(),
        }
    }

    pub fn initial_discrete(&self, d: usize) -> DiscreteState {
        let b = match *self {
            StepsizeRule::AdagradNorm { b, .. } | StepsizeRule::RmspropNorm { b, .. } => b,
            _ => 0.0,
        };
        let bd = b * d as f64;
        DiscreteState { bk_sq: bd * bd }
    }

    /// The discrete `g_k` for a step whose sample gradient has squared norm
    /// `grad_sq_norm`, updating the accumulator first.
    ///
    /// RMSprop discounts the accumulator by `e^{-alpha/d}` per step, so that
    /// after `k = t d` steps the old mass has decayed by `e^{-alpha t}`: the
    /// deterministic equivalent is then exactly the continuous ema above.
    pub fn gamma_discrete(
        &self,
        state: &mut DiscreteState,
        grad_sq_norm: f64,
        pop: &PopulationInputs,
        d: usize,
    ) -> Option<f64> {
        let dd = d as f64;
        match *self {
            StepsizeRule::Constant { gamma0 } => Some(gamma0),
            StepsizeRule::AdagradNorm { eta, .. } => {
                state.bk_sq += grad_sq_norm;
                Some(dd * eta / state.bk_sq.sqrt())
            }
            StepsizeRule::RmspropNorm { eta, alpha, .. } => {
                state.bk_sq = (-alpha / dd).exp() * state.bk_sq + grad_sq_norm;
                Some(dd * eta / state.bk_sq.sqrt())
            }
            StepsizeRule::LineSearch => {
                (pop.risk >= CONVERGED_RISK).then(|| pop.wl2d2 / (2.0 * pop.avg_eig2 * pop.risk))
            }
            StepsizeRule::Polyak => (pop.risk >= CONVERGED_RISK)
                .then(|| (2.0 * pop.risk - pop.omega_sq) / (2.0 * pop.avg_eig * pop.risk)),
        }
    }
}

/// Largest `gamma` for which the least-squares risk is instantaneously
/// non-increasing; twice the exact line-search rate.
pub fn risk_threshold(obs: &RuleInputs) -> f64 {
    obs.wl2d2 / (obs.avg_eig2 * obs.risk)
}

/// Largest `gamma` for which the distance to optimality is instantaneously
/// non-increasing; twice the Polyak rate.
pub fn distance_threshold(obs: &RuleInputs) -> f64 {
    (2.0 * obs.risk - obs.omega_sq) / (obs.avg_eig * obs.risk)
}
