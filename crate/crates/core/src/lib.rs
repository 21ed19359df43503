//! Exact deterministic dynamics of one-pass SGD with adaptive learning rates
//! on high-dimensional linear composite problems.
//!
//! Streaming SGD on `d`-dimensional Gaussian data `a ~ N(0, K)` with a
//! learning rate `g_k` (AdaGrad-Norm, RMSprop-Norm, idealized exact line
//! search, Polyak) concentrates, after the time change `k = floor(t d)`, on
//! the solution of a finite system of ODEs: one 2x2 matrix per distinct
//! eigenvalue of `K`, coupled through the risk, the Fisher function and the
//! learning rate.
//!
//! The crate is organized bottom-up:
//!
//! - [`spectrum`]: covariance spectra as weighted eigenvalue groups.
//! - [`riskmodel`]: the low-dimensional functions `h`, `grad h`, `I`, `f'`
//!   for least squares and logistic regression.
//! - [`stepsize`]: learning-rate rules, deterministic and discrete.
//! - [`detflow`]: the RK4 integrator for the mode ODEs.
//! - [`volterra`]: the least-squares risk as a convolution Volterra equation.
//! - [`sgdsim`]: the finite-`d` stochastic simulator and ensembles.
//! - [`asymptotics`]: closed-form limits, exponents and slope fitting.
//! - [`trajectory`]: time series records and their CSV format.
//!
//! ```
//! use adaflow::prelude::*;
//!
//! let spectrum = Spectrum::identity(1000).unwrap();
//! let model = RiskModel::least_squares(0.0).unwrap();
//! let rule = StepsizeRule::adagrad_norm(1.0, 1.0).unwrap();
//! let grid = TimeGrid::new(2.0, 1e-3, 0.5).unwrap();
//! let traj = detflow::solve(&model, &spectrum, &rule, &InitSpec::zero_start(1.0), &grid).unwrap();
//! assert!(traj.last().risk < traj.first().risk);
//! ```

pub mod asymptotics;
pub mod detflow;
mod error;
pub mod riskmodel;
pub mod sgdsim;
pub mod spectrum;
pub mod stepsize;
pub mod trajectory;
pub mod volterra;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::detflow::{self, InitSpec, TimeGrid};
    pub use crate::riskmodel::{CovB, ModelKind, RiskModel};
    pub use crate::sgdsim::{self, SgdConfig};
    pub use crate::spectrum::Spectrum;
    pub use crate::stepsize::StepsizeRule;
    pub use crate::trajectory::{Field, Record, Trajectory};
    pub use crate::volterra::{self, KernelPair};
    pub use crate::{Error, Result};
}
