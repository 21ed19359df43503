//! Low-dimensional risk representations.
//!
//! For a linear composite problem the risk, its gradient and the second
//! moment of the sample derivative depend on the iterate only through the
//! 2x2 covariance `B = W^T K W` of `(<a, X>, <a, X*>)`. A [`RiskModel`]
//! supplies those functions:
//!
//! - `h(B)`: the population risk.
//! - `grad h(B) = [[H1, H2], [H2, H3]]`: gradient with respect to the
//!   symmetric matrix `B`, entrywise, so `H2` is *half* the derivative of `h`
//!   with respect to the scalar `b12` (the off-diagonal appears twice).
//! - `I(B) = E[f'(x; x*, eps)^2]`: the Fisher function.
//! - `f'(x; x*, eps)`: the per-sample derivative used by SGD.
//!
//! Logistic regression uses the soft-label student-teacher loss
//! `log(1 + e^x) - sigmoid(x*) x`; its Gaussian expectations are evaluated
//! with Gauss-Hermite quadrature.

use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::hermite::GaussHermite;

use crate::{Error, Result};

/// `(b11, b12, b22)` of the symmetric matrix `B`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CovB {
    pub b11: f64,
    pub b12: f64,
    pub b22: f64,
}

impl CovB {
    pub const fn new(b11: f64, b12: f64, b22: f64) -> Self {
        CovB { b11, b12, b22 }
    }

    pub fn det(&self) -> f64 {
        self.b11 * self.b22 - self.b12 * self.b12
    }

    pub fn is_psd(&self) -> bool {
        let tol = 1e-10 * self.b11.abs().max(self.b22.abs()).max(1.0).powi(2);
        self.b11 >= -1e-10 && self.b22 >= -1e-10 && self.det() >= -tol
    }

    fn check(&self) -> Result<()> {
        if self.is_psd() && self.b11.is_finite() && self.b12.is_finite() && self.b22.is_finite() {
            Ok(())
        } else {
            Err(Error::NotPsd {
                b11: self.b11,
                b12: self.b12,
                b22: self.b22,
            })
        }
    }
}

/// Entries of `grad h(B)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HGrad {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub h: f64,
    pub grad: HGrad,
    pub fisher: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LeastSquares,
    Logistic,
}

/// Standard-normal quadrature: `E[f(z)] ~= sum_i w_i f(z_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalQuadrature {
    nodes: Vec<(f64, f64)>,
}

impl NormalQuadrature {
    pub fn new(n: usize) -> Result<Self> {
        let deg = NonZeroUsize::new(n).ok_or_else(|| Error::param("quadrature", "node count must be positive"))?;
        let rule = GaussHermite::new(deg);
        let scale = std::f64::consts::PI.sqrt().recip();
        let nodes = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w * scale))
            .collect();
        Ok(NormalQuadrature { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().map(|&(z, w)| w * f(z)).sum()
    }

    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }
}

pub const DEFAULT_QUADRATURE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    kind: ModelKind,
    omega: f64,
    quad: Option<Arc<NormalQuadrature>>,
}

impl RiskModel {
    /// Least squares with label noise `eps ~ N(0, omega^2)`.
    pub fn least_squares(omega: f64) -> Result<Self> {
        if !(omega >= 0.0) || !omega.is_finite() {
            return Err(Error::param("omega", "label noise must be a finite non-negative number"));
        }
        Ok(RiskModel {
            kind: ModelKind::LeastSquares,
            omega,
            quad: None,
        })
    }

    /// Noiseless logistic regression with `nodes` quadrature points per axis.
    pub fn logistic(nodes: usize) -> Result<Self> {
        Ok(RiskModel {
            kind: ModelKind::Logistic,
            omega: 0.0,
            quad: Some(Arc::new(NormalQuadrature::new(nodes)?)),
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn omega_sq(&self) -> f64 {
        self.omega * self.omega
    }

    fn quad(&self) -> &NormalQuadrature {
        self.quad.as_deref().expect("logistic model always carries a quadrature rule")
    }

    pub fn h(&self, b: &CovB) -> Result<f64> {
        b.check()?;
        Ok(match self.kind {
            ModelKind::LeastSquares => 0.5 * (b.b11 - 2.0 * b.b12 + b.b22) + 0.5 * self.omega_sq(),
            ModelKind::Logistic => {
                let q = self.quad();
                -b.b12 * gauss_mean(q, b.b22, sigmoid_prime) + gauss_mean(q, b.b11, softplus)
            }
        })
    }

    pub fn grad_h(&self, b: &CovB) -> Result<HGrad> {
        b.check()?;
        Ok(match self.kind {
            ModelKind::LeastSquares => HGrad {
                h1: 0.5,
                h2: -0.5,
                h3: 0.5,
            },
            ModelKind::Logistic => {
                // d/dv E[phi(sqrt(v) z)] = E[phi''(sqrt(v) z)] / 2
                let q = self.quad();
                HGrad {
                    h1: 0.5 * gauss_mean(q, b.b11, sigmoid_prime),
                    h2: -0.5 * gauss_mean(q, b.b22, sigmoid_prime),
                    h3: -0.5 * b.b12 * gauss_mean(q, b.b22, sigmoid_third),
                }
            }
        })
    }

    pub fn fisher_i(&self, b: &CovB) -> Result<f64> {
        b.check()?;
        Ok(match self.kind {
            ModelKind::LeastSquares => b.b11 - 2.0 * b.b12 + b.b22 + self.omega_sq(),
            ModelKind::Logistic => logistic_fisher(self.quad(), b),
        })
    }

    /// `h`, its gradient and `I` at once. `residual` must equal
    /// `b11 - 2 b12 + b22`; least squares reads the risk from it instead of the
    /// entries of `B`, which keeps tiny risks free of cancellation when the
    /// caller can accumulate the residual directly.
    pub fn evaluate(&self, b: &CovB, residual: f64) -> Result<Evaluation> {
        match self.kind {
            ModelKind::LeastSquares => {
                b.check()?;
                let residual = residual.max(0.0);
                Ok(Evaluation {
                    h: 0.5 * residual + 0.5 * self.omega_sq(),
                    grad: self.grad_h(b)?,
                    fisher: residual + self.omega_sq(),
                })
            }
            ModelKind::Logistic => Ok(Evaluation { h: self.h(b)?, grad: self.grad_h(b)?, fisher: self.fisher_i(b)? }),
        }
    }

    pub fn f_prime(&self, x: f64, xstar: f64, eps: f64) -> f64 {
        match self.kind {
            ModelKind::LeastSquares => x - xstar - eps,
            ModelKind::Logistic => sigmoid(x) - sigmoid(xstar),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

fn sigmoid_third(x: f64) -> f64 {
    let s = sigmoid(x);
    let d1 = s * (1.0 - s);
    let u = 1.0 - 2.0 * s;
    d1 * u * u - 2.0 * d1 * d1
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

// E[f(sqrt(var) z)]; a zero variance collapses to a point mass
fn gauss_mean(q: &NormalQuadrature, var: f64, f: fn(f64) -> f64) -> f64 {
    if var <= 0.0 {
        return f(0.0);
    }
    let s = var.sqrt();
    q.expect(|z| f(s * z))
}

// E[(sigmoid(x) - sigmoid(y))^2] with (x, y) ~ N(0, B), via y = L22 z1,
// x = L21 z1 + L11 z2 on the Cholesky factor of B
fn logistic_fisher(q: &NormalQuadrature, b: &CovB) -> f64 {
    let (mut b11, mut b22) = (b.b11.max(0.0), b.b22.max(0.0));
    if b11 * b22 - b.b12 * b.b12 < 1e-14 {
        b11 += 1e-12;
        b22 += 1e-12;
    }
    let l22 = b22.sqrt();
    let l21 = b.b12 / l22;
    let l11 = (b11 - l21 * l21).max(0.0).sqrt();
    let nodes = q.nodes();
    let mut total = 0.0;
    for &(z1, w1) in nodes {
        let gy = sigmoid(l22 * z1);
        let base = l21 * z1;
        let inner: f64 = nodes
            .iter()
            .map(|&(z2, w2)| {
                let diff = sigmoid(base + l11 * z2) - gy;
                w2 * diff * diff
            })
            .sum();
        total += w1 * inner;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn logistic() -> RiskModel {
        RiskModel::logistic(DEFAULT_QUADRATURE).unwrap()
    }

    #[test]
    fn least_squares_values() {
        let m = RiskModel::least_squares(0.0).unwrap();
        assert_eq!(m.h(&CovB::new(1.0, 1.0, 1.0)).unwrap(), 0.0);
        assert_eq!(m.fisher_i(&CovB::new(1.0, 1.0, 1.0)).unwrap(), 0.0);
        let m = RiskModel::least_squares(1.0).unwrap();
        assert_eq!(m.h(&CovB::new(1.0, 0.0, 1.0)).unwrap(), 1.5);
        let m = RiskModel::least_squares(2.0).unwrap();
        assert_eq!(m.fisher_i(&CovB::new(1.0, 0.0, 1.0)).unwrap(), 6.0);
        assert_eq!(m.f_prime(2.0, 1.0, 0.5), 0.5);
        assert_eq!(
            m.grad_h(&CovB::new(3.0, 1.0, 2.0)).unwrap(),
            HGrad { h1: 0.5, h2: -0.5, h3: 0.5 }
        );
        assert!(RiskModel::least_squares(-1.0).is_err());
    }

    #[test]
    fn non_psd_rejected() {
        let m = RiskModel::least_squares(0.0).unwrap();
        assert!(matches!(m.h(&CovB::new(1.0, 2.0, 1.0)), Err(Error::NotPsd { .. })));
        assert!(logistic().fisher_i(&CovB::new(-1.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn logistic_degenerate_values() {
        let m = logistic();
        let zero = CovB::default();
        assert_abs_diff_eq!(m.h(&zero).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        for c in [0.0, 0.3, 1.0, 4.0] {
            assert_abs_diff_eq!(m.fisher_i(&CovB::new(c, c, c)).unwrap(), 0.0, epsilon = 1e-10);
        }
        assert_eq!(m.f_prime(0.0, 0.0, 0.7), 0.0);
        for t in [0.1, 1.0, 3.0] {
            assert_abs_diff_eq!(m.f_prime(t, -t, 0.0), -m.f_prime(-t, t, 0.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn logistic_gradient_at_origin() {
        // dh/db12 = -E[sigmoid'(0)] = -1/4, H2 is half of it
        let g = logistic().grad_h(&CovB::default()).unwrap();
        assert_abs_diff_eq!(g.h2, -0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(g.h1, 0.125, epsilon = 1e-15);
        assert_eq!(g.h3, 0.0);
    }

    fn fd_grad(m: &RiskModel, b: CovB, step: f64) -> HGrad {
        let h = |b: CovB| m.h(&b).unwrap();
        let d11 = (h(CovB { b11: b.b11 + step, ..b }) - h(CovB { b11: b.b11 - step, ..b })) / (2.0 * step);
        let d12 = (h(CovB { b12: b.b12 + step, ..b }) - h(CovB { b12: b.b12 - step, ..b })) / (2.0 * step);
        let d22 = (h(CovB { b22: b.b22 + step, ..b }) - h(CovB { b22: b.b22 - step, ..b })) / (2.0 * step);
        HGrad { h1: d11, h2: 0.5 * d12, h3: d22 }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let m = logistic();
        for b in [
            CovB::new(1.0, 0.3, 0.8),
            CovB::new(2.5, -1.0, 1.5),
            CovB::new(0.4, 0.4, 0.9),
        ] {
            let g = m.grad_h(&b).unwrap();
            let step = 1e-5 * b.b11.abs().max(b.b22.abs()).max(1.0);
            let fd = fd_grad(&m, b, step);
            let fd_half = fd_grad(&m, b, step / 2.0);
            for (a, (f, fh)) in [g.h1, g.h2, g.h3].into_iter().zip([(fd.h1, fd_half.h1), (fd.h2, fd_half.h2), (fd.h3, fd_half.h3)]) {
                assert_abs_diff_eq!(a, f, epsilon = 1e-8);
                assert_abs_diff_eq!(f, fh, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn quadrature_integrates_gaussian_moments() {
        let q = NormalQuadrature::new(DEFAULT_QUADRATURE).unwrap();
        assert_abs_diff_eq!(q.expect(|_| 1.0), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(q.expect(|z| z * z), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.expect(|z| z.powi(4)), 3.0, epsilon = 1e-11);
        assert!(NormalQuadrature::new(0).is_err());
    }

    fn random_psd(rng: &mut ChaCha8Rng) -> CovB {
        let (a, b, c): (f64, f64, f64) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(0.0..1.5));
        // B = M M^T with M = [[a, b], [0, c]] rows for (x, x*)
        CovB::new(a * a + b * b, b * c, c * c)
    }

    #[test]
    fn logistic_h_and_fisher_match_monte_carlo() {
        let m = logistic();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 1_000_000;
        for _ in 0..3 {
            let b = random_psd(&mut rng);
            let l22 = b.b22.sqrt();
            let l21 = if l22 > 0.0 { b.b12 / l22 } else { 0.0 };
            let l11 = (b.b11 - l21 * l21).max(0.0).sqrt();
            let (mut sh, mut sh2, mut si, mut si2) = (0.0, 0.0, 0.0, 0.0);
            for _ in 0..draws {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let xs = l22 * z1;
                let x = l21 * z1 + l11 * z2;
                let loss = softplus(x) - sigmoid(xs) * x;
                let fp = sigmoid(x) - sigmoid(xs);
                sh += loss;
                sh2 += loss * loss;
                si += fp * fp;
                si2 += fp.powi(4);
            }
            let n = draws as f64;
            let (mh, mi) = (sh / n, si / n);
            let se_h = ((sh2 / n - mh * mh) / n).sqrt();
            let se_i = ((si2 / n - mi * mi) / n).sqrt();
            assert!((m.h(&b).unwrap() - mh).abs() < 3.0 * se_h, "h {:?}", b);
            assert!((m.fisher_i(&b).unwrap() - mi).abs() < 3.0 * se_i, "I {:?}", b);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn psd() -> impl Strategy<Value = CovB> {
            (-2.0f64..2.0, -2.0f64..2.0, 0.0f64..2.0).prop_map(|(a, b, c)| CovB::new(a * a + b * b, b * c, c * c))
        }

        proptest! {
            #[test]
            fn ls_fisher_is_twice_risk(b in psd(), omega in 0.0f64..3.0) {
                let m = RiskModel::least_squares(omega).unwrap();
                let h = m.h(&b).unwrap();
                let i = m.fisher_i(&b).unwrap();
                prop_assert!((i - 2.0 * h).abs() <= 1e-12 * (1.0 + i.abs()));
                prop_assert!(h >= -1e-12);
            }

            #[test]
            fn logistic_outputs_are_stable(b in psd(), eps in -1e-12f64..1e-12) {
                let m = RiskModel::logistic(32).unwrap();
                let bumped = CovB::new(b.b11 + eps.abs(), b.b12 + eps, b.b22 + eps.abs());
                prop_assert!(m.fisher_i(&b).unwrap() >= 0.0);
                prop_assert!((m.h(&b).unwrap() - m.h(&bumped).unwrap()).abs() < 1e-8);
                prop_assert!((m.fisher_i(&b).unwrap() - m.fisher_i(&bumped).unwrap()).abs() < 1e-8);
            }
        }
    }
}
