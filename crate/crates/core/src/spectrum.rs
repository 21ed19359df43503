//! Covariance spectra.
//!
//! All computation happens in the eigenbasis of `K`, so a covariance is
//! fully described by its eigenvalues. Repeated eigenvalues are collapsed
//! into weighted groups: the ODE cost then scales with the number of
//! distinct eigenvalues rather than with `d`.

use std::fmt::Write as _;

use crate::{Error, Result};

/// One distinct eigenvalue and the fraction of the `d` eigenvalues equal to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Group {
    pub lambda: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    groups: Vec<Group>,
    d: usize,
}

const WEIGHT_TOL: f64 = 1e-12;

impl Spectrum {
    /// Builds a spectrum from explicit groups. Weights must sum to one.
    pub fn from_groups(groups: Vec<Group>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "must be at least 1"));
        }
        if groups.is_empty() {
            return Err(Error::param("groups", "spectrum needs at least one eigenvalue"));
        }
        for g in &groups {
            if !(g.lambda >= 0.0) || !g.lambda.is_finite() {
                return Err(Error::param("lambda", format!("eigenvalue {} is not a finite non-negative number", g.lambda)));
            }
            if !(g.weight > 0.0 && g.weight <= 1.0 + WEIGHT_TOL) {
                return Err(Error::param("weight", format!("group weight {} outside (0, 1]", g.weight)));
            }
        }
        let total: f64 = groups.iter().map(|g| g.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::param("weight", format!("weights sum to {total}, expected 1")));
        }
        Ok(Spectrum { groups, d })
    }

    /// `d/2` eigenvalues equal to `lambda1` and `d/2` equal to `lambda2`.
    pub fn two_point(lambda1: f64, lambda2: f64, d: usize) -> Result<Self> {
        if !(lambda2 > 0.0) {
            return Err(Error::param("lambda2", "must be positive"));
        }
        if !(lambda1 > lambda2) {
            return Err(Error::param("lambda1", "must be strictly larger than lambda2"));
        }
        if d == 0 || d % 2 != 0 {
            return Err(Error::param("d", "two-point spectrum needs an even positive dimension"));
        }
        Spectrum::from_groups(
            vec![
                Group { lambda: lambda1, weight: 0.5 },
                Group { lambda: lambda2, weight: 0.5 },
            ],
            d,
        )
    }

    /// Midpoint quantiles of the density `(1 - beta) lambda^(-beta)` on `(0, 1)`:
    /// `lambda_i = ((i - 1/2) / d)^(1 / (1 - beta))`.
    pub fn power_law(beta: f64, d: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::param("beta", format!("{beta} outside [0, 1)")));
        }
        if d == 0 {
            return Err(Error::param("d", "must be at least 1"));
        }
        let exponent = 1.0 / (1.0 - beta);
        let n = d as f64;
        let lambdas: Vec<f64> = (1..=d).map(|i| ((i as f64 - 0.5) / n).powf(exponent)).collect();
        Ok(Spectrum::distinct(&lambdas))
    }

    /// `lambda_i = sqrt(d / sum_j (j/(d+1))^(-2/s)) * (i/(d+1))^(-1/s)`.
    ///
    /// The prefactor normalizes `Tr(K^2)/d` to one; `Tr(K)/d` is whatever
    /// the shape gives.
    pub fn cond(s: f64, d: usize) -> Result<Self> {
        if !(s > 2.0) || !s.is_finite() {
            return Err(Error::param("s", format!("{s} must exceed 2")));
        }
        if d == 0 {
            return Err(Error::param("d", "must be at least 1"));
        }
        let m = (d + 1) as f64;
        let norm: f64 = (1..=d).map(|j| (j as f64 / m).powf(-2.0 / s)).sum();
        let prefactor = (d as f64 / norm).sqrt();
        let lambdas: Vec<f64> = (1..=d).map(|i| prefactor * (i as f64 / m).powf(-1.0 / s)).collect();
        Ok(Spectrum::distinct(&lambdas))
    }

    pub fn identity(d: usize) -> Result<Self> {
        Spectrum::from_groups(vec![Group { lambda: 1.0, weight: 1.0 }], d)
    }

    /// Groups exactly equal values; `d` is the list length.
    pub fn explicit(lambdas: &[f64]) -> Result<Self> {
        if lambdas.is_empty() {
            return Err(Error::param("lambdas", "eigenvalue list is empty"));
        }
        if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::param("lambdas", format!("eigenvalue {bad} is not a finite non-negative number")));
        }
        let mut sorted = lambdas.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let n = sorted.len();
        let mut groups: Vec<Group> = Vec::new();
        let mut start = 0;
        for i in 1..=n {
            if i == n || sorted[i] != sorted[start] {
                groups.push(Group {
                    lambda: sorted[start],
                    weight: (i - start) as f64 / n as f64,
                });
                start = i;
            }
        }
        Spectrum::from_groups(groups, n)
    }

    // every value its own group of weight 1/d
    fn distinct(lambdas: &[f64]) -> Self {
        let w = 1.0 / lambdas.len() as f64;
        Spectrum {
            groups: lambdas.iter().map(|&lambda| Group { lambda, weight: w }).collect(),
            d: lambdas.len(),
        }
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Same eigenvalue distribution in a different ambient dimension.
    pub fn with_dimension(&self, d: usize) -> Result<Self> {
        Spectrum::from_groups(self.groups.clone(), d)
    }

    /// `Tr(K)/d`.
    pub fn avg_eig(&self) -> f64 {
        self.groups.iter().map(|g| g.weight * g.lambda).sum()
    }

    /// `Tr(K^2)/d`.
    pub fn avg_eig2(&self) -> f64 {
        self.groups.iter().map(|g| g.weight * g.lambda * g.lambda).sum()
    }

    pub fn lambda_min(&self) -> f64 {
        self.groups.iter().map(|g| g.lambda).fold(f64::INFINITY, f64::min)
    }

    pub fn lambda_max(&self) -> f64 {
        self.groups.iter().map(|g| g.lambda).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Expands the groups into `d` eigenvalues. Fails if some group weight is
    /// not a multiple of `1/d`.
    pub fn expand(&self) -> Result<Vec<f64>> {
        let n = self.d as f64;
        let mut out = Vec::with_capacity(self.d);
        for g in &self.groups {
            let count = (g.weight * n).round();
            if (count - g.weight * n).abs() > 1e-6 {
                return Err(Error::param(
                    "d",
                    format!("group weight {} is not a multiple of 1/{}", g.weight, self.d),
                ));
            }
            out.extend(std::iter::repeat(g.lambda).take(count as usize));
        }
        if out.len() != self.d {
            return Err(Error::param("d", format!("groups expand to {} eigenvalues, expected {}", out.len(), self.d)));
        }
        Ok(out)
    }

    /// Plain-text form: a `# d=<int>` header then one `lambda,weight` per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("# d={}\n", self.d);
        for g in &self.groups {
            let _ = writeln!(s, "{},{}", g.lambda, g.weight);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut d = None;
        let mut groups = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("d=") {
                    d = Some(v.trim().parse::<usize>().map_err(|e| Error::Parse(format!("line {}: bad d: {e}", lineno + 1)))?);
                }
                continue;
            }
            let (l, w) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `lambda,weight`", lineno + 1)))?;
            let lambda = l.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let weight = w.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            groups.push(Group { lambda, weight });
        }
        let d = d.ok_or_else(|| Error::Parse("missing `# d=<int>` header".into()))?;
        Spectrum::from_groups(groups, d)
    }
}
