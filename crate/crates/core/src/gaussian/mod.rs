//! Gaussian dependence models, multivariate normal densities, Vecchia
//! factorisations of the Gaussian density and Gaussian simulation.

mod cdf;

pub use cdf::{
    bvn_cdf, bvn_upper, mvn_cdf, norm_cdf, norm_pdf, norm_quantile, CdfEstimate, CdfOptions, MvnCdf,
    LN_SQRT_2PI,
};
#[cfg(test)]
pub(crate) use cdf::adaptive_gl;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{submatrix, Chol};
use crate::spatial::{conditioning_sets, OrderingPlan, SiteSet};
use crate::{replicate_rng, DataMatrix};

/// Isotropic stationary correlation functions with unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CorrelationModel {
    /// `ρ(h) = exp(-h/λ)`.
    Exponential { lambda: f64 },
    /// `ρ(h) = exp(-(h/λ)^κ)`, `κ ∈ (0, 2]`.
    PoweredExponential { lambda: f64, kappa: f64 },
}

impl CorrelationModel {
    pub fn exponential(lambda: f64) -> Result<Self> {
        let m = CorrelationModel::Exponential { lambda };
        m.validate()?;
        Ok(m)
    }

    pub fn powered_exponential(lambda: f64, kappa: f64) -> Result<Self> {
        let m = CorrelationModel::PoweredExponential { lambda, kappa };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let lambda = self.lambda();
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("range lambda = {lambda} must be positive")));
        }
        if let CorrelationModel::PoweredExponential { kappa, .. } = *self {
            if !(kappa > 0.0 && kappa <= 2.0) {
                return Err(Error::invalid(format!("shape kappa = {kappa} must lie in (0, 2]")));
            }
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            CorrelationModel::Exponential { lambda } | CorrelationModel::PoweredExponential { lambda, .. } => {
                lambda
            }
        }
    }

    pub fn kappa(&self) -> f64 {
        match *self {
            CorrelationModel::Exponential { .. } => 1.0,
            CorrelationModel::PoweredExponential { kappa, .. } => kappa,
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            CorrelationModel::Exponential { .. } => &["lambda"],
            CorrelationModel::PoweredExponential { .. } => &["lambda", "kappa"],
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            CorrelationModel::Exponential { lambda } => vec![lambda],
            CorrelationModel::PoweredExponential { lambda, kappa } => vec![lambda, kappa],
        }
    }

    /// Same family with a new parameter vector (ordered as [`Self::params`]).
    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        let expected = self.param_names().len();
        if p.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: p.len() });
        }
        let m = match self {
            CorrelationModel::Exponential { .. } => CorrelationModel::Exponential { lambda: p[0] },
            CorrelationModel::PoweredExponential { .. } => {
                CorrelationModel::PoweredExponential { lambda: p[0], kappa: p[1] }
            }
        };
        m.validate()?;
        Ok(m)
    }

    pub fn correlation(&self, h: f64) -> f64 {
        match *self {
            CorrelationModel::Exponential { lambda } => (-h / lambda).exp(),
            CorrelationModel::PoweredExponential { lambda, kappa } => (-(h / lambda).powf(kappa)).exp(),
        }
    }

    /// `∂ρ(h)/∂ψ_i`.
    pub fn d_correlation(&self, h: f64, i: usize) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        let (lambda, kappa) = (self.lambda(), self.kappa());
        let u = (h / lambda).powf(kappa);
        let rho = (-u).exp();
        match i {
            0 => rho * kappa * u / lambda,
            1 => -rho * u * (h / lambda).ln(),
            _ => panic!("parameter index {i} out of range"),
        }
    }

    /// `∂²ρ(h)/∂ψ_i∂ψ_j`.
    pub fn d2_correlation(&self, h: f64, i: usize, j: usize) -> f64 {
        if h == 0.0 {
            return 0.0;
        }
        let (lambda, kappa) = (self.lambda(), self.kappa());
        let u = (h / lambda).powf(kappa);
        let l = (h / lambda).ln();
        let rho = (-u).exp();
        let l2 = lambda * lambda;
        match (i.min(j), i.max(j)) {
            (0, 0) => rho * (kappa * kappa * u * u - kappa * kappa * u - kappa * u) / l2,
            (0, 1) => rho * (u / lambda) * (1.0 + kappa * l - kappa * u * l),
            (1, 1) => rho * l * l * u * (u - 1.0),
            _ => panic!("parameter index out of range"),
        }
    }
}

/// Correlation matrix of the sites listed in `idx`.
pub fn correlation_block(model: &CorrelationModel, sites: &SiteSet, idx: &[usize]) -> DMatrix<f64> {
    cross_block(model, sites, idx, idx)
}

/// Cross-correlation between the sites in `rows` and those in `cols`.
pub fn cross_block(model: &CorrelationModel, sites: &SiteSet, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        if rows[i] == cols[j] {
            1.0
        } else {
            model.correlation(sites.distance(rows[i], cols[j]))
        }
    })
}

/// A zero-mean Gaussian vector with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianJoint {
    sigma: DMatrix<f64>,
    chol: Chol,
}

impl GaussianJoint {
    pub fn from_covariance(sigma: DMatrix<f64>) -> Result<Self> {
        let n = sigma.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (sigma[(i, j)], sigma[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::invalid(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        let chol = Chol::new(&sigma)?;
        Ok(GaussianJoint { sigma, chol })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn log_det(&self) -> f64 {
        self.chol.log_det()
    }
}

/// Correlation matrix of all sites under `model`.
pub fn corr_matrix(model: &CorrelationModel, sites: &SiteSet) -> Result<GaussianJoint> {
    model.validate()?;
    let idx: Vec<usize> = (0..sites.len()).collect();
    GaussianJoint::from_covariance(correlation_block(model, sites, &idx))
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Log density of `N(0, Σ)` from a prepared factor.
pub(crate) fn chol_logpdf(chol: &Chol, z: &[f64]) -> f64 {
    -0.5 * (2.0 * LN_SQRT_2PI * z.len() as f64 + chol.log_det() + chol.quad_form(z))
}

/// Log density of `N(0, Σ)` at `z`.
pub fn mvn_logpdf(joint: &GaussianJoint, z: &[f64]) -> Result<f64> {
    check_len(joint.dim(), z.len())?;
    Ok(chol_logpdf(&joint.chol, z))
}

/// Log density of `N(0, Σ)` for an explicit (small) covariance matrix.
pub fn logpdf_cov(sigma: &DMatrix<f64>, z: &[f64]) -> Result<f64> {
    check_len(sigma.nrows(), z.len())?;
    Ok(chol_logpdf(&Chol::new(sigma)?, z))
}

/// Conditional mean and variance of component `j` given the components in
/// `s`.
fn conditional_moments(sigma: &DMatrix<f64>, j: usize, s: &[usize], z: &[f64]) -> Result<(f64, f64)> {
    if s.is_empty() {
        return Ok((0.0, sigma[(j, j)]));
    }
    let ss = submatrix(sigma, s, s);
    let chol = Chol::new(&ss)?;
    let b: Vec<f64> = s.iter().map(|&k| sigma[(k, j)]).collect();
    let w = chol.solve(&b);
    let mean: f64 = w.iter().zip(s).map(|(wi, &k)| wi * z[k]).sum();
    let var = sigma[(j, j)] - w.iter().zip(&b).map(|(a, b)| a * b).sum::<f64>();
    if !(var > 0.0) {
        return Err(Error::NotPositiveDefinite { minor: s.len() + 1 });
    }
    Ok((mean, var))
}

/// `log f(z_j | z_S)`; `z` holds all `D` components.
pub fn mvn_conditional_logpdf(joint: &GaussianJoint, j: usize, s: &[usize], z: &[f64]) -> Result<f64> {
    check_len(joint.dim(), z.len())?;
    if j >= joint.dim() || s.iter().any(|&k| k >= joint.dim()) {
        return Err(Error::invalid("site index out of range"));
    }
    if s.contains(&j) {
        return Err(Error::invalid(format!("conditioning set contains the target {j}")));
    }
    let (mean, var) = conditional_moments(&joint.sigma, j, s, z)?;
    let r = z[j] - mean;
    Ok(-LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * r * r / var)
}

/// Vecchia approximation `Σ_j log f(z_{p(j)} | z_{S_{d-1}(j;p)})` of the
/// Gaussian log density.
pub fn vecchia_gauss_logpdf(
    model: &CorrelationModel,
    sites: &SiteSet,
    plan: &OrderingPlan,
    d: usize,
    z: &[f64],
) -> Result<f64> {
    model.validate()?;
    check_len(sites.len(), z.len())?;
    let sets = conditioning_sets(sites, plan, d)?;
    let terms: Result<Vec<f64>> = plan
        .perm()
        .par_iter()
        .zip(&sets)
        .map(|(&j, s)| {
            if s.is_empty() {
                return Ok(-LN_SQRT_2PI - 0.5 * z[j] * z[j]);
            }
            let mut idx = s.clone();
            idx.push(j);
            let local = correlation_block(model, sites, &idx);
            let zl: Vec<f64> = idx.iter().map(|&k| z[k]).collect();
            let last = idx.len() - 1;
            let (mean, var) = conditional_moments(&local, last, &(0..last).collect::<Vec<_>>(), &zl)?;
            let r = zl[last] - mean;
            Ok(-LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * r * r / var)
        })
        .collect();
    Ok(terms?.iter().sum())
}

/// `KL(f ‖ f_{V;d})` in closed form from conditional entropies.
pub fn kl_vecchia(model: &CorrelationModel, sites: &SiteSet, plan: &OrderingPlan, d: usize) -> Result<f64> {
    model.validate()?;
    let sets = conditioning_sets(sites, plan, d)?;
    let perm = plan.perm();
    // full-history conditional variances are the squared diagonal of the
    // Cholesky factor of the permuted covariance
    let permuted = correlation_block(model, sites, perm);
    let full = Chol::new(&permuted)?;
    let approx: Result<Vec<f64>> = perm
        .par_iter()
        .zip(&sets)
        .map(|(&j, s)| {
            let mut idx = s.clone();
            idx.push(j);
            let local = correlation_block(model, sites, &idx);
            let last = idx.len() - 1;
            let dummy = vec![0.0; idx.len()];
            Ok(conditional_moments(&local, last, &(0..last).collect::<Vec<_>>(), &dummy)?.1)
        })
        .collect();
    let approx = approx?;
    let l = full.factor();
    let kl: f64 = approx
        .iter()
        .enumerate()
        .map(|(j, v)| 0.5 * (v.ln() - 2.0 * l[(j, j)].ln()))
        .sum();
    Ok(kl)
}

/// `n` independent draws from `N(0, Σ)`, one row per replicate.
pub fn simulate_gauss(joint: &GaussianJoint, n: usize, seed: u64) -> DataMatrix {
    let dim = joint.dim();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            let e: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            joint.chol.mul_lower(&e)
        })
        .collect();
    DataMatrix::from_fn(n, dim, |i, j| rows[i][j])
}
