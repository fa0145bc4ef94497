//! Composite, Vecchia and weighted-Vecchia objectives over replicated data,
//! their maximisation and the associated uncertainty quantification.

mod cv;
mod fit;
mod optimize;

pub use cv::{cv_logscore, maxmin_validation_sites};
pub use fit::{
    fit, resample_ci, sandwich_vcov, FitOptions, FitResult, Interval, ResampleKind, ResampleOptions, ResampleResult,
    Sandwich,
};
pub use optimize::{nelder_mead, NelderMeadOptions, NelderMeadResult};

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{chol_logpdf, correlation_block, CdfOptions, CorrelationModel};
use crate::linalg::Chol;
use crate::maxstable::{MaxStableModel, MaxStableTerm, Variogram, PARTITION_CAP};
use crate::scheme::WeightedScheme;
use crate::spatial::{build_ordering, truncated_subsets, OrderingKind, OrderingPlan, SiteSet, SubsetPlan};
use crate::DataMatrix;

/// Any dependence model with a computable finite-dimensional density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Model {
    Gaussian(CorrelationModel),
    MaxStable(MaxStableModel),
}

/// Domain of one parameter, used to map it to the real line for optimisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Positive,
    /// Open interval; the upper end may be attainable but is approached only
    /// asymptotically.
    Interval(f64, f64),
}

impl Domain {
    pub fn to_real(&self, x: f64) -> f64 {
        match *self {
            Domain::Positive => x.ln(),
            Domain::Interval(lo, hi) => {
                // keep boundary values such as kappa = 2 or alpha = 1 finite
                let eps = 1e-9 * (hi - lo);
                let u = ((x - lo) / (hi - lo)).clamp(eps, 1.0 - eps);
                (u / (1.0 - u)).ln()
            }
        }
    }

    pub fn from_real(&self, t: f64) -> f64 {
        match *self {
            Domain::Positive => t.exp(),
            Domain::Interval(lo, hi) => lo + (hi - lo) / (1.0 + (-t).exp()),
        }
    }

    /// `dx/dt` at `t`.
    pub fn jacobian(&self, t: f64) -> f64 {
        match *self {
            Domain::Positive => t.exp(),
            Domain::Interval(lo, hi) => {
                let s = 1.0 / (1.0 + (-t).exp());
                (hi - lo) * s * (1.0 - s)
            }
        }
    }
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Gaussian(m) => m.validate(),
            Model::MaxStable(m) => m.validate(),
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Model::Gaussian(m) => m.param_names(),
            Model::MaxStable(m) => m.param_names(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            Model::Gaussian(m) => m.params(),
            Model::MaxStable(m) => m.params(),
        }
    }

    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        Ok(match self {
            Model::Gaussian(m) => Model::Gaussian(m.with_params(p)?),
            Model::MaxStable(m) => Model::MaxStable(m.with_params(p)?),
        })
    }

    pub fn domains(&self) -> Vec<Domain> {
        use Domain::*;
        match self {
            Model::Gaussian(CorrelationModel::Exponential { .. }) => vec![Positive],
            Model::Gaussian(CorrelationModel::PoweredExponential { .. }) => vec![Positive, Interval(0.0, 2.0)],
            Model::MaxStable(MaxStableModel::BrownResnick(Variogram::Bounded { .. })) => vec![Positive, Positive],
            Model::MaxStable(MaxStableModel::BrownResnick(Variogram::PowerAniso { .. })) => {
                vec![Interval(0.0, 2.0), Positive, Positive, Interval(-FRAC_PI_2, FRAC_PI_2)]
            }
            Model::MaxStable(MaxStableModel::Logistic { .. }) => vec![Interval(0.0, 1.0)],
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Model::Gaussian(_))
    }

    /// Short family name used in reports.
    pub fn family(&self) -> &'static str {
        match self {
            Model::Gaussian(CorrelationModel::Exponential { .. }) => "gaussian_exponential",
            Model::Gaussian(CorrelationModel::PoweredExponential { .. }) => "gaussian_powered_exponential",
            Model::MaxStable(MaxStableModel::BrownResnick(Variogram::Bounded { .. })) => "brown_resnick_bounded",
            Model::MaxStable(MaxStableModel::BrownResnick(Variogram::PowerAniso { .. })) => "brown_resnick_power",
            Model::MaxStable(MaxStableModel::Logistic { .. }) => "logistic",
        }
    }
}

impl From<CorrelationModel> for Model {
    fn from(m: CorrelationModel) -> Self {
        Model::Gaussian(m)
    }
}

impl From<MaxStableModel> for Model {
    fn from(m: MaxStableModel) -> Self {
        Model::MaxStable(m)
    }
}

fn default_omega() -> f64 {
    -1.0
}

/// Which likelihood to use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LikelihoodSpec {
    Full,
    Composite {
        d: usize,
        delta: f64,
    },
    Vecchia {
        d: usize,
        ordering: OrderingKind,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_omega")]
        omega: f64,
    },
}

impl LikelihoodSpec {
    pub fn vecchia(d: usize, ordering: OrderingKind) -> Self {
        LikelihoodSpec::Vecchia { d, ordering, seed: 0, omega: -1.0 }
    }

    /// Weighted scheme for `sites`. Conditioning sets use Euclidean distance
    /// so that the scheme does not move with anisotropy parameters.
    pub fn scheme(&self, sites: &SiteSet, model: &Model) -> Result<WeightedScheme> {
        match *self {
            LikelihoodSpec::Full => {
                if !model.is_gaussian() && sites.len() > PARTITION_CAP {
                    return Err(Error::PartitionCapacity { d: sites.len(), cap: PARTITION_CAP });
                }
                WeightedScheme::full(sites.len())
            }
            LikelihoodSpec::Composite { d, delta } => {
                let plan = truncated_subsets(sites, d, delta)?;
                WeightedScheme::composite(&plan)
            }
            LikelihoodSpec::Vecchia { d, ordering, seed, omega } => {
                let plan = build_ordering(sites, ordering, seed);
                WeightedScheme::vecchia(sites, &plan, d, omega)
            }
        }
    }
}

/// Density evaluator for one term at a fixed parameter value.
enum TermDensity {
    Gauss(Chol),
    MaxStable(MaxStableTerm),
}

impl TermDensity {
    fn logpdf(&self, z: &[f64]) -> Result<f64> {
        match self {
            TermDensity::Gauss(c) => Ok(chol_logpdf(c, z)),
            TermDensity::MaxStable(t) => t.logpdf(z),
        }
    }
}

fn check_data(data: &DataMatrix, sites: &SiteSet) -> Result<()> {
    if data.ncols() != sites.len() {
        return Err(Error::DimensionMismatch { expected: sites.len(), got: data.ncols() });
    }
    Ok(())
}

/// Per-replicate values of `Σ_S w_S log f(z_{i,S})`.
pub fn replicate_logliks(
    model: &Model,
    data: &DataMatrix,
    sites: &SiteSet,
    scheme: &WeightedScheme,
    cdf: &CdfOptions,
) -> Result<Vec<f64>> {
    check_data(data, sites)?;
    model.validate()?;
    if scheme.is_empty() {
        return Err(Error::EmptyPlan(format!("scheme `{}` has no terms", scheme.label())));
    }
    let terms = scheme.terms();
    let wrap = |term: usize, replicate: usize, e: Error| Error::Term {
        replicate,
        term,
        sites: terms[term].sites.clone(),
        source: Box::new(e),
    };
    let dens: Vec<TermDensity> = terms
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            if let Some(&bad) = t.sites.iter().find(|&&s| s >= sites.len()) {
                return Err(Error::invalid(format!("term {k} references site {bad} of {}", sites.len())));
            }
            let built = match model {
                Model::Gaussian(m) => Chol::new(&correlation_block(m, sites, &t.sites)).map(TermDensity::Gauss),
                Model::MaxStable(m) => MaxStableTerm::new(m, sites, &t.sites, cdf).map(TermDensity::MaxStable),
            };
            built.map_err(|e| wrap(k, 0, e))
        })
        .collect::<Result<_>>()?;
    (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let mut z = Vec::with_capacity(scheme.max_dim());
            let mut total = 0.0;
            for (k, (t, d)) in terms.iter().zip(&dens).enumerate() {
                if t.weight == 0.0 {
                    continue;
                }
                z.clear();
                z.extend(t.sites.iter().map(|&s| data[(i, s)]));
                let lp = d.logpdf(&z).map_err(|e| wrap(k, i, e))?;
                if !lp.is_finite() {
                    return Err(wrap(k, i, Error::Numerical(format!("log density is {lp}"))));
                }
                total += t.weight * lp;
            }
            Ok(total)
        })
        .collect()
}

/// Objective summed over replicates.
pub fn scheme_loglik(model: &Model, data: &DataMatrix, sites: &SiteSet, scheme: &WeightedScheme) -> Result<f64> {
    Ok(replicate_logliks(model, data, sites, scheme, &CdfOptions::default())?.iter().sum())
}

/// Truncated composite log-likelihood with unit weights.
pub fn composite_loglik(model: &Model, data: &DataMatrix, sites: &SiteSet, plan: &SubsetPlan) -> Result<f64> {
    scheme_loglik(model, data, sites, &WeightedScheme::composite(plan)?)
}

/// Weighted Vecchia log-likelihood; `omega = -1` is the Vecchia likelihood.
pub fn vecchia_loglik(
    model: &Model,
    data: &DataMatrix,
    sites: &SiteSet,
    plan: &OrderingPlan,
    d: usize,
    omega: f64,
) -> Result<f64> {
    scheme_loglik(model, data, sites, &WeightedScheme::vecchia(sites, plan, d, omega)?)
}
