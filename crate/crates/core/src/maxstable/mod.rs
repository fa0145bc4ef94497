//! Max-stable dependence models on the unit Fréchet scale: Brown–Resnick
//! processes with bounded or anisotropic power variograms, and the
//! exchangeable logistic model.

mod density;
mod empirical;
mod partition;
mod simulate;

pub use density::{
    exponent_v, exponent_v_partial, maxstable_conditional_logpdf, maxstable_logpdf, MaxStableTerm,
};
pub use empirical::{
    empirical_extremal_coefficient, madogram_theta, pairwise_extremal_coefficients, BinSummary,
    Binning, PairEstimate,
};
pub use partition::{bell, set_partitions, SetPartitionIter, PARTITION_CAP};
pub use simulate::{simulate_brown_resnick, simulate_logistic, simulate_maxstable};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::norm_cdf;
use crate::spatial::{AnisotropyParams, SiteSet};

/// Variogram `Γ(h)` of the Gaussian process driving a Brown–Resnick model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variogram", rename_all = "snake_case")]
pub enum Variogram {
    /// `2σ²{1 - exp(-‖h‖/λ)}`.
    Bounded { lambda: f64, sigma: f64 },
    /// `2 (sqrt(hᵀAh)/λ)^α` with the rotation/stretch matrix `A(θ, a)`.
    PowerAniso { alpha: f64, lambda: f64, a: f64, theta: f64 },
}

impl Variogram {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Variogram::Bounded { lambda, sigma } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::invalid(format!("range lambda = {lambda} must be positive")));
                }
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::invalid(format!("sigma = {sigma} must be positive")));
                }
            }
            Variogram::PowerAniso { alpha, lambda, a, theta } => {
                if !(alpha > 0.0 && alpha < 2.0) {
                    return Err(Error::invalid(format!("smoothness alpha = {alpha} must lie in (0, 2)")));
                }
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::invalid(format!("range lambda = {lambda} must be positive")));
                }
                AnisotropyParams { theta, a }.validate()?;
            }
        }
        Ok(())
    }

    pub fn gamma(&self, h: [f64; 2]) -> f64 {
        match *self {
            Variogram::Bounded { lambda, sigma } => {
                let r = h[0].hypot(h[1]);
                2.0 * sigma * sigma * -(-r / lambda).exp_m1()
            }
            Variogram::PowerAniso { alpha, lambda, a, theta } => {
                let r = AnisotropyParams { theta, a }.distance(h);
                2.0 * (r / lambda).powf(alpha)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MaxStableModel {
    BrownResnick(Variogram),
    /// `V(z) = (Σ z_i^{-1/α})^α`, `α ∈ (0, 1]`.
    Logistic { alpha: f64 },
}

impl MaxStableModel {
    pub fn brown_resnick_bounded(lambda: f64, sigma: f64) -> Result<Self> {
        let m = MaxStableModel::BrownResnick(Variogram::Bounded { lambda, sigma });
        m.validate()?;
        Ok(m)
    }

    pub fn brown_resnick_power(alpha: f64, lambda: f64, aniso: AnisotropyParams) -> Result<Self> {
        let m = MaxStableModel::BrownResnick(Variogram::PowerAniso {
            alpha,
            lambda,
            a: aniso.a,
            theta: aniso.theta,
        });
        m.validate()?;
        Ok(m)
    }

    pub fn logistic(alpha: f64) -> Result<Self> {
        let m = MaxStableModel::Logistic { alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MaxStableModel::BrownResnick(v) => v.validate(),
            MaxStableModel::Logistic { alpha } => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::invalid(format!("logistic alpha = {alpha} must lie in (0, 1]")));
                }
                Ok(())
            }
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            MaxStableModel::BrownResnick(Variogram::Bounded { .. }) => &["lambda", "sigma"],
            MaxStableModel::BrownResnick(Variogram::PowerAniso { .. }) => &["alpha", "lambda", "a", "theta"],
            MaxStableModel::Logistic { .. } => &["alpha"],
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            MaxStableModel::BrownResnick(Variogram::Bounded { lambda, sigma }) => vec![lambda, sigma],
            MaxStableModel::BrownResnick(Variogram::PowerAniso { alpha, lambda, a, theta }) => {
                vec![alpha, lambda, a, theta]
            }
            MaxStableModel::Logistic { alpha } => vec![alpha],
        }
    }

    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        let expected = self.param_names().len();
        if p.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: p.len() });
        }
        let m = match self {
            MaxStableModel::BrownResnick(Variogram::Bounded { .. }) => {
                MaxStableModel::BrownResnick(Variogram::Bounded { lambda: p[0], sigma: p[1] })
            }
            MaxStableModel::BrownResnick(Variogram::PowerAniso { .. }) => {
                MaxStableModel::BrownResnick(Variogram::PowerAniso { alpha: p[0], lambda: p[1], a: p[2], theta: p[3] })
            }
            MaxStableModel::Logistic { .. } => MaxStableModel::Logistic { alpha: p[0] },
        };
        m.validate()?;
        Ok(m)
    }

    /// True when dependence varies with direction.
    pub fn is_anisotropic(&self) -> bool {
        matches!(self, MaxStableModel::BrownResnick(Variogram::PowerAniso { a, theta, .. }) if *a != 1.0 || *theta != 0.0)
    }
}

/// Pairwise extremal coefficient `θ(h) = V(1, 1)`.
pub fn extremal_coefficient(model: &MaxStableModel, h: [f64; 2]) -> f64 {
    match model {
        MaxStableModel::BrownResnick(v) => 2.0 * norm_cdf(v.gamma(h).sqrt() / 2.0),
        MaxStableModel::Logistic { alpha } => 2f64.powf(*alpha),
    }
}

/// Extremal coefficient between two sites of a site set.
pub fn extremal_coefficient_sites(model: &MaxStableModel, sites: &SiteSet, i: usize, j: usize) -> f64 {
    if i == j {
        return 1.0;
    }
    extremal_coefficient(model, sites.lag(i, j))
}

/// Lag with the given length and direction (degrees counter-clockwise from
/// the first axis).
pub fn lag_in_direction(distance: f64, degrees: f64) -> [f64; 2] {
    let t = degrees.to_radians();
    [distance * t.cos(), distance * t.sin()]
}
