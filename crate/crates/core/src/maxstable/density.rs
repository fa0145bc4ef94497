//! Exponent functions, their partial derivatives and the partition-sum
//! density.

use nalgebra::DMatrix;

use super::partition::{cached_masks, set_partitions, PARTITION_CAP};
use super::{MaxStableModel, Variogram};
use crate::error::{Error, Result};
use crate::gaussian::{CdfOptions, MvnCdf, LN_SQRT_2PI};
use crate::linalg::Chol;
use crate::spatial::SiteSet;

/// Everything needed to evaluate `-V_τ` for one subset `τ` of a Brown–Resnick
/// term, with reference site `k = min τ`, `A = τ \ {k}` and `B` the
/// complement of `τ`.
#[derive(Debug, Clone)]
struct PartialPlan {
    k: usize,
    a: Vec<usize>,
    b: Vec<usize>,
    chol_a: Option<Chol>,
    /// `Σ_BA Σ_AA⁻¹`
    reg: DMatrix<f64>,
    cdf_b: Option<MvnCdf>,
}

#[derive(Debug, Clone)]
enum Kind {
    Logistic { alpha: f64 },
    BrownResnick { gamma: DMatrix<f64>, plans: Vec<PartialPlan>, opts: CdfOptions },
}

/// A max-stable marginal density prepared for one set of sites and one
/// parameter value, to be evaluated at many replicates.
#[derive(Debug, Clone)]
pub struct MaxStableTerm {
    dim: usize,
    kind: Kind,
}

fn gamma_matrix(v: &Variogram, sites: &SiteSet, idx: &[usize]) -> Result<DMatrix<f64>> {
    let d = idx.len();
    let mut g = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let val = v.gamma(sites.lag(idx[i], idx[j]));
            if !(val > 0.0) || !val.is_finite() {
                return Err(Error::DegeneratePair(idx[i], idx[j]));
            }
            g[(i, j)] = val;
            g[(j, i)] = val;
        }
    }
    Ok(g)
}

impl MaxStableTerm {
    pub fn new(model: &MaxStableModel, sites: &SiteSet, idx: &[usize], opts: &CdfOptions) -> Result<Self> {
        model.validate()?;
        let dim = idx.len();
        if dim == 0 {
            return Err(Error::invalid("max-stable density needs at least one site"));
        }
        if dim > PARTITION_CAP {
            return Err(Error::PartitionCapacity { d: dim, cap: PARTITION_CAP });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= sites.len()) {
            return Err(Error::invalid(format!("site index {bad} out of range")));
        }
        let kind = match model {
            MaxStableModel::Logistic { alpha } => Kind::Logistic { alpha: *alpha },
            MaxStableModel::BrownResnick(v) => {
                let gamma = gamma_matrix(v, sites, idx)?;
                let plans = (1u32..(1 << dim)).map(|mask| plan_for(&gamma, mask)).collect::<Result<_>>()?;
                Kind::BrownResnick { gamma, plans, opts: *opts }
            }
        };
        Ok(MaxStableTerm { dim, kind })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: z.len() });
        }
        if let Some(v) = z.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("Fréchet value {v} must be positive and finite")));
        }
        Ok(())
    }

    /// `log{-V_τ(z)}` for the subset encoded by `mask`; `-∞` when the partial
    /// derivative vanishes (e.g. logistic with `α = 1`).
    pub fn log_neg_partial(&self, z: &[f64], mask: u32) -> Result<f64> {
        self.check(z)?;
        if mask == 0 || mask >= (1 << self.dim) {
            return Err(Error::invalid(format!("subset mask {mask:#b} out of range")));
        }
        self.log_neg_partial_unchecked(z, mask)
    }

    fn log_neg_partial_unchecked(&self, z: &[f64], mask: u32) -> Result<f64> {
        match &self.kind {
            Kind::Logistic { alpha } => Ok(logistic_log_partial(*alpha, z, mask)),
            Kind::BrownResnick { gamma, plans, opts } => {
                br_log_partial(gamma, &plans[(mask - 1) as usize], z, opts)
            }
        }
    }

    /// Exponent function `V(z)`.
    pub fn exponent(&self, z: &[f64]) -> Result<f64> {
        self.check(z)?;
        match &self.kind {
            Kind::Logistic { alpha } => {
                let s: f64 = z.iter().map(|v| v.powf(-1.0 / alpha)).sum();
                Ok(s.powf(*alpha))
            }
            Kind::BrownResnick { .. } => {
                // Euler's identity for functions homogeneous of order -1
                let mut v = 0.0;
                for k in 0..self.dim {
                    v += z[k] * self.log_neg_partial_unchecked(z, 1 << k)?.exp();
                }
                Ok(v)
            }
        }
    }

    /// `log f(z) = -V(z) + log Σ_π Π_{τ∈π} {-V_τ(z)}`.
    pub fn logpdf(&self, z: &[f64]) -> Result<f64> {
        self.check(z)?;
        let n_sub = (1usize << self.dim) - 1;
        let mut lp = Vec::with_capacity(n_sub);
        for mask in 1..=n_sub as u32 {
            let v = self.log_neg_partial_unchecked(z, mask)?;
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::Numerical(format!("partial derivative for subset {mask:#b} is {v}")));
            }
            lp.push(v);
        }
        let v = match &self.kind {
            Kind::Logistic { .. } => self.exponent(z)?,
            Kind::BrownResnick { .. } => (0..self.dim).map(|k| z[k] * lp[(1 << k) - 1].exp()).sum(),
        };
        let mut acc = LogSumExp::default();
        let term = |p: &[u32]| p.iter().map(|&m| lp[(m - 1) as usize]).sum::<f64>();
        if let Some(parts) = cached_masks(self.dim) {
            parts.iter().for_each(|p| acc.push(term(p)));
        } else {
            let mut it = set_partitions(self.dim)?;
            while let Some(p) = it.next_masks() {
                acc.push(term(&p));
            }
        }
        let log_sum = acc.value();
        if log_sum == f64::NEG_INFINITY {
            return Err(Error::Numerical("partition sum underflowed to zero".into()));
        }
        Ok(-v + log_sum)
    }
}

#[derive(Default)]
struct LogSumExp {
    max: f64,
    sum: f64,
    any: bool,
}

impl LogSumExp {
    fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if !self.any {
            self.max = x;
            self.sum = 1.0;
            self.any = true;
        } else if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn value(&self) -> f64 {
        if self.any {
            self.max + self.sum.ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

fn logistic_log_partial(alpha: f64, z: &[f64], mask: u32) -> f64 {
    let k = mask.count_ones() as usize;
    let s: f64 = z.iter().map(|v| v.powf(-1.0 / alpha)).sum();
    let mut out = (1.0 - k as f64) * alpha.ln() + (alpha - k as f64) * s.ln();
    for m in 1..k {
        out += (m as f64 - alpha).ln();
    }
    for (i, v) in z.iter().enumerate() {
        if mask & (1 << i) != 0 {
            out += (-1.0 / alpha - 1.0) * v.ln();
        }
    }
    out
}

fn plan_for(gamma: &DMatrix<f64>, mask: u32) -> Result<PartialPlan> {
    let d = gamma.nrows();
    let members: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
    let k = members[0];
    let a: Vec<usize> = members[1..].to_vec();
    let b: Vec<usize> = (0..d).filter(|i| mask & (1 << i) == 0).collect();
    // covariance of the log-ratios relative to the reference site
    let sig = |i: usize, j: usize| 0.5 * (gamma[(i, k)] + gamma[(j, k)] - gamma[(i, j)]);
    let cov = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |r, c| sig(rows[r], cols[c]));
    let (chol_a, reg, cond) = if a.is_empty() {
        (None, DMatrix::zeros(b.len(), 0), cov(&b, &b))
    } else {
        let saa = cov(&a, &a);
        let chol = Chol::new(&saa)?;
        let sba = cov(&b, &a);
        let inv = chol.inverse();
        let reg = &sba * &inv;
        let cond = cov(&b, &b) - &reg * sba.transpose();
        let cond = (&cond + cond.transpose()) * 0.5;
        (Some(chol), reg, cond)
    };
    let cdf_b = if b.is_empty() { None } else { Some(MvnCdf::new(&cond)?) };
    Ok(PartialPlan { k, a, b, chol_a, reg, cdf_b })
}

fn br_log_partial(gamma: &DMatrix<f64>, plan: &PartialPlan, z: &[f64], opts: &CdfOptions) -> Result<f64> {
    let k = plan.k;
    let lzk = z[k].ln();
    let ytilde = |i: usize| z[i].ln() - lzk + 0.5 * gamma[(i, k)];
    let mut out = -2.0 * lzk;
    let ya: Vec<f64> = plan.a.iter().map(|&i| ytilde(i)).collect();
    if let Some(chol) = &plan.chol_a {
        out -= plan.a.iter().map(|&i| z[i].ln()).sum::<f64>();
        out += -0.5 * (2.0 * LN_SQRT_2PI * ya.len() as f64 + chol.log_det() + chol.quad_form(&ya));
    }
    if let Some(cdf) = &plan.cdf_b {
        let upper: Vec<f64> = plan
            .b
            .iter()
            .enumerate()
            .map(|(r, &i)| {
                let mean: f64 = (0..ya.len()).map(|c| plan.reg[(r, c)] * ya[c]).sum();
                ytilde(i) - mean
            })
            .collect();
        let est = cdf.cdf(&upper, opts)?;
        out += est.value.ln();
    }
    Ok(out)
}

/// Exponent function of `model` at the sites `idx` (with `z` aligned to
/// `idx`).
pub fn exponent_v(model: &MaxStableModel, sites: &SiteSet, idx: &[usize], z: &[f64]) -> Result<f64> {
    MaxStableTerm::new(model, sites, idx, &CdfOptions::default())?.exponent(z)
}

/// Partial derivative `V_τ(z)` with respect to the positions in `tau` (which
/// index into `idx`).
pub fn exponent_v_partial(
    model: &MaxStableModel,
    sites: &SiteSet,
    idx: &[usize],
    z: &[f64],
    tau: &[usize],
) -> Result<f64> {
    if tau.is_empty() || tau.iter().any(|&t| t >= idx.len()) {
        return Err(Error::invalid("tau must be a non-empty subset of the active positions"));
    }
    let mask = tau.iter().fold(0u32, |m, &t| m | (1 << t));
    let term = MaxStableTerm::new(model, sites, idx, &CdfOptions::default())?;
    Ok(-term.log_neg_partial(z, mask)?.exp())
}

/// Joint log density at the sites `idx`.
pub fn maxstable_logpdf(model: &MaxStableModel, sites: &SiteSet, idx: &[usize], z: &[f64]) -> Result<f64> {
    MaxStableTerm::new(model, sites, idx, &CdfOptions::default())?.logpdf(z)
}

/// `log f(z_j | z_S)`; `z` holds values for every site.
pub fn maxstable_conditional_logpdf(
    model: &MaxStableModel,
    sites: &SiteSet,
    j: usize,
    s: &[usize],
    z: &[f64],
) -> Result<f64> {
    if z.len() != sites.len() {
        return Err(Error::DimensionMismatch { expected: sites.len(), got: z.len() });
    }
    if s.contains(&j) {
        return Err(Error::invalid(format!("conditioning set contains the target {j}")));
    }
    let mut joint = s.to_vec();
    joint.push(j);
    let zj: Vec<f64> = joint.iter().map(|&i| z[i]).collect();
    let num = maxstable_logpdf(model, sites, &joint, &zj)?;
    if s.is_empty() {
        return Ok(num);
    }
    let zs: Vec<f64> = s.iter().map(|&i| z[i]).collect();
    Ok(num - maxstable_logpdf(model, sites, s, &zs)?)
}
