//! Empirical extremal coefficients from the madogram, binned by distance or
//! direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::SiteSet;
use crate::DataMatrix;

/// Madogram estimate of the pairwise extremal coefficient for two columns on
/// the unit Fréchet scale: `ν = ½ mean|F(x) - F(y)|`, `θ = (1+2ν)/(1-2ν)`.
pub fn madogram_theta(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::invalid("the madogram needs at least two replicates"));
    }
    let f = |z: f64| (-1.0 / z).exp();
    let nu = 0.5 * x.iter().zip(y).map(|(&a, &b)| (f(a) - f(b)).abs()).sum::<f64>() / x.len() as f64;
    Ok((1.0 + 2.0 * nu) / (1.0 - 2.0 * nu))
}

/// One site pair with its lag geometry and estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    /// Direction of the lag in degrees, folded into `[0, 180)`.
    pub angle_deg: f64,
    pub theta: f64,
}

/// Madogram estimates for every site pair `i < j`.
pub fn pairwise_extremal_coefficients(data: &DataMatrix, sites: &SiteSet) -> Result<Vec<PairEstimate>> {
    if data.ncols() != sites.len() {
        return Err(Error::DimensionMismatch { expected: sites.len(), got: data.ncols() });
    }
    let cols: Vec<Vec<f64>> = (0..data.ncols()).map(|j| data.column(j).iter().copied().collect()).collect();
    let mut out = Vec::with_capacity(sites.len() * sites.len().saturating_sub(1) / 2);
    for i in 0..sites.len() {
        for j in (i + 1)..sites.len() {
            let h = sites.lag(i, j);
            out.push(PairEstimate {
                i,
                j,
                distance: h[0].hypot(h[1]),
                angle_deg: h[1].atan2(h[0]).to_degrees().rem_euclid(180.0),
                theta: madogram_theta(&cols[i], &cols[j])?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binning {
    /// Bins `[e_k, e_{k+1})`.
    Distance { edges: Vec<f64> },
    /// Axial direction bins `[c - w, c + w)` modulo 180 degrees.
    Direction { centres_deg: Vec<f64>, half_width_deg: f64 },
}

impl Binning {
    /// Equal-width distance bins covering `[0, max)`.
    pub fn distance_classes(max: f64, count: usize) -> Self {
        let edges = (0..=count).map(|k| max * k as f64 / count as f64).collect();
        Binning::Distance { edges }
    }

    /// Direction bins centred at `0, step, 2·step, … < 180` with half-width
    /// `step / 2`.
    pub fn directions(step_deg: f64) -> Self {
        let count = (180.0 / step_deg).round() as usize;
        Binning::Direction {
            centres_deg: (0..count).map(|k| k as f64 * step_deg).collect(),
            half_width_deg: step_deg / 2.0,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Binning::Distance { edges } => edges.len().saturating_sub(1),
            Binning::Direction { centres_deg, .. } => centres_deg.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        match self {
            Binning::Distance { edges } => {
                if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::invalid("distance bin edges must be strictly increasing, at least two"));
                }
            }
            Binning::Direction { centres_deg, half_width_deg } => {
                if centres_deg.is_empty() || !(*half_width_deg > 0.0 && *half_width_deg <= 90.0) {
                    return Err(Error::invalid("direction bins need centres and a half-width in (0, 90]"));
                }
            }
        }
        Ok(())
    }

    /// Bin of a pair, or `None` if it falls outside every bin.
    pub fn assign(&self, pair: &PairEstimate) -> Option<usize> {
        match self {
            Binning::Distance { edges } => {
                let d = pair.distance;
                edges.windows(2).position(|w| d >= w[0] && d < w[1])
            }
            Binning::Direction { centres_deg, half_width_deg } => centres_deg
                .iter()
                .position(|c| (pair.angle_deg - c + half_width_deg).rem_euclid(180.0) < 2.0 * half_width_deg),
        }
    }

    fn bounds(&self, k: usize) -> (f64, f64) {
        match self {
            Binning::Distance { edges } => (edges[k], edges[k + 1]),
            Binning::Direction { centres_deg, half_width_deg } => {
                (centres_deg[k] - half_width_deg, centres_deg[k] + half_width_deg)
            }
        }
    }
}

/// Summary of the pairwise estimates falling in one bin. Statistics are
/// `None` for empty bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_distance: Option<f64>,
    pub mean: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
}

/// Linear-interpolation sample quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bin the pairwise estimates.
pub fn empirical_extremal_coefficient(pairs: &[PairEstimate], binning: &Binning) -> Result<Vec<BinSummary>> {
    binning.validate()?;
    let mut members: Vec<Vec<&PairEstimate>> = vec![Vec::new(); binning.len()];
    for p in pairs {
        if let Some(k) = binning.assign(p) {
            members[k].push(p);
        }
    }
    Ok(members
        .into_iter()
        .enumerate()
        .map(|(k, m)| {
            let (lower, upper) = binning.bounds(k);
            let mut theta: Vec<f64> = m.iter().map(|p| p.theta).collect();
            theta.sort_by(f64::total_cmp);
            let count = theta.len();
            let stat = |f: &dyn Fn(&[f64]) -> f64| (count > 0).then(|| f(&theta));
            BinSummary {
                lower,
                upper,
                count,
                mean_distance: (count > 0).then(|| m.iter().map(|p| p.distance).sum::<f64>() / count as f64),
                mean: stat(&|t| t.iter().sum::<f64>() / t.len() as f64),
                q1: stat(&|t| quantile(t, 0.25)),
                median: stat(&|t| quantile(t, 0.5)),
                q3: stat(&|t| quantile(t, 0.75)),
            }
        })
        .collect())
}
