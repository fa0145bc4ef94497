//! Cross-validated logarithmic score.

use super::{replicate_logliks, Model};
use crate::error::{Error, Result};
use crate::gaussian::CdfOptions;
use crate::scheme::{Term, WeightedScheme};
use crate::spatial::{build_ordering, nearest_among, OrderingKind, SiteSet};
use crate::DataMatrix;

/// Validation sites: the last `ceil(fraction·D)` sites of the max-min
/// ordering built with `seed`.
pub fn maxmin_validation_sites(sites: &SiteSet, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("validation fraction {fraction} must lie in (0, 1)")));
    }
    let plan = build_ordering(sites, OrderingKind::MaxMin, seed);
    let count = (fraction * sites.len() as f64).ceil() as usize;
    Ok(plan.perm()[sites.len() - count..].to_vec())
}

/// `-Σ_i Σ_{j∈V} log f(z_{i,j} | z_{i,T(j)})`, with `T(j)` the `k` training
/// sites nearest to `j` (ties to the smaller index). Lower is better.
pub fn cv_logscore(
    model: &Model,
    data: &DataMatrix,
    sites: &SiteSet,
    validation: &[usize],
    k_neighbors: usize,
) -> Result<f64> {
    let mut is_val = vec![false; sites.len()];
    for &v in validation {
        if v >= sites.len() {
            return Err(Error::invalid(format!("validation site {v} out of range")));
        }
        if is_val[v] {
            return Err(Error::invalid(format!("validation site {v} listed twice")));
        }
        is_val[v] = true;
    }
    if validation.is_empty() {
        return Err(Error::invalid("no validation sites"));
    }
    let training: Vec<usize> = (0..sites.len()).filter(|&s| !is_val[s]).collect();
    if training.len() < k_neighbors {
        return Err(Error::invalid(format!(
            "{} training sites, fewer than the {k_neighbors} neighbours requested",
            training.len()
        )));
    }
    let mut terms = Vec::with_capacity(2 * validation.len());
    for &j in validation {
        let nb = nearest_among(sites, j, &training, k_neighbors);
        let mut joint = nb.clone();
        joint.push(j);
        terms.push(Term { sites: joint, weight: 1.0 });
        if !nb.is_empty() {
            terms.push(Term { sites: nb, weight: -1.0 });
        }
    }
    let scheme = WeightedScheme::new("cv", terms)?;
    let per = replicate_logliks(model, data, sites, &scheme, &CdfOptions::default())?;
    Ok(-per.iter().sum::<f64>())
}
