//! Weighted sums of marginal log-densities. Full, truncated composite and
//! (weighted) Vecchia likelihoods are all special cases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{conditioning_sets_with_metric, Metric, OrderingPlan, SiteSet, SubsetPlan};

/// One likelihood term `w_S log f(z_S)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub sites: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedScheme {
    label: String,
    terms: Vec<Term>,
}

impl WeightedScheme {
    pub fn new(label: impl Into<String>, terms: Vec<Term>) -> Result<Self> {
        let label = label.into();
        for (k, t) in terms.iter().enumerate() {
            if t.sites.is_empty() {
                return Err(Error::invalid(format!("term {k} of scheme `{label}` has no sites")));
            }
            if !t.weight.is_finite() {
                return Err(Error::invalid(format!("term {k} of scheme `{label}` has weight {}", t.weight)));
            }
        }
        Ok(WeightedScheme { label, terms })
    }

    /// The full likelihood: one term over all `n_sites` sites.
    pub fn full(n_sites: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::invalid("full likelihood needs at least one site"));
        }
        Self::new("full", vec![Term { sites: (0..n_sites).collect(), weight: 1.0 }])
    }

    /// Unit weights on every subset of a truncated plan.
    pub fn composite(plan: &SubsetPlan) -> Result<Self> {
        if plan.is_empty() {
            return Err(Error::EmptyPlan(format!(
                "no {}-subsets have all pairwise distances <= {}",
                plan.d, plan.delta
            )));
        }
        let terms = plan.subsets.iter().map(|s| Term { sites: s.clone(), weight: 1.0 }).collect();
        Self::new(format!("composite(d={}, delta={})", plan.d, plan.delta), terms)
    }

    /// Weight `+1` on `S ∪ {p(j)}` and `omega` on `S` for every position `j`.
    /// The target site is the last entry of each joint term. With
    /// `omega = -1` this is the Vecchia likelihood.
    pub fn vecchia(sites: &SiteSet, plan: &OrderingPlan, d: usize, omega: f64) -> Result<Self> {
        Self::vecchia_with_metric(sites, plan, d, omega, &Metric::Euclidean)
    }

    pub fn vecchia_with_metric(
        sites: &SiteSet,
        plan: &OrderingPlan,
        d: usize,
        omega: f64,
        metric: &Metric,
    ) -> Result<Self> {
        if !(omega >= -1.0 && omega.is_finite()) {
            return Err(Error::invalid(format!("omega = {omega} must lie in [-1, inf)")));
        }
        let sets = conditioning_sets_with_metric(sites, plan, d, metric)?;
        let mut terms = Vec::with_capacity(2 * sites.len());
        for (&j, s) in plan.perm().iter().zip(sets) {
            let mut joint = s.clone();
            joint.push(j);
            terms.push(Term { sites: joint, weight: 1.0 });
            if !s.is_empty() {
                terms.push(Term { sites: s, weight: omega });
            }
        }
        let label = if omega == -1.0 {
            format!("vecchia(d={d}, {})", plan.kind)
        } else {
            format!("vecchia(d={d}, {}, omega={omega})", plan.kind)
        };
        Self::new(label, terms)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest term dimension.
    pub fn max_dim(&self) -> usize {
        self.terms.iter().map(|t| t.sites.len()).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{build_ordering, make_grid, truncated_subsets, OrderingKind};

    #[test]
    fn vecchia_has_two_d_minus_one_terms() {
        let sites = make_grid(10);
        for kind in OrderingKind::ALL {
            let plan = build_ordering(&sites, kind, 3);
            for d in 2..=5 {
                let s = WeightedScheme::vecchia(&sites, &plan, d, -1.0).unwrap();
                assert_eq!(s.len(), 199);
                assert_eq!(s.terms().iter().filter(|t| t.weight == 1.0).count(), 100);
                assert_eq!(s.terms().iter().filter(|t| t.weight == -1.0).count(), 99);
                assert_eq!(s.max_dim(), d);
            }
        }
    }

    #[test]
    fn composite_counts_and_empty_plan() {
        let sites = make_grid(10);
        let plan = truncated_subsets(&sites, 2, 1.0).unwrap();
        assert_eq!(WeightedScheme::composite(&plan).unwrap().len(), 180);
        let empty = truncated_subsets(&sites, 3, 1.0).unwrap();
        assert!(matches!(WeightedScheme::composite(&empty), Err(Error::EmptyPlan(_))));
    }

    #[test]
    fn omega_is_validated() {
        let sites = make_grid(3);
        let plan = build_ordering(&sites, OrderingKind::Coordinate, 0);
        assert!(WeightedScheme::vecchia(&sites, &plan, 2, -1.5).is_err());
        let w = WeightedScheme::vecchia(&sites, &plan, 2, -0.5).unwrap();
        assert!(w.label().contains("omega"));
    }
}
