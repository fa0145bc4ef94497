//! Exact sensitivity and variability matrices of Gaussian composite and
//! Vecchia estimators, and their asymptotic relative efficiencies.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{correlation_block, cross_block, CorrelationModel};
use crate::linalg::Chol;
use crate::scheme::WeightedScheme;
use crate::spatial::SiteSet;

fn derivative_block(model: &CorrelationModel, sites: &SiteSet, idx: &[usize], i: usize) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
        if a == b {
            0.0
        } else {
            model.d_correlation(sites.distance(idx[a], idx[b]), i)
        }
    })
}

fn second_derivative_block(
    model: &CorrelationModel,
    sites: &SiteSet,
    idx: &[usize],
    i: usize,
    j: usize,
) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
        if a == b {
            0.0
        } else {
            model.d2_correlation(sites.distance(idx[a], idx[b]), i, j)
        }
    })
}

/// `∂Σ/∂ψ_i` for every parameter, over all sites.
pub fn covariance_derivatives(model: &CorrelationModel, sites: &SiteSet) -> Vec<DMatrix<f64>> {
    let idx: Vec<usize> = (0..sites.len()).collect();
    (0..model.params().len()).map(|i| derivative_block(model, sites, &idx, i)).collect()
}

/// `∂²Σ/∂ψ_i∂ψ_j` for every pair of parameters, over all sites.
pub fn covariance_second_derivatives(model: &CorrelationModel, sites: &SiteSet) -> Vec<Vec<DMatrix<f64>>> {
    let idx: Vec<usize> = (0..sites.len()).collect();
    let m = model.params().len();
    (0..m)
        .map(|i| (0..m).map(|j| second_derivative_block(model, sites, &idx, i, j)).collect())
        .collect()
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // tr(AB) without forming AB
    let mut s = 0.0;
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            s += a[(r, c)] * b[(c, r)];
        }
    }
    s
}

fn term_inverse(model: &CorrelationModel, sites: &SiteSet, idx: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sigma = correlation_block(model, sites, idx);
    let inv = Chol::new(&sigma)?.inverse();
    Ok((sigma, inv))
}

/// Sensitivity matrix
/// `J_ij = ½ Σ_S w_S [∂²log|Σ_S|/∂ψ_i∂ψ_j + tr{Σ_S ∂²Σ_S⁻¹/∂ψ_i∂ψ_j}]`.
pub fn sensitivity_j(scheme: &WeightedScheme, model: &CorrelationModel, sites: &SiteSet) -> Result<DMatrix<f64>> {
    model.validate()?;
    let m = model.params().len();
    let parts: Result<Vec<DMatrix<f64>>> = scheme
        .terms()
        .par_iter()
        .map(|t| {
            let mut out = DMatrix::zeros(m, m);
            if t.weight == 0.0 {
                return Ok(out);
            }
            let (sigma, inv) = term_inverse(model, sites, &t.sites)?;
            let d1: Vec<DMatrix<f64>> = (0..m).map(|i| derivative_block(model, sites, &t.sites, i)).collect();
            // Σ⁻¹ ∂_iΣ
            let a: Vec<DMatrix<f64>> = d1.iter().map(|d| &inv * d).collect();
            for i in 0..m {
                for j in i..m {
                    let d2 = second_derivative_block(model, sites, &t.sites, i, j);
                    let inv_d2 = &inv * &d2;
                    let d2_logdet = -trace_product(&a[i], &a[j]) + inv_d2.trace();
                    let d2_inv = &a[i] * &a[j] * &inv + &a[j] * &a[i] * &inv - &inv_d2 * &inv;
                    let v = 0.5 * t.weight * (d2_logdet + trace_product(&sigma, &d2_inv));
                    out[(i, j)] = v;
                    out[(j, i)] = v;
                }
            }
            Ok(out)
        })
        .collect();
    Ok(parts?.into_iter().fold(DMatrix::zeros(m, m), |acc, p| acc + p))
}

/// `∂Σ_S⁻¹/∂ψ_i = -Σ_S⁻¹ ∂_iΣ_S Σ_S⁻¹` for every parameter.
fn inverse_derivatives(model: &CorrelationModel, sites: &SiteSet, idx: &[usize]) -> Result<Vec<DMatrix<f64>>> {
    let (_, inv) = term_inverse(model, sites, idx)?;
    Ok((0..model.params().len())
        .map(|i| -(&inv * derivative_block(model, sites, idx, i) * &inv))
        .collect())
}

/// Variability matrix
/// `K_ij = ½ Σ_{S1,S2} w_{S1} w_{S2} tr{∂Σ_{S1}⁻¹/∂ψ_i Σ_{S1,S2} ∂Σ_{S2}⁻¹/∂ψ_j Σ_{S2,S1}}`.
///
/// The double sum is evaluated by embedding each term's inverse derivative
/// into a `D×D` matrix `M_i = Σ_S w_S P_Sᵀ ∂Σ_S⁻¹/∂ψ_i P_S`, which turns it
/// into `½ tr(M_i Σ M_j Σ)`. Cost is linear in the number of terms.
pub fn variability_k(scheme: &WeightedScheme, model: &CorrelationModel, sites: &SiteSet) -> Result<DMatrix<f64>> {
    model.validate()?;
    let m = model.params().len();
    let n = sites.len();
    let parts: Result<Vec<Vec<DMatrix<f64>>>> = scheme
        .terms()
        .par_iter()
        .map(|t| {
            if t.weight == 0.0 {
                return Ok(Vec::new());
            }
            inverse_derivatives(model, sites, &t.sites)
        })
        .collect();
    let parts = parts?;
    let mut big: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); m];
    for (t, g) in scheme.terms().iter().zip(&parts) {
        if g.is_empty() {
            continue;
        }
        for i in 0..m {
            for (a, &sa) in t.sites.iter().enumerate() {
                for (b, &sb) in t.sites.iter().enumerate() {
                    big[i][(sa, sb)] += t.weight * g[i][(a, b)];
                }
            }
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let sigma = correlation_block(model, sites, &all);
    let b: Vec<DMatrix<f64>> = big.iter().map(|mi| mi * &sigma).collect();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = 0.5 * trace_product(&b[i], &b[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// The same matrix as [`variability_k`], summed literally over all pairs of
/// terms. Quadratic in the number of terms; kept as a cross-check.
pub fn variability_k_pairwise(
    scheme: &WeightedScheme,
    model: &CorrelationModel,
    sites: &SiteSet,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    let m = model.params().len();
    let terms = scheme.terms();
    let g: Result<Vec<Vec<DMatrix<f64>>>> =
        terms.par_iter().map(|t| inverse_derivatives(model, sites, &t.sites)).collect();
    let g = g?;
    let rows: Vec<DMatrix<f64>> = (0..terms.len())
        .into_par_iter()
        .map(|p| {
            let mut out = DMatrix::zeros(m, m);
            for q in 0..terms.len() {
                let w = terms[p].weight * terms[q].weight;
                if w == 0.0 {
                    continue;
                }
                let c12 = cross_block(model, sites, &terms[p].sites, &terms[q].sites);
                let c21 = c12.transpose();
                for i in 0..m {
                    let left = &g[p][i] * &c12;
                    for j in 0..m {
                        let right = &g[q][j] * &c21;
                        out[(i, j)] += 0.5 * w * trace_product(&left, &right);
                    }
                }
            }
            out
        })
        .collect();
    Ok(rows.into_iter().fold(DMatrix::zeros(m, m), |acc, p| acc + p))
}

/// Asymptotic variances and relative efficiencies of one estimator.
/// Efficiencies are in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreReport {
    pub scheme: String,
    pub param_names: Vec<String>,
    pub psi0: Vec<f64>,
    pub n: usize,
    pub term_count: usize,
    pub j: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub v_full: Vec<Vec<f64>>,
    /// Asymptotic standard deviations `sqrt(V_rr)`.
    pub asd: Vec<f64>,
    pub marginal_are: Vec<f64>,
    pub overall_are: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// `n⁻¹ J⁻¹ K J⁻¹`.
pub fn sandwich(j: &DMatrix<f64>, k: &DMatrix<f64>, n: usize, label: &str) -> Result<DMatrix<f64>> {
    let jinv = Chol::new(j)
        .map_err(|_| Error::NonIdentifiable(label.to_string()))?
        .inverse();
    let v = &jinv * k * &jinv / n as f64;
    Ok((&v + v.transpose()) * 0.5)
}

/// Asymptotic covariance of the estimator defined by `scheme` and its
/// efficiency relative to the full likelihood, at `ψ₀ = model.params()`.
pub fn are(scheme: &WeightedScheme, model: &CorrelationModel, sites: &SiteSet, n: usize) -> Result<AreReport> {
    if n == 0 {
        return Err(Error::invalid("number of replicates n must be positive"));
    }
    let j = sensitivity_j(scheme, model, sites)?;
    // K = J exactly for the full likelihood; skip the rounding of the K route
    let is_full = matches!(scheme.terms(), [t] if t.weight == 1.0 && t.sites.len() == sites.len());
    let k = if is_full { j.clone() } else { variability_k(scheme, model, sites)? };
    let v = sandwich(&j, &k, n, scheme.label())?;
    let full = WeightedScheme::full(sites.len())?;
    let j_full = sensitivity_j(&full, model, sites)?;
    let v_full = sandwich(&j_full, &j_full, n, "full")?;
    let m = v.nrows();
    let marginal_are = (0..m).map(|r| 100.0 * (v_full[(r, r)] / v[(r, r)]).sqrt()).collect();
    let overall_are = 100.0 * (v_full.determinant() / v.determinant()).powf(1.0 / (2.0 * m as f64));
    Ok(AreReport {
        scheme: scheme.label().to_string(),
        param_names: model.param_names().iter().map(|s| s.to_string()).collect(),
        psi0: model.params(),
        n,
        term_count: scheme.len(),
        asd: (0..m).map(|r| v[(r, r)].sqrt()).collect(),
        j: rows(&j),
        k: rows(&k),
        v: rows(&v),
        v_full: rows(&v_full),
        marginal_are,
        overall_are,
    })
}

/// Quadratic form score of the scheme for one replicate:
/// `-½ Σ_S w_S (∂_i log|Σ_S| + z_Sᵀ ∂_iΣ_S⁻¹ z_S)`.
pub fn gaussian_score(
    scheme: &WeightedScheme,
    model: &CorrelationModel,
    sites: &SiteSet,
    z: &[f64],
) -> Result<Vec<f64>> {
    let m = model.params().len();
    let mut score = vec![0.0; m];
    for t in scheme.terms() {
        let (_, inv) = term_inverse(model, sites, &t.sites)?;
        let zs = nalgebra::DVector::from_iterator(t.sites.len(), t.sites.iter().map(|&k| z[k]));
        for (i, s) in score.iter_mut().enumerate() {
            let d = derivative_block(model, sites, &t.sites, i);
            let g = -(&inv * &d * &inv);
            let quad = (zs.transpose() * g * &zs)[(0, 0)];
            *s -= 0.5 * t.weight * ((&inv * &d).trace() + quad);
        }
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{corr_matrix, simulate_gauss};
    use crate::scheme::Term;
    use crate::spatial::{build_ordering, make_grid, truncated_subsets, OrderingKind};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn derivative_matrices_match_finite_differences() {
        let sites = make_grid(4);
        let model = CorrelationModel::powered_exponential(3.0, 1.4).unwrap();
        let d1 = covariance_derivatives(&model, &sites);
        let d2 = covariance_second_derivatives(&model, &sites);
        let step = 1e-5;
        let all: Vec<usize> = (0..16).collect();
        for i in 0..2 {
            assert!((0..16).all(|k| d1[i][(k, k)] == 0.0));
            let mut up = model.params();
            let mut dn = model.params();
            up[i] += step;
            dn[i] -= step;
            let (mu, md) = (model.with_params(&up).unwrap(), model.with_params(&dn).unwrap());
            let fd = (correlation_block(&mu, &sites, &all) - correlation_block(&md, &sites, &all)) / (2.0 * step);
            assert!((fd - &d1[i]).abs().max() < 1e-7);
            let du = covariance_derivatives(&mu, &sites);
            let dd = covariance_derivatives(&md, &sites);
            for j in 0..2 {
                let fd2 = (&du[j] - &dd[j]) / (2.0 * step);
                assert!((fd2 - &d2[i][j]).abs().max() < 1e-7);
            }
        }
        let e = CorrelationModel::exponential(5.0).unwrap();
        let two = crate::spatial::SiteSet::new(vec![[0.0, 0.0], [5.0, 0.0]]).unwrap();
        assert_relative_eq!(covariance_derivatives(&e, &two)[0][(0, 1)], (-1.0f64).exp() / 5.0, epsilon = 1e-16);
    }

    #[test]
    fn two_site_fisher_information() {
        // Bivariate normal with unit variances: I(ρ) = (1+ρ²)/(1-ρ²)²
        for h in [0.5, 2.0, 7.0, 40.0] {
            let sites = crate::spatial::SiteSet::new(vec![[0.0, 0.0], [h, 0.0]]).unwrap();
            let model = CorrelationModel::exponential(5.0).unwrap();
            let rho = model.correlation(h);
            let drho = model.d_correlation(h, 0);
            let info = (1.0 + rho * rho) / (1.0 - rho * rho).powi(2) * drho * drho;
            let scheme = WeightedScheme::new("pair", vec![Term { sites: vec![0, 1], weight: 1.0 }]).unwrap();
            let j = sensitivity_j(&scheme, &model, &sites).unwrap();
            assert_relative_eq!(j[(0, 0)], info, max_relative = 1e-10, epsilon = 1e-300);
        }
    }

    #[test]
    fn zero_weights_give_zero_matrices() {
        let sites = make_grid(3);
        let model = CorrelationModel::powered_exponential(2.0, 1.0).unwrap();
        let terms = vec![Term { sites: vec![0, 1, 4], weight: 0.0 }, Term { sites: vec![2], weight: 0.0 }];
        let s = WeightedScheme::new("zero", terms).unwrap();
        assert_eq!(sensitivity_j(&s, &model, &sites).unwrap(), DMatrix::zeros(2, 2));
        assert_eq!(variability_k(&s, &model, &sites).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn valid_likelihoods_satisfy_bartlett() {
        let sites = make_grid(5);
        let model = CorrelationModel::powered_exponential(4.0, 1.2).unwrap();
        let full = WeightedScheme::full(25).unwrap();
        let j = sensitivity_j(&full, &model, &sites).unwrap();
        assert!(j[(0, 0)] > 0.0);
        let k = variability_k(&full, &model, &sites).unwrap();
        assert!((&j - &k).abs().max() < 1e-8 * j.abs().max());
        for kind in OrderingKind::ALL {
            let plan = build_ordering(&sites, kind, 1);
            let v = WeightedScheme::vecchia(&sites, &plan, 25, -1.0).unwrap();
            let j = sensitivity_j(&v, &model, &sites).unwrap();
            let k = variability_k(&v, &model, &sites).unwrap();
            assert!((&j - &k).abs().max() < 1e-8 * j.abs().max(), "{kind}");
            // truncated conditioning sets leave the conditional scores
            // correlated, so the identity fails below d = D
            let v = WeightedScheme::vecchia(&sites, &plan, 2, -1.0).unwrap();
            let j = sensitivity_j(&v, &model, &sites).unwrap();
            let k = variability_k(&v, &model, &sites).unwrap();
            assert!((&j - &k).abs().max() > 1e-3 * j.abs().max(), "{kind}");
        }
        let r = are(&full, &model, &sites, 10).unwrap();
        assert_relative_eq!(r.overall_are, 100.0, epsilon = 1e-9);
        assert!(r.marginal_are.iter().all(|a| (a - 100.0).abs() < 1e-9));
    }

    #[test]
    fn composite_pairwise_cutoff_one() {
        let sites = make_grid(10);
        let model = CorrelationModel::exponential(5.0).unwrap();
        let plan = truncated_subsets(&sites, 2, 1.0).unwrap();
        let s = WeightedScheme::composite(&plan).unwrap();
        let r = are(&s, &model, &sites, 1).unwrap();
        assert!((r.overall_are - 90.4).abs() < 0.5, "{}", r.overall_are);
    }

    #[test]
    fn singular_sensitivity_is_reported() {
        let sites = make_grid(3);
        let model = CorrelationModel::exponential(2.0).unwrap();
        let s = WeightedScheme::new("singletons", (0..9).map(|k| Term { sites: vec![k], weight: 1.0 }).collect())
            .unwrap();
        assert!(matches!(are(&s, &model, &sites, 1), Err(Error::NonIdentifiable(_))));
    }

    #[test]
    fn variability_matches_monte_carlo_scores() {
        let sites = make_grid(4);
        let model = CorrelationModel::exponential(3.0).unwrap();
        let plan = truncated_subsets(&sites, 2, 1.5).unwrap();
        let scheme = WeightedScheme::composite(&plan).unwrap();
        let k = variability_k(&scheme, &model, &sites).unwrap()[(0, 0)];
        let joint = corr_matrix(&model, &sites).unwrap();
        let n = 10_000;
        let data = simulate_gauss(&joint, n, 99);
        let scores: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|r| {
                let z: Vec<f64> = data.row(r).iter().copied().collect();
                gaussian_score(&scheme, &model, &sites, &z).unwrap()[0]
            })
            .collect();
        let mean = scores.iter().sum::<f64>() / n as f64;
        let sq: Vec<f64> = scores.iter().map(|s| (s - mean).powi(2)).collect();
        let var = sq.iter().sum::<f64>() / (n - 1) as f64;
        let var_sd = (sq.iter().map(|q| (q - var).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() / (n as f64).sqrt();
        assert!((var - k).abs() < 3.0 * var_sd, "empirical {var} analytic {k} se {var_sd}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn embedded_and_pairwise_variability_agree(lambda in 0.5f64..8.0, kappa in 0.5f64..2.0,
                                                   d in 2usize..5, omega in -1.0f64..1.0, seed in 0u64..50) {
            let sites = make_grid(4);
            let model = CorrelationModel::powered_exponential(lambda, kappa).unwrap();
            let plan = build_ordering(&sites, OrderingKind::Random, seed);
            let s = WeightedScheme::vecchia(&sites, &plan, d, omega).unwrap();
            let a = variability_k(&s, &model, &sites).unwrap();
            let b = variability_k_pairwise(&s, &model, &sites).unwrap();
            prop_assert!((&a - &b).abs().max() <= 1e-9 * b.abs().max().max(1e-12));
        }

        #[test]
        fn efficiency_never_exceeds_one_hundred(lambda in 0.5f64..10.0, d in 2usize..6, kind in 0usize..4,
                                               delta in 1.0f64..3.0) {
            let sites = make_grid(5);
            let model = CorrelationModel::exponential(lambda).unwrap();
            let plan = build_ordering(&sites, OrderingKind::ALL[kind], 7);
            let v = WeightedScheme::vecchia(&sites, &plan, d, -1.0).unwrap();
            prop_assert!(are(&v, &model, &sites, 1).unwrap().overall_are <= 100.0 + 1e-6);
            let tp = truncated_subsets(&sites, 2, delta).unwrap();
            let c = WeightedScheme::composite(&tp).unwrap();
            prop_assert!(are(&c, &model, &sites, 1).unwrap().overall_are <= 100.0 + 1e-6);
        }
    }
}
