//! Maximum composite/Vecchia likelihood estimation, sandwich covariances and
//! resampling intervals.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimize::{nelder_mead, NelderMeadOptions};
use super::{replicate_logliks, Domain, LikelihoodSpec, Model};
use crate::error::{Error, Result};
use crate::gaussian::{corr_matrix, norm_quantile, simulate_gauss, CdfOptions};
use crate::maxstable::simulate_maxstable;
use crate::scheme::WeightedScheme;
use crate::spatial::SiteSet;
use crate::{replicate_rng, DataMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Objective evaluations allowed to the simplex search.
    pub max_evals: usize,
    /// Simplex size at convergence, on the transformed scale.
    pub xtol: f64,
    /// Spread of the per-replicate mean objective at convergence.
    pub ftol: f64,
    pub step: f64,
    /// Try the starting point shifted by ±0.5 on the transformed scale and
    /// start from the best of the three.
    pub lattice: bool,
    /// Restart the simplex once from the first optimum.
    pub restart: bool,
    pub standard_errors: bool,
    pub cdf: CdfOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_evals: 2000,
            xtol: 1e-6,
            ftol: 1e-9,
            step: 0.25,
            lattice: true,
            restart: true,
            standard_errors: true,
            cdf: CdfOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: Model,
    pub spec: LikelihoodSpec,
    pub scheme: String,
    pub param_names: Vec<String>,
    pub psi_hat: Vec<f64>,
    pub fixed: Vec<bool>,
    /// Objective at the optimum, summed over replicates.
    pub loglik: f64,
    pub std_err: Option<Vec<f64>>,
    pub vcov: Option<Vec<Vec<f64>>>,
    /// The sensitivity matrix had to be regularised.
    pub vcov_clipped: bool,
    pub n_evals: usize,
    pub converged: bool,
    pub n_replicates: usize,
    pub wall_time_s: f64,
}

/// Free parameters of a model on the real line.
struct Parametrisation {
    base: Model,
    domains: Vec<Domain>,
    free: Vec<usize>,
}

impl Parametrisation {
    fn new(model: &Model, fixed: &[bool]) -> Result<Self> {
        model.validate()?;
        let m = model.param_names().len();
        if !fixed.is_empty() && fixed.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: fixed.len() });
        }
        let free = (0..m).filter(|&k| !fixed.get(k).copied().unwrap_or(false)).collect();
        Ok(Parametrisation { base: *model, domains: model.domains(), free })
    }

    fn to_real(&self, model: &Model) -> Vec<f64> {
        let p = model.params();
        self.free.iter().map(|&k| self.domains[k].to_real(p[k])).collect()
    }

    fn model(&self, t: &[f64]) -> Result<Model> {
        let mut p = self.base.params();
        for (&k, &v) in self.free.iter().zip(t) {
            p[k] = self.domains[k].from_real(v);
        }
        self.base.with_params(&p)
    }

    fn jacobian(&self, t: &[f64]) -> Vec<f64> {
        self.free.iter().zip(t).map(|(&k, &v)| self.domains[k].jacobian(v)).collect()
    }
}

struct Problem<'a> {
    data: &'a DataMatrix,
    sites: &'a SiteSet,
    scheme: WeightedScheme,
    cdf: CdfOptions,
}

impl Problem<'_> {
    fn per_replicate(&self, model: &Model) -> Result<Vec<f64>> {
        replicate_logliks(model, self.data, self.sites, &self.scheme, &self.cdf)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Maximise the objective selected by `spec` starting from `init`. Entries
/// of `fixed` that are `true` hold the corresponding parameter at its initial
/// value; an empty mask frees every parameter.
pub fn fit(
    init: &Model,
    data: &DataMatrix,
    sites: &SiteSet,
    spec: &LikelihoodSpec,
    fixed: &[bool],
    opts: &FitOptions,
) -> Result<FitResult> {
    let start = Instant::now();
    let par = Parametrisation::new(init, fixed)?;
    if data.nrows() == 0 {
        return Err(Error::invalid("no replicates to fit"));
    }
    let problem = Problem { data, sites, scheme: spec.scheme(sites, init)?, cdf: opts.cdf };
    let t0 = par.to_real(init);
    // the starting point must be evaluable; later failures just steer the search
    let l0 = mean(&problem.per_replicate(&par.model(&t0)?)?);
    let mut n_evals = 1;
    let mut objective = |t: &[f64]| match par.model(t).and_then(|m| problem.per_replicate(&m)) {
        Ok(v) => -mean(&v),
        Err(_) => f64::INFINITY,
    };

    let (mut t_best, mut f_best, mut converged) = (t0.clone(), -l0, false);
    if opts.max_evals > 0 && !par.free.is_empty() {
        if opts.lattice {
            for shift in [-0.5, 0.5] {
                if n_evals >= opts.max_evals {
                    break;
                }
                let t: Vec<f64> = t0.iter().map(|v| v + shift).collect();
                let f = objective(&t);
                n_evals += 1;
                if f < f_best {
                    (t_best, f_best) = (t, f);
                }
            }
        }
        let rounds = if opts.restart { 2 } else { 1 };
        for round in 0..rounds {
            let budget = opts.max_evals.saturating_sub(n_evals);
            if budget == 0 {
                converged = false;
                break;
            }
            let nm = NelderMeadOptions {
                max_evals: budget,
                xtol: opts.xtol,
                ftol: opts.ftol,
                step: if round == 0 { opts.step } else { opts.step / 2.0 },
            };
            let r = nelder_mead(&mut objective, &t_best, &nm);
            n_evals += r.evals;
            converged = r.converged;
            if r.fx <= f_best {
                (t_best, f_best) = (r.x, r.fx);
            }
        }
    } else if par.free.is_empty() {
        converged = true;
    }

    // an unmoved start is returned exactly, without a transform round trip
    let model = if t_best == t0 { *init } else { par.model(&t_best)? };
    let n = data.nrows();
    let (mut std_err, mut vcov, mut clipped) = (None, None, false);
    if opts.standard_errors && n >= 2 && !par.free.is_empty() {
        match sandwich_impl(&par, &problem, &t_best) {
            Ok(s) => {
                std_err = Some(s.std_err);
                vcov = Some(s.vcov);
                clipped = s.clipped;
            }
            Err(e) => log::warn!("standard errors unavailable: {e}"),
        }
    }
    Ok(FitResult {
        model,
        spec: *spec,
        scheme: problem.scheme.label().to_string(),
        param_names: model.param_names().iter().map(|s| s.to_string()).collect(),
        psi_hat: model.params(),
        fixed: (0..model.params().len()).map(|k| !par.free.contains(&k)).collect(),
        loglik: -f_best * n as f64,
        std_err,
        vcov,
        vcov_clipped: clipped,
        n_evals,
        converged,
        n_replicates: n,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Sandwich covariance `n⁻¹ Ĵ⁻¹ K̂ Ĵ⁻¹`, mapped back to the natural scale.
/// `j` and `k` are on the transformed (log / logit) scale of the free
/// parameters; `vcov` and `std_err` cover every parameter, with zeros for
/// fixed ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub j: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub vcov: Vec<Vec<f64>>,
    pub std_err: Vec<f64>,
    pub clipped: bool,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn sandwich_impl(par: &Parametrisation, problem: &Problem, t: &[f64]) -> Result<Sandwich> {
    let n = problem.data.nrows();
    if n < 2 {
        return Err(Error::invalid("the score covariance needs at least two replicates"));
    }
    let q = par.free.len();
    let h: Vec<f64> = t.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let at = |shifts: &[(usize, f64)]| -> Result<Vec<f64>> {
        let mut x = t.to_vec();
        for &(k, s) in shifts {
            x[k] += s * h[k];
        }
        problem.per_replicate(&par.model(&x)?)
    };
    let centre = mean(&at(&[])?);
    let mut plus = Vec::with_capacity(q);
    let mut minus = Vec::with_capacity(q);
    for k in 0..q {
        plus.push(at(&[(k, 1.0)])?);
        minus.push(at(&[(k, -1.0)])?);
    }
    let mut kmat = DMatrix::zeros(q, q);
    for i in 0..n {
        let g: Vec<f64> = (0..q).map(|k| (plus[k][i] - minus[k][i]) / (2.0 * h[k])).collect();
        for a in 0..q {
            for b in 0..q {
                kmat[(a, b)] += g[a] * g[b] / n as f64;
            }
        }
    }
    let mut jmat = DMatrix::zeros(q, q);
    for a in 0..q {
        jmat[(a, a)] = -(mean(&plus[a]) - 2.0 * centre + mean(&minus[a])) / (h[a] * h[a]);
        for b in (a + 1)..q {
            let pp = mean(&at(&[(a, 1.0), (b, 1.0)])?);
            let pm = mean(&at(&[(a, 1.0), (b, -1.0)])?);
            let mp = mean(&at(&[(a, -1.0), (b, 1.0)])?);
            let mm = mean(&at(&[(a, -1.0), (b, -1.0)])?);
            let v = -(pp - pm - mp + mm) / (4.0 * h[a] * h[b]);
            jmat[(a, b)] = v;
            jmat[(b, a)] = v;
        }
    }
    if jmat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite numerical Hessian".into()));
    }
    // eigenvalue-clipped inverse of Ĵ
    let eig = SymmetricEigen::new(jmat.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = (top * 1e-8).max(f64::MIN_POSITIVE);
    let clipped = eig.eigenvalues.iter().any(|&v| v < floor);
    if clipped {
        log::warn!("sensitivity matrix is not positive definite; eigenvalues clipped at {floor:e}");
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v.max(floor));
    let jinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let vt = &jinv * &kmat * &jinv / n as f64;
    let g = par.jacobian(t);
    let m = par.base.param_names().len();
    let mut vcov = DMatrix::zeros(m, m);
    for (a, &pa) in par.free.iter().enumerate() {
        for (b, &pb) in par.free.iter().enumerate() {
            vcov[(pa, pb)] = g[a] * vt[(a, b)] * g[b];
        }
    }
    let std_err = (0..m).map(|k| vcov[(k, k)].max(0.0).sqrt()).collect();
    Ok(Sandwich { j: to_rows(&jmat), k: to_rows(&kmat), vcov: to_rows(&vcov), std_err, clipped })
}

/// Sandwich covariance at `model`, with `K̂` the mean outer product of
/// per-replicate numerical scores and `Ĵ` the negative numerical Hessian of
/// the mean objective (central differences, relative step 1e-4 on the
/// transformed scale).
pub fn sandwich_vcov(
    model: &Model,
    data: &DataMatrix,
    sites: &SiteSet,
    spec: &LikelihoodSpec,
    fixed: &[bool],
    cdf: &CdfOptions,
) -> Result<Sandwich> {
    let par = Parametrisation::new(model, fixed)?;
    if par.free.is_empty() {
        return Err(Error::invalid("every parameter is fixed"));
    }
    let problem = Problem { data, sites, scheme: spec.scheme(sites, model)?, cdf: *cdf };
    sandwich_impl(&par, &problem, &par.to_real(model))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleKind {
    /// Delete-one-replicate refits, normal intervals from the jackknife
    /// standard error.
    Jackknife,
    /// Refits on data simulated from the fitted model, percentile intervals.
    ParametricBootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleResult {
    pub kind: ResampleKind,
    pub level: f64,
    /// One interval per free parameter.
    pub intervals: Vec<Interval>,
    /// Successful refit estimates (all parameters).
    pub estimates: Vec<Vec<f64>>,
    pub failures: usize,
    pub unconverged: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleOptions {
    pub kind: ResampleKind,
    /// Bootstrap sample count; ignored by the jackknife.
    pub replicates: usize,
    pub seed: u64,
    pub level: f64,
    pub fit: FitOptions,
}

fn all_rows_equal(data: &DataMatrix) -> bool {
    data.nrows() >= 2 && (1..data.nrows()).all(|i| data.row(i) == data.row(0))
}

fn type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resampling intervals around the fitted `model`. Failed refits are counted;
/// more than 10% failures aborts.
pub fn resample_ci(
    model: &Model,
    data: &DataMatrix,
    sites: &SiteSet,
    spec: &LikelihoodSpec,
    fixed: &[bool],
    opts: &ResampleOptions,
) -> Result<ResampleResult> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::invalid(format!("confidence level {} must lie in (0, 1)", opts.level)));
    }
    let par = Parametrisation::new(model, fixed)?;
    let n = data.nrows();
    let total = match opts.kind {
        ResampleKind::Jackknife => n,
        ResampleKind::ParametricBootstrap => opts.replicates,
    };
    if total < 2 {
        return Err(Error::invalid("resampling needs at least two refits"));
    }
    let fit_opts = FitOptions { standard_errors: false, ..opts.fit };
    // replicates without any variation carry no information on dependence
    let degenerate = all_rows_equal(data);
    let refit = |b: usize| -> Result<FitResult> {
        if degenerate {
            return Err(Error::Numerical("all replicates are identical".into()));
        }
        let sample = match opts.kind {
            ResampleKind::Jackknife => data.clone().remove_row(b),
            ResampleKind::ParametricBootstrap => {
                let seed = replicate_rng(opts.seed, b).next_u64();
                match model {
                    Model::Gaussian(g) => simulate_gauss(&corr_matrix(g, sites)?, n, seed),
                    Model::MaxStable(m) => simulate_maxstable(m, sites, n, seed)?,
                }
            }
        };
        if all_rows_equal(&sample) {
            return Err(Error::Numerical("all replicates are identical".into()));
        }
        fit(model, &sample, sites, spec, fixed, &fit_opts)
    };
    let outcomes: Vec<Result<FitResult>> = (0..total).into_par_iter().map(refit).collect();
    let failures = outcomes.iter().filter(|r| r.is_err()).count();
    if let Some(Err(e)) = outcomes.iter().find(|r| r.is_err()) {
        log::warn!("{failures} of {total} refits failed; first failure: {e}");
    }
    if failures * 10 > total {
        return Err(Error::ResampleAborted { failed: failures, total });
    }
    let fits: Vec<FitResult> = outcomes.into_iter().filter_map(|r| r.ok()).collect();
    let unconverged = fits.iter().filter(|f| !f.converged).count();
    let estimates: Vec<Vec<f64>> = fits.iter().map(|f| f.psi_hat.clone()).collect();
    let names = model.param_names();
    let psi = model.params();
    let z = norm_quantile(0.5 + opts.level / 2.0);
    let intervals = par
        .free
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = estimates.iter().map(|e| e[k]).collect();
            let (lower, upper) = match opts.kind {
                ResampleKind::Jackknife => {
                    let m = v.len() as f64;
                    let bar = v.iter().sum::<f64>() / m;
                    let se = ((m - 1.0) / m * v.iter().map(|x| (x - bar).powi(2)).sum::<f64>()).sqrt();
                    (psi[k] - z * se, psi[k] + z * se)
                }
                ResampleKind::ParametricBootstrap => {
                    v.sort_by(f64::total_cmp);
                    let a = (1.0 - opts.level) / 2.0;
                    (type7(&v, a), type7(&v, 1.0 - a))
                }
            };
            Interval { name: names[k].to_string(), estimate: psi[k], lower, upper }
        })
        .collect();
    Ok(ResampleResult { kind: opts.kind, level: opts.level, intervals, estimates, failures, unconverged, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efficiency::are;
    use crate::gaussian::CorrelationModel;
    use crate::maxstable::{simulate_logistic, MaxStableModel};
    use crate::spatial::{make_grid, OrderingKind};

    fn gauss(side: usize, n: usize, lambda: f64, seed: u64) -> (SiteSet, Model, DataMatrix) {
        let sites = make_grid(side);
        let m = CorrelationModel::exponential(lambda).unwrap();
        let data = simulate_gauss(&corr_matrix(&m, &sites).unwrap(), n, seed);
        (sites, m.into(), data)
    }

    #[test]
    fn gaussian_vecchia_fit_recovers_range() {
        let (sites, truth, data) = gauss(5, 200, 5.0, 7);
        let spec = LikelihoodSpec::vecchia(5, OrderingKind::Coordinate);
        let init = CorrelationModel::exponential(2.0).unwrap().into();
        let r = fit(&init, &data, &sites, &spec, &[], &FitOptions::default()).unwrap();
        assert!(r.converged);
        let se = r.std_err.as_ref().unwrap()[0];
        assert!(se > 0.0);
        assert!((r.psi_hat[0] - truth.params()[0]).abs() < 3.0 * se, "{} ± {se}", r.psi_hat[0]);
        // deterministic
        let again = fit(&init, &data, &sites, &spec, &[], &FitOptions::default()).unwrap();
        assert_eq!(r.psi_hat, again.psi_hat);
        assert_eq!(r.loglik, again.loglik);
    }

    #[test]
    fn zero_budget_returns_the_start() {
        let (sites, truth, data) = gauss(3, 20, 3.0, 1);
        let opts = FitOptions { max_evals: 0, ..FitOptions::default() };
        let r = fit(&truth, &data, &sites, &LikelihoodSpec::Full, &[], &opts).unwrap();
        assert_eq!(r.psi_hat, truth.params());
        assert!(!r.converged);
    }

    #[test]
    fn fixed_parameters_stay_put() {
        let sites = make_grid(3);
        let truth = CorrelationModel::powered_exponential(2.0, 1.0).unwrap();
        let data = simulate_gauss(&corr_matrix(&truth, &sites).unwrap(), 60, 4);
        let init: Model = CorrelationModel::powered_exponential(1.0, 1.0).unwrap().into();
        let opts = FitOptions { standard_errors: false, ..FitOptions::default() };
        let r = fit(&init, &data, &sites, &LikelihoodSpec::Full, &[false, true], &opts).unwrap();
        assert_eq!(r.psi_hat[1], 1.0);
        assert_eq!(r.fixed, vec![false, true]);
        assert!(r.psi_hat[0] != 1.0);
        assert!(fit(&init, &data, &sites, &LikelihoodSpec::Full, &[true], &opts).is_err());
    }

    #[test]
    fn full_likelihood_sandwich_obeys_bartlett() {
        // pooled over datasets: a single n = 500 sample scatters K by ~8%
        let (mut j, mut k) = (0.0, 0.0);
        let mut data = DataMatrix::zeros(0, 0);
        let mut truth = None;
        let mut sites = make_grid(3);
        for seed in 0..8 {
            let (s_, t_, d_) = gauss(3, 500, 2.0, seed);
            let s = sandwich_vcov(&t_, &d_, &s_, &LikelihoodSpec::Full, &[], &CdfOptions::default()).unwrap();
            assert!(!s.clipped);
            j += s.j[0][0];
            k += s.k[0][0];
            (sites, data, truth) = (s_, d_, Some(t_));
        }
        assert!((j - k).abs() / j < 0.06, "J {j} K {k}");
        let truth = truth.unwrap();
        let one = data.rows(0, 1).into_owned();
        assert!(sandwich_vcov(&truth, &one, &sites, &LikelihoodSpec::Full, &[], &CdfOptions::default()).is_err());
    }

    #[test]
    fn sandwich_matches_analytic_variance() {
        let (sites, truth, data) = gauss(4, 500, 3.0, 11);
        let spec = LikelihoodSpec::vecchia(2, OrderingKind::Coordinate);
        let s = sandwich_vcov(&truth, &data, &sites, &spec, &[], &CdfOptions::default()).unwrap();
        let Model::Gaussian(g) = truth else { unreachable!() };
        let scheme = spec.scheme(&sites, &truth).unwrap();
        let report = are(&scheme, &g, &sites, 500).unwrap();
        let rel = (s.vcov[0][0] - report.v[0][0]).abs() / report.v[0][0];
        assert!(rel < 0.2, "{} vs {}", s.vcov[0][0], report.v[0][0]);
    }

    #[test]
    fn degenerate_data_aborts_resampling() {
        let sites = make_grid(2);
        let row = [1.0, 2.0, 0.5, 3.0];
        let data = DataMatrix::from_fn(10, 4, |_, j| row[j]);
        let m: Model = MaxStableModel::logistic(0.5).unwrap().into();
        let opts = ResampleOptions {
            kind: ResampleKind::Jackknife,
            replicates: 0,
            seed: 1,
            level: 0.95,
            fit: FitOptions { max_evals: 30, ..FitOptions::default() },
        };
        let err = resample_ci(&m, &data, &sites, &LikelihoodSpec::Full, &[], &opts).unwrap_err();
        assert!(matches!(err, Error::ResampleAborted { failed: 10, total: 10 }));
    }

    #[test]
    fn jackknife_and_bootstrap_agree() {
        let sites = make_grid(2);
        let data = simulate_logistic(0.5, 4, 40, 3).unwrap();
        let init: Model = MaxStableModel::logistic(0.6).unwrap().into();
        let spec = LikelihoodSpec::Full;
        let fitted = fit(&init, &data, &sites, &spec, &[], &FitOptions::default()).unwrap();
        let base = ResampleOptions {
            kind: ResampleKind::Jackknife,
            replicates: 60,
            seed: 5,
            level: 0.95,
            fit: FitOptions { xtol: 1e-4, ..FitOptions::default() },
        };
        let jk = resample_ci(&fitted.model, &data, &sites, &spec, &[], &base).unwrap();
        let bs = resample_ci(
            &fitted.model,
            &data,
            &sites,
            &spec,
            &[],
            &ResampleOptions { kind: ResampleKind::ParametricBootstrap, ..base },
        )
        .unwrap();
        let (a, b) = (&jk.intervals[0], &bs.intervals[0]);
        assert!(a.lower < a.estimate && a.estimate < a.upper);
        let inter = (a.upper.min(b.upper) - a.lower.max(b.lower)).max(0.0);
        let union = a.upper.max(b.upper) - a.lower.min(b.lower);
        assert!(inter / union > 0.5, "{a:?} {b:?}");
        assert_eq!(jk.total, 40);
        assert_eq!(bs.estimates.len() + bs.failures, 60);
    }
}
