//! Exact simulation on the unit Fréchet scale.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use super::{MaxStableModel, Variogram};
use crate::error::{Error, Result};
use crate::linalg::Chol;
use crate::spatial::SiteSet;
use crate::{replicate_rng, DataMatrix};

/// Square root `L` with `LLᵀ = C` of a PSD matrix; falls back to a clipped
/// eigendecomposition when Cholesky fails (nearly degenerate variograms).
fn psd_sqrt(c: &DMatrix<f64>) -> DMatrix<f64> {
    match Chol::new(c) {
        Ok(ch) => ch.factor().clone(),
        Err(_) => {
            let eig = SymmetricEigen::new(c.clone());
            let mut u = eig.eigenvectors;
            for (k, lam) in eig.eigenvalues.iter().enumerate() {
                let s = lam.max(0.0).sqrt();
                u.column_mut(k).scale_mut(s);
            }
            u
        }
    }
}

/// `n` replicates of a Brown–Resnick process at `sites`, by the
/// extremal-functions algorithm: site by site, Poisson points of the spectral
/// measure under the Palm distribution at that site are added until they can
/// no longer exceed the current value, rejecting any that would have
/// exceeded an earlier site.
pub fn simulate_brown_resnick(variogram: &Variogram, sites: &SiteSet, n: usize, seed: u64) -> Result<DataMatrix> {
    variogram.validate()?;
    let d = sites.len();
    if d == 0 {
        return Err(Error::invalid("simulation needs at least one site"));
    }
    let gamma = DMatrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { variogram.gamma(sites.lag(i, j)) });
    // intrinsic covariance of W relative to site 0, W_0 = 0
    let c = DMatrix::from_fn(d - 1, d - 1, |i, j| 0.5 * (gamma[(i + 1, 0)] + gamma[(j + 1, 0)] - gamma[(i + 1, j + 1)]));
    let root = if d > 1 { psd_sqrt(&c) } else { DMatrix::zeros(0, 0) };

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep);
            let mut w = vec![0.0; d];
            let mut e = vec![0.0; d.saturating_sub(1)];
            let mut z = vec![0.0; d];
            let mut y = vec![0.0; d];
            for j in 0..d {
                let mut inv_zeta: f64 = Exp1.sample(&mut rng);
                while 1.0 / inv_zeta > z[j] {
                    let zeta = 1.0 / inv_zeta;
                    e.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                    for i in 1..d {
                        w[i] = (0..d - 1).map(|k| root[(i - 1, k)] * e[k]).sum();
                    }
                    for i in 0..d {
                        y[i] = (w[i] - w[j] - 0.5 * gamma[(i, j)]).exp();
                    }
                    if (0..j).all(|i| zeta * y[i] < z[i]) {
                        for i in j..d {
                            z[i] = z[i].max(zeta * y[i]);
                        }
                    }
                    inv_zeta += Distribution::<f64>::sample(&Exp1, &mut rng);
                }
            }
            z
        })
        .collect();
    Ok(DataMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

/// Positive stable variable with Laplace transform `exp(-t^α)` (Kanter's
/// representation).
fn positive_stable<R: Rng>(alpha: f64, rng: &mut R) -> f64 {
    if alpha == 1.0 {
        return 1.0;
    }
    let u = PI * rng.random::<f64>();
    let e: f64 = Exp1.sample(rng);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    a * ((1.0 - alpha) * u).sin().powf((1.0 - alpha) / alpha) / e.powf((1.0 - alpha) / alpha)
}

/// `n` replicates of the `d`-dimensional logistic model, `Z_i = (S/E_i)^α`
/// with `S` positive stable and `E_i` iid standard exponential.
pub fn simulate_logistic(alpha: f64, d: usize, n: usize, seed: u64) -> Result<DataMatrix> {
    MaxStableModel::logistic(alpha)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep);
            let s = positive_stable(alpha, &mut rng);
            (0..d)
                .map(|_| {
                    let e: f64 = Exp1.sample(&mut rng);
                    (s / e).powf(alpha)
                })
                .collect()
        })
        .collect();
    Ok(DataMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

/// Dispatch on the model family.
pub fn simulate_maxstable(model: &MaxStableModel, sites: &SiteSet, n: usize, seed: u64) -> Result<DataMatrix> {
    match model {
        MaxStableModel::BrownResnick(v) => simulate_brown_resnick(v, sites, n, seed),
        MaxStableModel::Logistic { alpha } => simulate_logistic(*alpha, sites.len(), n, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maxstable::extremal_coefficient_sites;
    use crate::spatial::make_grid;

    fn ks_frechet(col: &[f64]) -> f64 {
        let mut v = col.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = (-1.0 / x).exp();
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }

    /// `θ̂ = -log P̂(Z_a ≤ 1, Z_b ≤ 1)` with its delta-method standard error.
    fn theta_hat(data: &DataMatrix, a: usize, b: usize) -> (f64, f64) {
        let n = data.nrows() as f64;
        let p = (0..data.nrows()).filter(|&i| data[(i, a)] <= 1.0 && data[(i, b)] <= 1.0).count() as f64 / n;
        (-p.ln(), ((1.0 - p) / (n * p)).sqrt())
    }

    #[test]
    fn brown_resnick_margins_and_pairs() {
        let sites = make_grid(2);
        let v = Variogram::Bounded { lambda: 1.5, sigma: 1.2 };
        let data = simulate_brown_resnick(&v, &sites, 10_000, 11).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = data.column(j).iter().copied().collect();
            assert!(ks_frechet(&col) < 0.02);
        }
        let m = MaxStableModel::BrownResnick(v);
        for (a, b) in [(0, 1), (0, 3), (1, 2)] {
            let (t, se) = theta_hat(&data, a, b);
            let want = extremal_coefficient_sites(&m, &sites, a, b);
            assert!((t - want).abs() < 3.0 * se, "{a}-{b}: {t} vs {want} (se {se})");
        }
    }

    #[test]
    fn power_variogram_pairs() {
        let sites = SiteSet::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]).unwrap();
        let v = Variogram::PowerAniso { alpha: 1.0, lambda: 2.0, a: 1.5, theta: 0.3 };
        let data = simulate_brown_resnick(&v, &sites, 10_000, 5).unwrap();
        let m = MaxStableModel::BrownResnick(v);
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let (t, se) = theta_hat(&data, a, b);
            let want = extremal_coefficient_sites(&m, &sites, a, b);
            assert!((t - want).abs() < 3.0 * se, "{t} vs {want}");
        }
    }

    #[test]
    fn vanishing_variogram_is_comonotone() {
        let sites = make_grid(2);
        let v = Variogram::Bounded { lambda: 1.0, sigma: 1e-7 };
        let data = simulate_brown_resnick(&v, &sites, 200, 3).unwrap();
        for i in 0..200 {
            let r = data.row(i);
            assert!(r.iter().all(|x| (x / r[0] - 1.0).abs() < 1e-5));
        }
    }

    #[test]
    fn logistic_margins_and_dependence() {
        let data = simulate_logistic(0.5, 2, 10_000, 9).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = data.column(j).iter().copied().collect();
            assert!(ks_frechet(&col) < 0.02);
        }
        let (t, se) = theta_hat(&data, 0, 1);
        assert!((t - 2f64.sqrt()).abs() < 3.0 * se, "{t}");
        let ind = simulate_logistic(1.0, 3, 10_000, 9).unwrap();
        let (t, se) = theta_hat(&ind, 0, 2);
        assert!((t - 2.0).abs() < 3.0 * se, "{t}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let sites = make_grid(3);
        let v = Variogram::Bounded { lambda: 5.0, sigma: 10.0 };
        let a = simulate_brown_resnick(&v, &sites, 7, 42).unwrap();
        assert_eq!(a, simulate_brown_resnick(&v, &sites, 7, 42).unwrap());
        assert_ne!(a, simulate_brown_resnick(&v, &sites, 7, 43).unwrap());
        assert_eq!(simulate_logistic(0.3, 4, 0, 1).unwrap().nrows(), 0);
        assert!(simulate_logistic(1.3, 4, 5, 1).is_err());
        assert!(a.iter().all(|x| *x > 0.0 && x.is_finite()));
    }
}
