//! Normal distribution functions in one, two, three and more dimensions.
//!
//! Dimensions one and two are evaluated with deterministic formulas (the
//! bivariate case by Gauss–Legendre quadrature of the Plackett–Drezner
//! integral). Dimension three conditions on one variable and integrates the
//! bivariate distribution function adaptively. Higher dimensions use the
//! separation-of-variables transform integrated with randomly shifted
//! Kronecker lattices; the shifts are seeded from the caller's seed and the
//! bit pattern of the inputs, so repeated calls return identical values.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::linalg::{hash_f64s, Chol};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x / SQRT_2)
    }
}

/// Standard normal quantile function.
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        let x = -SQRT_2 * erfc_inv(2.0 * p);
        // one Newton step against the accurate distribution function
        let dens = norm_pdf(x);
        if dens > 0.0 && x.is_finite() {
            x - (norm_cdf(x) - p) / dens
        } else {
            x
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, computed by Newton
/// iteration on the Legendre recurrence.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

struct HalfRule {
    x: Vec<f64>,
    w: Vec<f64>,
}

fn half_rule(n: usize) -> HalfRule {
    let (x, w) = gauss_legendre(n);
    let half = n / 2;
    HalfRule { x: x[half..].to_vec(), w: w[half..].to_vec() }
}

fn bvn_rules() -> &'static [HalfRule; 3] {
    static RULES: OnceLock<[HalfRule; 3]> = OnceLock::new();
    RULES.get_or_init(|| [half_rule(6), half_rule(12), half_rule(20)])
}

/// `P(X > h, Y > k)` for standard normals with correlation `r`.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { norm_cdf(-k) };
    }
    if k == f64::NEG_INFINITY {
        return norm_cdf(-h);
    }
    if r == 0.0 {
        return norm_cdf(-h) * norm_cdf(-k);
    }
    let two_pi = 2.0 * PI;
    let rules = bvn_rules();
    let rule = if r.abs() < 0.3 {
        &rules[0]
    } else if r.abs() < 0.75 {
        &rules[1]
    } else {
        &rules[2]
    };
    let (h, mut k) = (h, k);
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for (&x, &w) in rule.x.iter().zip(&rule.w) {
            for sign in [-1.0, 1.0] {
                let sn = (asr * (sign * x + 1.0) / 2.0).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / (2.0 * two_pi) + norm_cdf(-h) * norm_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            let asr = -(bs / as_ + hk) / 2.0;
            if asr > -100.0 {
                bvn = a
                    * asr.exp()
                    * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * two_pi.sqrt()
                    * norm_cdf(-b / a)
                    * b
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for (&x, &w) in rule.x.iter().zip(&rule.w) {
                for sign in [-1.0, 1.0] {
                    let xs = (a * (sign * x + 1.0)).powi(2);
                    let rs = (1.0 - xs).sqrt();
                    let asr = -(bs / xs + hk) / 2.0;
                    if asr > -100.0 {
                        bvn += a
                            * w
                            * asr.exp()
                            * ((-hk * xs / (2.0 * (1.0 + rs).powi(2))).exp() / rs
                                - (1.0 + c * xs * (1.0 + d * xs)));
                    }
                }
            }
            bvn = -bvn / two_pi;
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else {
            bvn = -bvn;
            if k > h {
                if h < 0.0 {
                    bvn += norm_cdf(k) - norm_cdf(h);
                } else {
                    bvn += norm_cdf(-h) - norm_cdf(-k);
                }
            }
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// `P(X ≤ a, Y ≤ b)` for standard normals with correlation `r`.
#[inline]
pub fn bvn_cdf(a: f64, b: f64, r: f64) -> f64 {
    bvn_upper(-a, -b, r)
}

/// Tuning for [`mvn_cdf`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfOptions {
    /// Target absolute error.
    pub accuracy: f64,
    /// Upper bound on integrand evaluations for the lattice rule.
    pub max_points: usize,
    /// Mixed with a hash of the inputs to seed the lattice shifts.
    pub seed: u64,
}

impl Default for CdfOptions {
    fn default() -> Self {
        CdfOptions { accuracy: 1e-6, max_points: 4_000_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfEstimate {
    pub value: f64,
    pub error: f64,
    /// False when the lattice rule ran out of budget before the error
    /// estimate dropped below the requested accuracy.
    pub converged: bool,
}

impl CdfEstimate {
    fn exact(value: f64, error: f64) -> Self {
        CdfEstimate { value, error, converged: true }
    }
}

/// A covariance matrix prepared for repeated distribution-function calls.
#[derive(Debug, Clone)]
pub struct MvnCdf {
    sd: Vec<f64>,
    corr: DMatrix<f64>,
}

impl MvnCdf {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let m = sigma.nrows();
        if m == 0 || sigma.ncols() != m {
            return Err(Error::invalid("covariance matrix must be square and non-empty"));
        }
        Chol::new(sigma)?;
        let sd: Vec<f64> = (0..m).map(|i| sigma[(i, i)].sqrt()).collect();
        let corr = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                1.0
            } else {
                sigma[(i, j)] / (sd[i] * sd[j])
            }
        });
        Ok(MvnCdf { sd, corr })
    }

    pub fn dim(&self) -> usize {
        self.sd.len()
    }

    /// `P(X ≤ upper)` for `X ~ N(0, Σ)`.
    pub fn cdf(&self, upper: &[f64], opts: &CdfOptions) -> Result<CdfEstimate> {
        if upper.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: upper.len() });
        }
        if upper.iter().any(|v| v.is_nan()) {
            return Err(Error::Numerical("NaN integration limit".into()));
        }
        if upper.iter().any(|&v| v == f64::NEG_INFINITY) {
            return Ok(CdfEstimate::exact(0.0, 0.0));
        }
        let keep: Vec<usize> = (0..self.dim()).filter(|&i| upper[i] < f64::INFINITY).collect();
        let a: Vec<f64> = keep.iter().map(|&i| upper[i] / self.sd[i]).collect();
        let r = |i: usize, j: usize| self.corr[(keep[i], keep[j])];
        match keep.len() {
            0 => Ok(CdfEstimate::exact(1.0, 0.0)),
            1 => Ok(CdfEstimate::exact(norm_cdf(a[0]), 1e-16)),
            2 => Ok(CdfEstimate::exact(bvn_cdf(a[0], a[1], r(0, 1)), 1e-15)),
            3 => Ok(tvn_cdf(&a, [r(0, 1), r(0, 2), r(1, 2)], opts)),
            m => {
                let corr = DMatrix::from_fn(m, m, |i, j| r(i, j));
                if m == 4 {
                    if let Some(est) = qvn_cdf(&a, &corr, opts) {
                        return Ok(est);
                    }
                }
                Ok(qmc_cdf(&a, &corr, opts))
            }
        }
    }
}

/// `P(X ≤ upper)` for `X ~ N(0, Σ)`.
pub fn mvn_cdf(sigma: &DMatrix<f64>, upper: &[f64], opts: &CdfOptions) -> Result<CdfEstimate> {
    MvnCdf::new(sigma)?.cdf(upper, opts)
}

/// Trivariate distribution function by Plackett's identity: start from the
/// value with the two smaller correlations set to zero (a bivariate times a
/// univariate probability) and integrate the correlation derivatives, which
/// are closed-form, along a path to the target correlations.
fn tvn_cdf(a: &[f64], r: [f64; 3], opts: &CdfOptions) -> CdfEstimate {
    // r = [r12, r13, r23]; reorder so that |r23| is the largest
    let (mut h1, mut h2, mut h3) = (a[0], a[1], a[2]);
    let (mut r12, mut r13, mut r23) = (r[0], r[1], r[2]);
    if r12.abs() > r13.abs() {
        std::mem::swap(&mut h2, &mut h3);
        std::mem::swap(&mut r12, &mut r13);
    }
    if r13.abs() > r23.abs() {
        std::mem::swap(&mut h1, &mut h2);
        std::mem::swap(&mut r13, &mut r23);
    }
    let start = norm_cdf(h1) * bvn_cdf(h2, h3, r23);
    if r12 == 0.0 && r13 == 0.0 {
        return CdfEstimate::exact(start, 1e-16);
    }
    let (ua, ub) = (r12.asin(), r13.asin());
    let f = |x: f64| {
        let (s12, s13) = ((ua * x).sin(), (ub * x).sin());
        let mut v = 0.0;
        if ua != 0.0 {
            v += ua * plackett_integrand(h1, h2, h3, s13, r23, s12);
        }
        if ub != 0.0 {
            v += ub * plackett_integrand(h1, h3, h2, s12, r23, s13);
        }
        v
    };
    // relative tolerance, so that tiny probabilities keep their digits
    let rel = (opts.accuracy * 1e-4).clamp(1e-14, 1e-10);
    let scale = start.max(gl_panel(&f, 0.0, 1.0).abs() / (2.0 * PI)).max(1e-300);
    let (value, err) = adaptive_gl(&f, 0.0, 1.0, 2.0 * PI * rel * scale, 30);
    let total = start + value / (2.0 * PI);
    CdfEstimate::exact(total.clamp(0.0, 1.0), err / (2.0 * PI) + 1e-16)
}

/// Four-dimensional distribution function as a one-dimensional integral of
/// trivariate ones, conditioning on the variable least correlated with the
/// rest. `None` when every choice leaves a near-degenerate conditional.
fn qvn_cdf(a: &[f64], corr: &DMatrix<f64>, opts: &CdfOptions) -> Option<CdfEstimate> {
    let worst = |k: usize| (0..4).filter(|&i| i != k).map(|i| corr[(i, k)].abs()).fold(0.0, f64::max);
    let k = (0..4).min_by(|&x, &y| worst(x).total_cmp(&worst(y)))?;
    if worst(k) > 0.995 {
        return None;
    }
    let rest: Vec<usize> = (0..4).filter(|&i| i != k).collect();
    let rk: Vec<f64> = rest.iter().map(|&i| corr[(i, k)]).collect();
    let s: Vec<f64> = rk.iter().map(|r| (1.0 - r * r).sqrt()).collect();
    let cond = |i: usize, j: usize| (corr[(rest[i], rest[j])] - rk[i] * rk[j]) / (s[i] * s[j]);
    let rc = [cond(0, 1), cond(0, 2), cond(1, 2)];
    if rc.iter().any(|r| !(r.abs() < 1.0)) {
        return None;
    }
    // the normal density underflows beyond ±38
    let (lo, hi) = (-38.0, a[k].min(38.0));
    if hi <= lo {
        return Some(CdfEstimate::exact(0.0, 0.0));
    }
    let f = |x: f64| {
        let b: Vec<f64> = (0..3).map(|i| (a[rest[i]] - rk[i] * x) / s[i]).collect();
        norm_pdf(x) * tvn_cdf(&b, rc, opts).value
    };
    let rel = (opts.accuracy * 1e-2).clamp(1e-12, 1e-8);
    let scale = gl_panel(&f, lo, hi).abs().max(1e-300);
    let (value, err) = adaptive_gl(&f, lo, hi, rel * scale, 30);
    Some(CdfEstimate::exact(value.clamp(0.0, 1.0), err + 1e-15))
}

/// `2π cos(θ) ∂Φ₃/∂r` at `r = sin θ` for the pair `(a, b)`, the third limit
/// `c` with correlations `ra = r(a,c)`, `rb = r(b,c)`.
fn plackett_integrand(a: f64, b: f64, c: f64, ra: f64, rb: f64, r: f64) -> f64 {
    let rr = (1.0 - r) * (1.0 + r);
    let dt = rr * (rr - (ra - rb).powi(2) - 2.0 * ra * rb * (1.0 - r));
    if !(dt > 0.0) {
        return 0.0;
    }
    let bt = (c * rr + a * (r * rb - ra) + b * (r * ra - rb)) / dt.sqrt();
    let ft = (a - r * b).powi(2) / rr + b * b;
    if bt <= -40.0 || ft >= 1500.0 {
        return 0.0;
    }
    (-ft / 2.0).exp() * norm_cdf(bt)
}

fn gl10() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(10))
}

fn gl_panel(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (x, w) = gl10();
    let (c, h) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
    h * x.iter().zip(w).map(|(&xi, &wi)| wi * f(c + h * xi)).sum::<f64>()
}

/// Adaptive bisection with a ten-point Gauss–Legendre rule per panel.
/// Returns the integral and an error estimate.
pub(crate) fn adaptive_gl(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, tol: f64, max_depth: u32) -> (f64, f64) {
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        lo: f64,
        hi: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> (f64, f64) {
        let mid = 0.5 * (lo + hi);
        let left = gl_panel(f, lo, mid);
        let right = gl_panel(f, mid, hi);
        let err = (left + right - whole).abs();
        if err <= tol || depth == 0 {
            return (left + right, err);
        }
        let (l, el) = recurse(f, lo, mid, left, tol / 2.0, depth - 1);
        let (r, er) = recurse(f, mid, hi, right, tol / 2.0, depth - 1);
        (l + r, el + er)
    }
    let whole = gl_panel(f, lo, hi);
    recurse(f, lo, hi, whole, tol, max_depth)
}

fn primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut c = 2u64;
    while out.len() < n {
        if (2..c).take_while(|d| d * d <= c).all(|d| c % d != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

const QMC_SHIFTS: usize = 12;

/// Separation-of-variables integral with Gibson–Glasbey–Elston variable
/// prioritisation, randomly shifted Kronecker lattices, the baker's
/// transform and antithetic pairs.
fn qmc_cdf(a: &[f64], corr: &DMatrix<f64>, opts: &CdfOptions) -> CdfEstimate {
    let m = a.len();
    // prioritised Cholesky factor
    let mut a = a.to_vec();
    let mut rmat = corr.clone();
    let mut c = DMatrix::<f64>::zeros(m, m);
    let mut y = vec![0.0; m];
    for i in 0..m {
        let mut best = (i, f64::INFINITY, 0.0, 0.0);
        for j in i..m {
            let mut s2 = rmat[(j, j)];
            let mut num = a[j];
            for k in 0..i {
                s2 -= c[(j, k)] * c[(j, k)];
                num -= c[(j, k)] * y[k];
            }
            let s = s2.max(1e-300).sqrt();
            let t = num / s;
            let p = norm_cdf(t);
            if p < best.1 {
                best = (j, p, s, t);
            }
        }
        let (j, _, s, t) = best;
        if j != i {
            a.swap(i, j);
            rmat.swap_rows(i, j);
            rmat.swap_columns(i, j);
            c.swap_rows(i, j);
        }
        c[(i, i)] = s;
        for l in (i + 1)..m {
            let mut v = rmat[(l, i)];
            for k in 0..i {
                v -= c[(l, k)] * c[(i, k)];
            }
            c[(l, i)] = v / s;
        }
        let p = norm_cdf(t).max(1e-300);
        y[i] = -norm_pdf(t) / p;
    }

    let dim = m - 1;
    let gen: Vec<f64> = primes(dim).iter().map(|&p| (p as f64).sqrt().fract()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hash_f64s(
        opts.seed,
        a.iter().copied().chain(corr.iter().copied()),
    ));
    let shifts: Vec<Vec<f64>> =
        (0..QMC_SHIFTS).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();

    let integrand = |w: &[f64], yv: &mut [f64]| -> f64 {
        let mut e = norm_cdf(a[0] / c[(0, 0)]);
        let mut prod = e;
        for i in 1..m {
            let u = (w[i - 1] * e).clamp(1e-300, 1.0 - 1e-16);
            yv[i - 1] = norm_quantile(u);
            let mut t = a[i];
            for k in 0..i {
                t -= c[(i, k)] * yv[k];
            }
            e = norm_cdf(t / c[(i, i)]);
            prod *= e;
            if prod == 0.0 {
                break;
            }
        }
        prod
    };

    let mut n_pts = 256usize;
    let mut sums = vec![0.0; QMC_SHIFTS];
    let mut counts = 0usize;
    let mut next_index = 1usize;
    let mut w = vec![0.0; dim];
    let mut wa = vec![0.0; dim];
    let mut yv = vec![0.0; m];
    loop {
        for (s, shift) in shifts.iter().enumerate() {
            for j in next_index..next_index + n_pts {
                for k in 0..dim {
                    let x = (j as f64 * gen[k] + shift[k]).fract();
                    let x = (2.0 * x - 1.0).abs();
                    w[k] = x;
                    wa[k] = 1.0 - x;
                }
                sums[s] += 0.5 * (integrand(&w, &mut yv) + integrand(&wa, &mut yv));
            }
        }
        counts += n_pts;
        next_index += n_pts;
        let means: Vec<f64> = sums.iter().map(|s| s / counts as f64).collect();
        let mean = means.iter().sum::<f64>() / QMC_SHIFTS as f64;
        let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / ((QMC_SHIFTS - 1) * QMC_SHIFTS) as f64;
        let error = 3.0 * var.sqrt();
        let used = 2 * counts * QMC_SHIFTS;
        if error <= opts.accuracy || used >= opts.max_points {
            return CdfEstimate {
                value: mean.clamp(0.0, 1.0),
                error,
                converged: error <= opts.accuracy,
            };
        }
        n_pts = counts;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        let p18: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert_relative_eq!(p18, 2.0 / 19.0, epsilon = 1e-14);
    }

    #[test]
    fn univariate_values() {
        assert_eq!(norm_cdf(0.0), 0.5);
        assert_relative_eq!(norm_cdf(1.959963984540054), 0.975, epsilon = 1e-14);
        assert_relative_eq!(norm_quantile(0.975), 1.959963984540054, epsilon = 1e-13);
        let est = mvn_cdf(&DMatrix::from_element(1, 1, 1.0), &[0.0], &CdfOptions::default()).unwrap();
        assert_eq!(est.value, 0.5);
    }

    #[test]
    fn bivariate_orthant_closed_form() {
        for r in [-0.99, -0.9, -0.5, -0.1, 0.0, 0.2, 0.5, 0.8, 0.93, 0.999] {
            let exact = 0.25 + f64::asin(r) / (2.0 * PI);
            assert_relative_eq!(bvn_cdf(0.0, 0.0, r), exact, epsilon = 1e-14);
        }
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let est = mvn_cdf(&sigma, &[0.0, 0.0], &CdfOptions::default()).unwrap();
        assert_relative_eq!(est.value, 1.0 / 3.0, epsilon = 1e-14);
        let eye = DMatrix::identity(2, 2);
        assert_relative_eq!(mvn_cdf(&eye, &[0.0, 0.0], &CdfOptions::default()).unwrap().value, 0.25);
    }

    // Reference values from 30-digit quadrature of the conditional form.
    #[test]
    fn bivariate_against_reference_values() {
        let cases = [
            (0.3, -1.2, 0.6, 0.108425504246807136),
            (1.5, 2.0, -0.7, 0.910442870407987865),
            (-2.0, -1.0, 0.95, 0.0227415329125073956),
            (0.5, 0.4, -0.95, 0.346967177882818513),
            (2.5, -0.5, 0.3, 0.308041539862526358),
            (-3.0, -3.0, 0.99, 0.00110151999862062251),
            (1.0, -1.0, -0.999, 0.00431705799618669212),
        ];
        for (a, b, r, expect) in cases {
            assert_relative_eq!(bvn_cdf(a, b, r), expect, epsilon = 1e-13);
        }
    }

    /// Independent route: integrate `φ(x) Φ₂(·|x)` over the first coordinate.
    fn tvn_by_conditioning(a: [f64; 3], r: [f64; 3]) -> f64 {
        let (r01, r02, r12) = (r[0], r[1], r[2]);
        let s1 = ((1.0 - r01) * (1.0 + r01)).sqrt();
        let s2 = ((1.0 - r02) * (1.0 + r02)).sqrt();
        let rho = ((r12 - r01 * r02) / (s1 * s2)).clamp(-1.0, 1.0);
        let f = |x: f64| norm_pdf(x) * bvn_cdf((a[1] - r01 * x) / s1, (a[2] - r02 * x) / s2, rho);
        adaptive_gl(&f, -12.0, a[0], 1e-15, 40).0
    }

    #[test]
    fn trivariate_matches_conditioning_route() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let opts = CdfOptions::default();
        for case in 0..300 {
            // random correlation matrix from normalised Gram vectors
            let v: Vec<[f64; 3]> =
                (0..3).map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]).collect();
            let mix = if case % 3 == 0 { 0.05 } else { 1.0 };
            let g = |i: usize, j: usize| {
                let base: f64 = (0..3).map(|k| v[i][k] * v[j][k]).sum::<f64>() * mix;
                base + 0.02 * (i == j) as u8 as f64 + (1.0 - mix) * 0.2
            };
            let c = |i: usize, j: usize| g(i, j) / (g(i, i) * g(j, j)).sqrt();
            let r = [c(0, 1), c(0, 2), c(1, 2)];
            let a = [rng.random::<f64>() * 6.0 - 4.0, rng.random::<f64>() * 6.0 - 3.0, rng.random::<f64>() * 6.0 - 3.0];
            let want = tvn_by_conditioning(a, r);
            let got = tvn_cdf(&a, r, &opts).value;
            assert!((got - want).abs() <= 1e-12 + 1e-9 * want, "{a:?} {r:?}: {got} vs {want}");
        }
    }

    #[test]
    fn trivariate_orthant_closed_form() {
        // P(X<0,Y<0,Z<0) = 1/8 + (asin r12 + asin r13 + asin r23)/(4π)
        let rs: [f64; 3] = [0.3, -0.2, 0.5];
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, rs[0], rs[1], rs[0], 1.0, rs[2], rs[1], rs[2], 1.0]);
        let exact = 0.125 + rs.iter().map(|r| r.asin()).sum::<f64>() / (4.0 * PI);
        let est = mvn_cdf(&sigma, &[0.0; 3], &CdfOptions::default()).unwrap();
        assert!((est.value - exact).abs() < 1e-12, "{} vs {}", est.value, exact);
        assert!((est.value - exact).abs() <= est.error.max(1e-13));
    }

    #[test]
    fn quadrivariate_orthant_equicorrelated() {
        // equicorrelation 1/2: P = 1/(m+1) for the negative orthant
        let m = 4;
        let sigma = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.5 });
        let est = mvn_cdf(&sigma, &[0.0; 4], &CdfOptions::default()).unwrap();
        assert!(est.converged);
        assert!(est.error <= 1e-6);
        assert!((est.value - 0.2).abs() <= est.error, "{} err {}", est.value, est.error);
        let again = mvn_cdf(&sigma, &[0.0; 4], &CdfOptions::default()).unwrap();
        assert_eq!(est.value, again.value);
    }

    #[test]
    fn quadrivariate_quadrature_agrees_with_lattice() {
        let corr = DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 0.6, 0.3, -0.2, 0.6, 1.0, 0.5, 0.1, 0.3, 0.5, 1.0, 0.4, -0.2, 0.1, 0.4, 1.0],
        );
        let opts = CdfOptions { accuracy: 2e-7, max_points: 20_000_000, seed: 3 };
        for a in [[0.3, 0.5, -0.2, 1.0], [-2.0, -1.5, -2.5, -1.0], [1.5, 2.0, 0.5, 3.0]] {
            let quad = qvn_cdf(&a, &corr, &opts).unwrap();
            let lattice = qmc_cdf(&a, &corr, &opts);
            assert!((quad.value - lattice.value).abs() <= lattice.error + 1e-9, "{a:?}: {quad:?} {lattice:?}");
        }
        let near = DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.999 });
        assert!(qvn_cdf(&[0.0; 4], &near, &opts).is_none());
        assert!(mvn_cdf(&near, &[0.0; 4], &CdfOptions::default()).unwrap().value > 0.45);
    }

    #[test]
    fn independent_dimensions_factorise() {
        let sigma: DMatrix<f64> = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0, 0.25, 2.0, 1.0]));
        let upper = [0.3, -1.0, 0.1, 2.0, -0.4];
        let exact: f64 = upper
            .iter()
            .enumerate()
            .map(|(i, &u)| norm_cdf(u / sigma[(i, i)].sqrt()))
            .product();
        let est = mvn_cdf(&sigma, &upper, &CdfOptions::default()).unwrap();
        assert!((est.value - exact).abs() <= est.error.max(1e-12));
        let sub = mvn_cdf(&sigma.view((0, 0), (3, 3)).into_owned(), &upper[..3], &CdfOptions::default())
            .unwrap();
        let exact3: f64 = (0..3).map(|i| norm_cdf(upper[i] / sigma[(i, i)].sqrt())).product();
        assert!((sub.value - exact3).abs() < 1e-12);
    }

    #[test]
    fn infinite_limits_reduce_dimension() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let est = mvn_cdf(&sigma, &[0.7, f64::INFINITY], &CdfOptions::default()).unwrap();
        assert_relative_eq!(est.value, norm_cdf(0.7));
        let zero = mvn_cdf(&sigma, &[0.7, f64::NEG_INFINITY], &CdfOptions::default()).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn rejects_non_spd() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            mvn_cdf(&bad, &[0.0, 0.0], &CdfOptions::default()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let m = 5;
        let sigma = DMatrix::from_fn(m, m, |i, j| 0.9f64.powi((i as i32 - j as i32).abs()));
        let opts = CdfOptions { accuracy: 1e-14, max_points: 10_000, seed: 1 };
        let est = mvn_cdf(&sigma, &[0.1, 0.2, -0.3, 0.4, 0.5], &opts).unwrap();
        assert!(!est.converged);
        assert!(est.value > 0.0 && est.value < 1.0);
    }
}
