//! Nelder–Mead simplex minimisation.

/// Stopping rules. The search stops when the simplex is smaller than `xtol`
/// in every coordinate and the spread of function values is below `ftol`,
/// or when `max_evals` evaluations have been spent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    pub xtol: f64,
    pub ftol: f64,
    /// Edge length of the initial simplex.
    pub step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 500, xtol: 1e-6, ftol: 1e-9, step: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimise `f` from `x0`. Non-finite values are treated as `+∞`, so `f` may
/// signal infeasible points by returning NaN or infinity.
pub fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult {
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if opts.max_evals == 0 {
        return NelderMeadResult { x: x0.to_vec(), fx: f64::NAN, evals: 0, converged: false };
    }
    let f0 = eval(x0, &mut evals);
    if n == 0 {
        return NelderMeadResult { x: vec![], fx: f0, evals, converged: true };
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..n {
        if evals >= opts.max_evals {
            break;
        }
        let mut x = x0.to_vec();
        x[i] += opts.step;
        let fx = eval(&x, &mut evals);
        simplex.push((x, fx));
    }
    let best = |s: &[(Vec<f64>, f64)]| s.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().clone();
    if simplex.len() < n + 1 {
        let (x, fx) = best(&simplex);
        return NelderMeadResult { x, fx, evals, converged: false };
    }

    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = simplex[1..].iter().map(|(_, v)| (v - simplex[0].1).abs()).fold(0.0, f64::max);
        if size <= opts.xtol && spread <= opts.ftol {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }
        let centroid: Vec<f64> =
            (0..n).map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let toward = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (worst.0[k] - centroid[k])).collect() };

        let xr = toward(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            if evals >= opts.max_evals {
                simplex[n] = (xr, fr);
                continue;
            }
            let xe = toward(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        if evals >= opts.max_evals {
            break;
        }
        let (xc, fc, accept) = if fr < worst.1 {
            let xc = toward(-0.5);
            let fc = eval(&xc, &mut evals);
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = toward(0.5);
            let fc = eval(&xc, &mut evals);
            let ok = fc < worst.1;
            (xc, fc, ok)
        };
        if accept {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink towards the best vertex
        let x_best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            if evals >= opts.max_evals {
                break;
            }
            let x: Vec<f64> = v.0.iter().zip(&x_best).map(|(a, b)| b + 0.5 * (a - b)).collect();
            let fx = eval(&x, &mut evals);
            *v = (x, fx);
        }
    }
    let (x, fx) = best(&simplex);
    NelderMeadResult { x, fx, evals, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions { max_evals: 5000, xtol: 1e-9, ftol: 1e-14, step: 0.5 };
        let r = nelder_mead(&mut f, &[-1.2, 1.0], &opts);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
        assert!(r.evals <= 5000);
    }

    #[test]
    fn one_dimensional_quadratic() {
        let mut f = |x: &[f64]| (x[0] - 3.0).powi(2) + 1.0;
        let r = nelder_mead(&mut f, &[0.0], &NelderMeadOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-5);
        assert!((r.fx - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_points_are_avoided() {
        let mut f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.1).powi(2) };
        let r = nelder_mead(&mut f, &[1.0], &NelderMeadOptions::default());
        assert!((r.x[0] - 0.1).abs() < 1e-5);
    }

    #[test]
    fn budget_is_respected() {
        let mut count = 0;
        let mut f = |x: &[f64]| {
            count += 1;
            x.iter().map(|v| v * v).sum()
        };
        let opts = NelderMeadOptions { max_evals: 17, ..NelderMeadOptions::default() };
        let r = nelder_mead(&mut f, &[1.0, 2.0, 3.0], &opts);
        assert!(!r.converged);
        assert_eq!(r.evals, count);
        assert!(r.evals <= 17);
        let zero = nelder_mead(&mut |_: &[f64]| 0.0, &[1.0], &NelderMeadOptions { max_evals: 0, ..opts });
        assert_eq!(zero.x, vec![1.0]);
        assert!(!zero.converged && zero.evals == 0);
    }
}
