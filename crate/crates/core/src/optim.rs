//! Small unconstrained minimizers: Nelder–Mead simplex and L-BFGS.

/// Result of a minimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
    /// Initial simplex edge length.
    pub step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            f_tol: 1e-9,
            x_tol: 1e-8,
            step: 0.5,
        }
    }
}

/// Nelder–Mead with the adaptive coefficients of Gao and Han, which behave
/// better than the classic ones beyond a handful of dimensions. Non-finite
/// objective values are treated as +∞.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n.max(1) as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
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

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0, &mut evals)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= opts.f_tol * (1.0 + best.abs()) && diameter <= opts.x_tol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(alpha * beta);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(alpha * gamma);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-gamma);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < fr.min(simplex[n].1) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = x_best.iter().zip(&entry.0).map(|(b, v)| b + delta * (v - b)).collect();
            let v = eval(&x, &mut evals);
            *entry = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        evaluations: evals,
        converged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when the max-norm of the gradient falls below this.
    pub g_tol: f64,
    /// Stop when the relative decrease per iteration falls below this.
    pub f_tol: f64,
    /// Largest allowed max-norm step.
    pub max_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            memory: 8,
            g_tol: 1e-5,
            f_tol: 1e-10,
            max_step: 2.0,
        }
    }
}

/// L-BFGS with a backtracking Armijo line search. `fg` returns the value
/// and gradient; a non-finite value rejects the trial point.
pub fn lbfgs<F>(mut fg: F, x0: &[f64], opts: &LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    let mut evals = 1;
    if !f.is_finite() {
        return Minimum {
            x,
            value: f64::INFINITY,
            evaluations: evals,
            converged: false,
        };
    }
    let mut hist: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut converged = false;

    for _ in 0..opts.max_iters {
        if g.iter().all(|v| v.abs() <= opts.g_tol) {
            converged = true;
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            hist.clear();
        }
        let dmax = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut t = if dmax > opts.max_step { opts.max_step / dmax } else { 1.0 };

        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let (fn_, gn) = fg(&xn);
            evals += 1;
            if fn_.is_finite() && fn_ <= f + 1e-4 * t * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - fn_;
        x = xn;
        f = fn_;
        g = gn;
        if decrease.abs() <= opts.f_tol * f.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Minimum {
        x,
        value: f,
        evaluations: evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let opts = NelderMeadOptions { max_evals: 5000, x_tol: 1e-10, f_tol: 1e-14, ..Default::default() };
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn nelder_mead_survives_infinite_regions() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let m = nelder_mead(f, &[0.5], &NelderMeadOptions::default());
        assert!((m.x[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn lbfgs_on_quadratic_and_rosenbrock() {
        let quad = |x: &[f64]| {
            let v: f64 = x.iter().enumerate().map(|(i, xi)| (i + 1) as f64 * (xi - 1.0).powi(2)).sum();
            let g = x.iter().enumerate().map(|(i, xi)| 2.0 * (i + 1) as f64 * (xi - 1.0)).collect();
            (v, g)
        };
        let m = lbfgs(quad, &[0.0; 20], &LbfgsOptions::default());
        assert!(m.x.iter().all(|v| (v - 1.0).abs() < 1e-5));

        let rb = |x: &[f64]| {
            let g = vec![
                -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
                200.0 * (x[1] - x[0] * x[0]),
            ];
            (rosenbrock(x), g)
        };
        let opts = LbfgsOptions { max_iters: 500, g_tol: 1e-8, f_tol: 0.0, ..Default::default() };
        let m = lbfgs(rb, &[-1.2, 1.0], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-5, "{:?}", m.x);
    }
}
