//! Limited-memory quasi-Newton minimiser used for hyperparameter search.
//!
//! Standard two-loop recursion with an Armijo backtracking line search.
//! The objective may refuse a point (returning `None`), e.g. when a
//! covariance factorization fails there; the line search then backtracks,
//! which keeps the iterates inside the feasible region.

const MEMORY: usize = 8;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

#[derive(Debug, Clone)]
pub struct OptimOptions {
    pub max_iters: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when the relative objective improvement falls below this.
    pub f_tol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iters: 200,
            grad_tol: 1e-5,
            f_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimise `f` starting from `x0`. Returns `None` when `f` rejects the
/// starting point.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &OptimOptions) -> Option<OptimOutcome>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x)?;

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        iterations = iter;
        if inf_norm(&g) < opts.grad_tol {
            converged = true;
            break;
        }

        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for i in (0..m).rev() {
            let a = rho_hist[i] * dot(&s_hist[i], &q);
            alphas[i] = a;
            for (qk, yk) in q.iter_mut().zip(&y_hist[i]) {
                *qk -= a * yk;
            }
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            for qk in q.iter_mut() {
                *qk *= gamma;
            }
        }
        for i in 0..m {
            let b = rho_hist[i] * dot(&y_hist[i], &q);
            for (qk, sk) in q.iter_mut().zip(&s_hist[i]) {
                *qk += (alphas[i] - b) * sk;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();

        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            // Not a descent direction; fall back to steepest descent.
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        // On the very first step, scale down to a unit-length move.
        let mut step = if s_hist.is_empty() {
            (1.0 / inf_norm(&dir).max(1.0)).min(1.0)
        } else {
            1.0
        };

        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        for _ in 0..MAX_BACKTRACKS {
            let xt: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Some((ft, gt)) = f(&xt) {
                if ft <= fx + ARMIJO_C1 * step * slope {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }

        let Some((xt, ft, gt)) = accepted else {
            // The line search collapsed: no further progress possible.
            converged = inf_norm(&g) < opts.grad_tol.max(1e-4);
            break;
        };

        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-10 * inf_norm(&s).max(1e-300) {
            if s_hist.len() == MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(yv);
        }

        let improvement = fx - ft;
        x = xt;
        g = gt;
        fx = ft;
        if improvement.abs() <= opts.f_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    if inf_norm(&g) < opts.grad_tol {
        converged = true;
    }
    Some(OptimOutcome {
        x,
        value: fx,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quadratic_bowl() {
        let out = minimize(
            |x| {
                let f = 3.0 * (x[0] - 1.0).powi(2) + 0.5 * (x[1] + 2.0).powi(2);
                Some((f, vec![6.0 * (x[0] - 1.0), x[1] + 2.0]))
            },
            &[10.0, -7.0],
            &OptimOptions::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(out.x[1], -2.0, epsilon = 1e-5);
    }

    #[test]
    fn rosenbrock() {
        let out = minimize(
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ];
                Some((f, g))
            },
            &[-1.2, 1.0],
            &OptimOptions {
                max_iters: 500,
                ..Default::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(out.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn respects_infeasible_regions() {
        // Minimum of (x-2)^2 subject to x <= 1 enforced by rejection.
        let out = minimize(
            |x| {
                if x[0] > 1.0 {
                    None
                } else {
                    Some(((x[0] - 2.0).powi(2), vec![2.0 * (x[0] - 2.0)]))
                }
            },
            &[-3.0, ],
            &OptimOptions::default(),
        )
        .unwrap();
        assert!(out.x[0] <= 1.0);
        assert!(out.x[0] > 0.5);
    }

    #[test]
    fn rejected_start_returns_none() {
        assert!(minimize(|_| None, &[0.0], &OptimOptions::default()).is_none());
    }
}
