//! Bound-constrained quasi-Newton minimiser (projected BFGS with Armijo
//! backtracking). Deterministic: no randomness, fixed evaluation order.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Projected-gradient tolerance, scaled by max(1, |F|).
    pub gtol: f64,
    /// Change in F between accepted steps, scaled by max(1, |F|).
    pub ftol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iter: 10_000,
            gtol: 1e-6,
            ftol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub f_start: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step.
    pub trace: Vec<f64>,
}

pub(crate) struct Problem<'a> {
    /// Returns (value, gradient, feasible).
    pub eval: &'a dyn Fn(&[f64]) -> (f64, Vec<f64>, bool),
    /// Approximate Hessian used to (re)initialise the inverse-Hessian estimate.
    pub hessian: &'a dyn Fn(&[f64]) -> Option<DMatrix<f64>>,
    pub lower: &'a [f64],
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

fn project(x: &mut [f64], lower: &[f64]) {
    for (v, &lb) in x.iter_mut().zip(lower) {
        if *v < lb {
            *v = lb;
        }
    }
}

fn active(x: &[f64], g: &[f64], lower: &[f64]) -> Vec<bool> {
    x.iter()
        .zip(g)
        .zip(lower)
        .map(|((&xi, &gi), &lb)| lb.is_finite() && xi <= lb && gi > 0.0)
        .collect()
}

fn projected_norm(g: &[f64], act: &[bool]) -> f64 {
    g.iter()
        .zip(act)
        .filter(|(_, &a)| !a)
        .map(|(v, _)| v * v)
        .sum::<f64>()
        .sqrt()
}

fn initial_inverse(problem: &Problem<'_>, x: &[f64], n: usize) -> DMatrix<f64> {
    if let Some(h) = (problem.hessian)(x) {
        if let Some(chol) = h.clone().cholesky() {
            let inv = chol.inverse();
            if inv.iter().all(|v| v.is_finite()) {
                return inv;
            }
        }
        // Regularise a near-singular approximation.
        let scale = h.diagonal().iter().cloned().fold(0.0_f64, f64::max).max(1.0);
        let reg = &h + DMatrix::identity(n, n) * (1e-8 * scale);
        if let Some(chol) = reg.cholesky() {
            return chol.inverse();
        }
    }
    DMatrix::identity(n, n)
}

pub(crate) fn minimize(problem: &Problem<'_>, x0: &[f64], opts: &OptimOptions) -> OptimOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, problem.lower);
    let (mut f, mut g, _) = (problem.eval)(&x);
    let f_start = f;
    let mut trace = Vec::new();
    if n == 0 {
        return OptimOutcome {
            x,
            f,
            f_start,
            gradient_norm: 0.0,
            iterations: 0,
            converged: true,
            trace,
        };
    }
    let mut h_inv = initial_inverse(problem, &x, n);
    let mut last_change = f64::INFINITY;
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;
    let mut gnorm;

    loop {
        let act = active(&x, &g, problem.lower);
        gnorm = projected_norm(&g, &act);
        let scale = f.abs().max(1.0);
        if gnorm < opts.gtol * scale && (last_change <= opts.ftol * scale || iterations == 0) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let pg = DVector::from_iterator(n, g.iter().zip(&act).map(|(&v, &a)| if a { 0.0 } else { v }));
        let mut d = -(&h_inv * &pg);
        for (di, &a) in d.iter_mut().zip(&act) {
            if a {
                *di = 0.0;
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h_inv = initial_inverse(problem, &x, n);
            fresh = true;
            d = -(&h_inv * &pg);
            for (di, &a) in d.iter_mut().zip(&act) {
                if a {
                    *di = 0.0;
                }
            }
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                d = -pg.clone();
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let mut xn: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + alpha * b).collect();
            project(&mut xn, problem.lower);
            let (fn_, gn, ok) = (problem.eval)(&xn);
            let decrease: f64 = xn.iter().zip(&x).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
            if ok && fn_.is_finite() && fn_ <= f + ARMIJO_C1 * decrease && fn_ <= f {
                accepted = Some((xn, fn_, gn));
                break;
            }
            alpha *= 0.5;
        }

        let Some((xn, fn_, gn)) = accepted else {
            if fresh {
                // No progress even along a fresh direction: at numerical precision.
                let act = active(&x, &g, problem.lower);
                gnorm = projected_norm(&g, &act);
                converged = gnorm < opts.gtol * f.abs().max(1.0);
                break;
            }
            h_inv = initial_inverse(problem, &x, n);
            fresh = true;
            continue;
        };
        fresh = false;

        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H ← H − ρ(Hy sᵀ + s yᵀH) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        last_change = (f - fn_).abs();
        x = xn;
        f = fn_;
        g = gn;
        trace.push(f);
    }

    OptimOutcome {
        x,
        f,
        f_start,
        gradient_norm: gnorm,
        iterations,
        converged,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let eval = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (f, g, true)
        };
        let hess = |_: &[f64]| None;
        let lower = [f64::NEG_INFINITY; 2];
        let problem = Problem {
            eval: &eval,
            hessian: &hess,
            lower: &lower,
        };
        let out = minimize(&problem, &[-1.2, 1.0], &OptimOptions::default());
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_lower_bound() {
        // minimum of (x+1)^2 is at -1; bound at 0.5
        let eval = |x: &[f64]| ((x[0] + 1.0).powi(2), vec![2.0 * (x[0] + 1.0)], true);
        let hess = |_: &[f64]| Some(DMatrix::from_element(1, 1, 2.0));
        let lower = [0.5];
        let problem = Problem {
            eval: &eval,
            hessian: &hess,
            lower: &lower,
        };
        let out = minimize(&problem, &[3.0], &OptimOptions::default());
        assert!(out.converged);
        assert_eq!(out.x[0], 0.5);
    }
}
