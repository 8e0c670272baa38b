//! Derivative-free minimization by the Nelder–Mead simplex method.
//!
//! The objective may return `+∞` to mark infeasible points; such vertices
//! are simply ranked worst.

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadConfig<T> {
    pub max_iterations: usize,
    /// Converged once `f_worst − f_best` falls to this value.
    pub f_tol: T,
    /// Edge length of the initial simplex along each axis.
    pub initial_step: T,
}

impl<T: Real> Default for NelderMeadConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            f_tol: T::lit(1e-10),
            initial_step: T::lit(0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub f: T,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Minimizes `f` from `x0`. When the simplex collapses before the iteration
/// budget is spent, it is rebuilt around the incumbent with a tenth of the
/// previous step; the search ends when a rebuild no longer improves `f` by
/// more than `f_tol`.
pub fn minimize<T: Real>(f: impl Fn(&[T]) -> T, x0: &[T], cfg: &NelderMeadConfig<T>) -> Minimum<T> {
    let dim = x0.len();
    let mut evaluations = 1;
    let f0 = f(x0);
    if dim == 0 {
        return Minimum {
            x: Vec::new(),
            f: f0,
            iterations: 0,
            evaluations,
        };
    }
    let (alpha, gamma, rho, sigma) = (T::one(), T::lit(2.0), T::lit(0.5), T::lit(0.5));
    let mut best_x = x0.to_vec();
    let mut best_f = f0;
    let mut step = cfg.initial_step;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(dim + 1);
        simplex.push((best_x.clone(), best_f));
        for i in 0..dim {
            let mut v = best_x.clone();
            v[i] += step;
            let fv = f(&v);
            evaluations += 1;
            simplex.push((v, fv));
        }
        let restart_from = best_f;

        while iterations < cfg.max_iterations {
            simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            let (fb, fw) = (simplex[0].1, simplex[dim].1);
            if fw.is_finite() && fw - fb <= cfg.f_tol {
                break;
            }
            iterations += 1;

            let mut centroid = vec![T::zero(); dim];
            for (v, _) in &simplex[..dim] {
                for (c, &vi) in centroid.iter_mut().zip(v) {
                    *c += vi;
                }
            }
            let inv = T::from_usize(dim).unwrap().recip();
            centroid.iter_mut().for_each(|c| *c *= inv);

            let worst = simplex[dim].0.clone();
            let along = |coef: T| -> Vec<T> {
                centroid
                    .iter()
                    .zip(&worst)
                    .map(|(&c, &w)| c + coef * (c - w))
                    .collect()
            };

            let xr = along(alpha);
            let fr = f(&xr);
            evaluations += 1;
            if fr < simplex[0].1 {
                let xe = along(alpha * gamma);
                let fe = f(&xe);
                evaluations += 1;
                simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[dim - 1].1 {
                simplex[dim] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[dim].1 {
                    let xc = along(alpha * rho);
                    let fc = f(&xc);
                    (xc, fc)
                } else {
                    let xc = along(-rho);
                    let fc = f(&xc);
                    (xc, fc)
                };
                evaluations += 1;
                if fc < fr.min(simplex[dim].1) {
                    simplex[dim] = (xc, fc);
                } else {
                    let anchor = simplex[0].0.clone();
                    for (v, fv) in simplex.iter_mut().skip(1) {
                        for (vi, &a) in v.iter_mut().zip(&anchor) {
                            *vi = a + sigma * (*vi - a);
                        }
                        *fv = f(v);
                        evaluations += 1;
                    }
                }
            }
        }

        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        if simplex[0].1 < best_f {
            best_x = simplex[0].0.clone();
            best_f = simplex[0].1;
        }
        if !(restart_from - best_f > cfg.f_tol) {
            break;
        }
        step *= T::lit(0.1);
    }

    Minimum {
        x: best_x,
        f: best_f,
        iterations,
        evaluations,
    }
}
