//! Determinant maximization over an affine symmetric-matrix map:
//!
//! ```text
//! maximize    ln det G(x)
//! subject to  F(x) ⪰ 0,   aᵀx ≤ c
//! ```
//!
//! solved with a log-barrier path-following method. For barrier weight `t`
//! the centering problem minimizes
//!
//! ```text
//! φ_t(x) = −t·ln det G(x) − ln det F(x) − ln(c − aᵀx)
//! ```
//!
//! by damped Newton steps; after centering, `t` is multiplied by `mu` until
//! the duality-gap bound `(dim F + 1)/t` drops below `gap_tol`.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{cholesky, LinalgError, SymMatrix};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaxdetError {
    #[error("point is on or outside the boundary of the feasible set")]
    BoundaryPoint,
    #[error("no strictly feasible starting point")]
    Infeasible,
    #[error("problem is malformed: {0}")]
    Malformed(String),
}

impl From<LinalgError> for MaxdetError {
    fn from(_: LinalgError) -> Self {
        MaxdetError::BoundaryPoint
    }
}

/// Sparse symmetric coefficient matrix. Each `(i, j, v)` with `i >= j`
/// contributes `v` at `(i, j)` and `(j, i)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymCoeff<T> {
    entries: Vec<(usize, usize, T)>,
}

impl<T: Real> SymCoeff<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// Adds `v` at `(i, j)` and its mirror. Order of `i, j` does not matter.
    pub fn push(&mut self, i: usize, j: usize, v: T) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.entries.push((i, j, v));
    }

    pub fn with(mut self, i: usize, j: usize, v: T) -> Self {
        self.push(i, j, v);
        self
    }

    pub fn entries(&self) -> &[(usize, usize, T)] {
        &self.entries
    }

    pub fn to_dense(&self, dim: usize) -> SymMatrix<T> {
        let mut m = SymMatrix::zeros(dim);
        for &(i, j, v) in &self.entries {
            m.add_at(i, j, v);
        }
        m
    }

    /// Both orientations of every off-diagonal entry, so that
    /// `C = Σ v e_a e_bᵀ` over the returned triples.
    fn full_entries(&self) -> Vec<(usize, usize, T)> {
        let mut out = Vec::with_capacity(2 * self.entries.len());
        for &(i, j, v) in &self.entries {
            out.push((i, j, v));
            if i != j {
                out.push((j, i, v));
            }
        }
        out
    }
}

/// `M(x) = constant + Σ_k x_k · coeff_k`.
#[derive(Debug, Clone)]
pub struct AffineSymMap<T> {
    constant: SymMatrix<T>,
    coeffs: Vec<SymCoeff<T>>,
    full: Vec<Vec<(usize, usize, T)>>,
}

impl<T: Real> AffineSymMap<T> {
    pub fn new(constant: SymMatrix<T>, coeffs: Vec<SymCoeff<T>>) -> Result<Self, MaxdetError> {
        let dim = constant.n();
        for (k, c) in coeffs.iter().enumerate() {
            if let Some(&(i, _, _)) = c.entries.iter().find(|&&(i, _, _)| i >= dim) {
                return Err(MaxdetError::Malformed(format!(
                    "coefficient {k} touches row {i} of a {dim}x{dim} map"
                )));
            }
        }
        let full = coeffs.iter().map(SymCoeff::full_entries).collect();
        Ok(Self {
            constant,
            coeffs,
            full,
        })
    }

    /// Dense-coefficient convenience constructor; keeps the lower triangle
    /// nonzeros of each coefficient.
    pub fn from_dense(constant: SymMatrix<T>, coeffs: &[SymMatrix<T>]) -> Result<Self, MaxdetError> {
        let sparse = coeffs
            .iter()
            .map(|c| {
                let mut s = SymCoeff::new();
                for i in 0..c.n() {
                    for j in 0..=i {
                        if c.get(i, j) != T::zero() {
                            s.push(i, j, c.get(i, j));
                        }
                    }
                }
                s
            })
            .collect();
        Self::new(constant, sparse)
    }

    pub fn dim(&self) -> usize {
        self.constant.n()
    }

    pub fn x_dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn constant(&self) -> &SymMatrix<T> {
        &self.constant
    }

    pub fn coeff(&self, k: usize) -> &SymCoeff<T> {
        &self.coeffs[k]
    }

    pub fn eval(&self, x: &[T]) -> SymMatrix<T> {
        assert_eq!(x.len(), self.x_dim(), "decision vector length mismatch");
        let mut m = self.constant.clone();
        for (c, &xk) in self.coeffs.iter().zip(x) {
            if xk == T::zero() {
                continue;
            }
            for &(i, j, v) in &c.entries {
                m.add_at(i, j, xk * v);
            }
        }
        m
    }

    /// Congruence `D·M(x)·D` with `D = diag(d)`; `ln det` shifts by
    /// `2 Σ ln d_i`.
    fn congruence_scaled(&self, d: &[T]) -> Self {
        let n = self.dim();
        let constant = SymMatrix::from_lower_fn(n, |i, j| self.constant.get(i, j) * d[i] * d[j]);
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| SymCoeff {
                entries: c.entries.iter().map(|&(i, j, v)| (i, j, v * d[i] * d[j])).collect(),
            })
            .collect();
        Self::new(constant, coeffs).expect("scaling preserves shape")
    }

    /// Diagonal scaling that puts ones on the diagonal of `M(x)`.
    fn equilibration(&self, x: &[T]) -> Vec<T> {
        let m = self.eval(x);
        (0..self.dim())
            .map(|i| {
                let v = m.get(i, i);
                if v > T::zero() {
                    v.sqrt().recip()
                } else {
                    T::one()
                }
            })
            .collect()
    }

    /// `tr(W · coeff_k)` for symmetric `W`.
    fn trace_with(&self, w: &SymMatrix<T>, k: usize) -> T {
        self.full[k].iter().map(|&(a, b, v)| v * w.get(b, a)).sum()
    }

    /// `tr(W · coeff_k · W · coeff_l)` for symmetric `W`.
    fn trace_pair(&self, w: &SymMatrix<T>, k: usize, l: usize) -> T {
        let mut s = T::zero();
        for &(a, b, v) in &self.full[k] {
            for &(c, d, u) in &self.full[l] {
                s += v * u * w.get(b, c) * w.get(d, a);
            }
        }
        s
    }
}

/// Standard-form maxdet instance.
#[derive(Debug, Clone)]
pub struct MaxdetProblem<T> {
    objective: AffineSymMap<T>,
    lmi: AffineSymMap<T>,
    linear: Vec<T>,
    bound: T,
}

impl<T: Real> MaxdetProblem<T> {
    pub fn new(
        objective: AffineSymMap<T>,
        lmi: AffineSymMap<T>,
        linear: Vec<T>,
        bound: T,
    ) -> Result<Self, MaxdetError> {
        let nx = objective.x_dim();
        if lmi.x_dim() != nx || linear.len() != nx {
            return Err(MaxdetError::Malformed(format!(
                "decision dimensions disagree: objective {nx}, lmi {}, linear {}",
                lmi.x_dim(),
                linear.len()
            )));
        }
        Ok(Self {
            objective,
            lmi,
            linear,
            bound,
        })
    }

    pub fn x_dim(&self) -> usize {
        self.objective.x_dim()
    }

    pub fn objective(&self) -> &AffineSymMap<T> {
        &self.objective
    }

    pub fn lmi(&self) -> &AffineSymMap<T> {
        &self.lmi
    }

    pub fn linear(&self) -> (&[T], T) {
        (&self.linear, self.bound)
    }

    /// Number of barrier terms weighted as in the gap bound: `dim F + 1`.
    pub fn barrier_degree(&self) -> usize {
        self.lmi.dim() + 1
    }

    /// `c − aᵀx`.
    pub fn slack(&self, x: &[T]) -> T {
        self.bound - self.linear.iter().zip(x).map(|(&a, &xi)| a * xi).sum::<T>()
    }

    /// `ln det G(x)`.
    pub fn objective_value(&self, x: &[T]) -> Result<T, MaxdetError> {
        Ok(cholesky(&self.objective.eval(x))?.log_det())
    }

    pub fn is_strictly_feasible(&self, x: &[T]) -> bool {
        barrier_value(self, x, T::one()).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    /// Initial barrier weight.
    pub t0: T,
    /// Barrier weight multiplier between centering stages.
    pub mu: T,
    /// Target bound on the duality gap, natural-log units.
    pub gap_tol: T,
    /// Centering stops once half the squared Newton decrement is below this.
    pub newton_tol: T,
    /// Cap on total Newton steps over all stages.
    pub max_iterations: usize,
    /// Armijo slope parameter.
    pub ls_alpha: T,
    /// Backtracking shrink factor.
    pub ls_beta: T,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            t0: T::one(),
            mu: T::lit(10.0),
            gap_tol: T::lit(1e-8),
            newton_tol: T::lit(1e-9),
            max_iterations: 2000,
            ls_alpha: T::lit(0.01),
            ls_beta: T::lit(0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct MaxdetSolution<T> {
    pub x: Vec<T>,
    /// `ln det G(x)` at the returned point.
    pub value: T,
    /// `(dim F + 1)/t` at the last completed stage.
    pub gap_estimate: T,
    pub iterations: usize,
    pub status: SolveStatus,
    /// `ln det G` after each centering stage.
    pub stage_values: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BarrierEval<T> {
    pub value: T,
    pub gradient: Vec<T>,
    pub hessian: SymMatrix<T>,
}

/// `φ_t(x)`; fails with `BoundaryPoint` outside the strict interior.
pub fn barrier_value<T: Real>(prob: &MaxdetProblem<T>, x: &[T], t: T) -> Result<T, MaxdetError> {
    let slack = prob.slack(x);
    if !(slack > T::zero()) {
        return Err(MaxdetError::BoundaryPoint);
    }
    let ld_g = cholesky(&prob.objective.eval(x))?.log_det();
    let ld_f = cholesky(&prob.lmi.eval(x))?.log_det();
    Ok(-t * ld_g - ld_f - slack.ln())
}

/// Value, gradient and Hessian of `φ_t` at a strictly interior `x`, using
/// `∂ ln det M = tr(M⁻¹ M_k)` and `∂² ln det M = −tr(M⁻¹ M_k M⁻¹ M_l)`.
pub fn barrier_value_grad_hess<T: Real>(
    prob: &MaxdetProblem<T>,
    x: &[T],
    t: T,
) -> Result<BarrierEval<T>, MaxdetError> {
    let slack = prob.slack(x);
    if !(slack > T::zero()) {
        return Err(MaxdetError::BoundaryPoint);
    }
    let gc = cholesky(&prob.objective.eval(x))?;
    let fc = cholesky(&prob.lmi.eval(x))?;
    let value = -t * gc.log_det() - fc.log_det() - slack.ln();
    let g_inv = gc.inverse();
    let f_inv = fc.inverse();

    let nx = prob.x_dim();
    let inv_slack = slack.recip();
    let gradient: Vec<T> = (0..nx)
        .map(|k| {
            -t * prob.objective.trace_with(&g_inv, k) - prob.lmi.trace_with(&f_inv, k)
                + prob.linear[k] * inv_slack
        })
        .collect();

    let inv_slack2 = inv_slack * inv_slack;
    let rows: Vec<Vec<T>> = (0..nx)
        .into_par_iter()
        .map(|k| {
            (0..=k)
                .map(|l| {
                    t * prob.objective.trace_pair(&g_inv, k, l)
                        + prob.lmi.trace_pair(&f_inv, k, l)
                        + prob.linear[k] * prob.linear[l] * inv_slack2
                })
                .collect()
        })
        .collect();
    let hessian = SymMatrix::from_lower_fn(nx, |i, j| rows[i][j]);
    Ok(BarrierEval {
        value,
        gradient,
        hessian,
    })
}

/// Newton direction `−H⁻¹g`, solved on the Jacobi-scaled system
/// `(DHD)(D⁻¹Δ) = −Dg`; regularizes when it is numerically singular.
fn newton_direction<T: Real>(hess: &SymMatrix<T>, grad: &[T]) -> Option<Vec<T>> {
    let nx = hess.n();
    let d: Vec<T> = (0..nx)
        .map(|i| {
            let h = hess.get(i, i);
            if h > T::zero() {
                h.sqrt().recip()
            } else {
                T::one()
            }
        })
        .collect();
    let scaled = SymMatrix::from_lower_fn(nx, |i, j| hess.get(i, j) * d[i] * d[j]);
    let rhs: Vec<T> = grad.iter().zip(&d).map(|(&g, &di)| g * di).collect();
    let mut step = solve_regularized(&scaled, &rhs)?;
    for (s, &di) in step.iter_mut().zip(&d) {
        *s *= di;
    }
    Some(step)
}

fn solve_regularized<T: Real>(hess: &SymMatrix<T>, grad: &[T]) -> Option<Vec<T>> {
    let dim = hess.n().max(1);
    let base = (hess.trace() / T::from_usize(dim).unwrap()).abs();
    let mut shift = T::zero();
    for _ in 0..8 {
        let h = if shift > T::zero() {
            hess.shift_diagonal(shift)
        } else {
            hess.clone()
        };
        if let Ok(c) = cholesky(&h) {
            let mut d: Vec<T> = grad.iter().map(|&g| -g).collect();
            c.solve_in_place(&mut d);
            return Some(d);
        }
        shift = if shift == T::zero() {
            T::lit(1e-12) * base.max(T::min_positive_value())
        } else {
            shift * T::lit(100.0)
        };
    }
    None
}

fn axpy<T: Real>(x: &[T], s: T, d: &[T]) -> Vec<T> {
    x.iter().zip(d).map(|(&xi, &di)| xi + s * di).collect()
}

/// Newton decrement below which a full step is taken without the Armijo
/// test: for a self-concordant barrier the full step then stays interior
/// and converges quadratically, while the Armijo comparison itself is
/// swamped by rounding once `t` is large.
const QUADRATIC_REGION: f64 = 0.25;

/// Path-following barrier method from a strictly feasible `x0`.
pub fn solve<T: Real>(
    prob: &MaxdetProblem<T>,
    x0: &[T],
    cfg: &SolverConfig<T>,
) -> Result<MaxdetSolution<T>, MaxdetError> {
    if x0.len() != prob.x_dim() {
        return Err(MaxdetError::Malformed(format!(
            "start point has {} coordinates, problem has {}",
            x0.len(),
            prob.x_dim()
        )));
    }
    if !prob.is_strictly_feasible(x0) {
        return Err(MaxdetError::Infeasible);
    }
    let (scaled, shift) = equilibrated(prob, x0);
    let mut sol = solve_path(&scaled, x0, cfg)?;
    sol.value -= shift;
    for v in &mut sol.stage_values {
        *v -= shift;
    }
    Ok(sol)
}

/// Copy of `prob` with both matrix maps diagonally equilibrated at `x0`,
/// and the amount the scaling adds to `ln det G`.
fn equilibrated<T: Real>(prob: &MaxdetProblem<T>, x0: &[T]) -> (MaxdetProblem<T>, T) {
    let dg = prob.objective.equilibration(x0);
    let df = prob.lmi.equilibration(x0);
    let shift = T::lit(2.0) * dg.iter().map(|d| d.ln()).sum::<T>();
    let scaled = MaxdetProblem {
        objective: prob.objective.congruence_scaled(&dg),
        lmi: prob.lmi.congruence_scaled(&df),
        linear: prob.linear.clone(),
        bound: prob.bound,
    };
    (scaled, shift)
}

fn solve_path<T: Real>(
    prob: &MaxdetProblem<T>,
    x0: &[T],
    cfg: &SolverConfig<T>,
) -> Result<MaxdetSolution<T>, MaxdetError> {
    let degree = T::from_usize(prob.barrier_degree()).unwrap();
    let mut x = x0.to_vec();
    let mut t = cfg.t0;
    let mut iterations = 0usize;
    let mut stage_values = Vec::new();
    let max_ls = 60;

    loop {
        // Centering.
        let mut quadratic_steps = 0;
        loop {
            let eval = barrier_value_grad_hess(prob, &x, t)?;
            let Some(dx) = newton_direction(&eval.hessian, &eval.gradient) else {
                break;
            };
            let slope: T = eval.gradient.iter().zip(&dx).map(|(&g, &d)| g * d).sum();
            let dec2 = -slope;
            if !(dec2 > T::zero()) || dec2 * T::lit(0.5) <= cfg.newton_tol {
                break;
            }
            if iterations >= cfg.max_iterations {
                return Ok(finish(prob, x, t, degree, iterations, stage_values, SolveStatus::MaxIterations));
            }
            iterations += 1;

            let quadratic = dec2.sqrt() < T::lit(QUADRATIC_REGION);
            let mut step = T::one();
            let mut accepted = None;
            for _ in 0..max_ls {
                let trial = axpy(&x, step, &dx);
                match barrier_value(prob, &trial, t) {
                    Ok(v) if quadratic || v <= eval.value + cfg.ls_alpha * step * slope => {
                        accepted = Some(trial);
                        break;
                    }
                    _ => step *= cfg.ls_beta,
                }
            }
            match accepted {
                Some(next) => {
                    x = next;
                    if quadratic {
                        quadratic_steps += 1;
                        // Rounding floor: the decrement cannot shrink further.
                        if quadratic_steps > 50 {
                            break;
                        }
                    }
                }
                None => break,
            }
        }
        stage_values.push(prob.objective_value(&x)?);

        if degree / t <= cfg.gap_tol {
            return Ok(finish(prob, x, t, degree, iterations, stage_values, SolveStatus::Converged));
        }
        t *= cfg.mu;
    }
}

fn finish<T: Real>(
    prob: &MaxdetProblem<T>,
    x: Vec<T>,
    t: T,
    degree: T,
    iterations: usize,
    stage_values: Vec<T>,
    status: SolveStatus,
) -> MaxdetSolution<T> {
    let value = prob
        .objective_value(&x)
        .expect("iterates stay strictly interior");
    MaxdetSolution {
        x,
        value,
        gap_estimate: degree / t,
        iterations,
        status,
        stage_values,
    }
}
