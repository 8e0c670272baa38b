//! Finite-horizon (n-block) capacity quantities for a Gaussian channel
//! `Y = X + W` whose output is fed back through `Z = Y + V`.
//!
//! * [`nonfeedback_nblock`]: closed-form water-filling over the eigenvalues
//!   of `K_w`.
//! * [`noisy_feedback_bound`]: the upper bound for noisy feedback, solved
//!   as a maxdet program in the variables `(H, B)` where
//!   `H = (I+B)K_w(I+B)ᵀ + K_s + B K_v Bᵀ`.
//! * [`perfect_feedback_nblock`]: the same program with the feedback-noise
//!   blocks removed (`K_v = 0`).
//!
//! All objectives are carried in nats and converted to bits per
//! transmission only when a solution is reported.

use std::f64::consts::LN_2;

use thiserror::Error;

use crate::linalg::{cholesky, inverse_spd, min_eigenvalue, sym_eigenvalues, LinalgError, Matrix, SymMatrix};
use crate::maxdet::{self, AffineSymMap, MaxdetError, MaxdetProblem, SolveStatus, SolverConfig, SymCoeff};
use crate::scalar::Real;

/// Largest block length accepted by [`NBlockProblem::new`].
pub const MAX_BLOCK_LENGTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NBlockError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("feedback noise covariance is singular; use the perfect-feedback program")]
    SingularFeedbackNoise,
    #[error("solver failed: {0}")]
    Solver(#[from] MaxdetError),
    #[error("solver hit the iteration cap ({iterations} Newton steps)")]
    MaxIterations { iterations: usize },
}

impl From<LinalgError> for NBlockError {
    fn from(e: LinalgError) -> Self {
        NBlockError::InvalidProblem(e.to_string())
    }
}

/// Noisy-feedback n-block instance.
#[derive(Debug, Clone)]
pub struct NBlockProblem<T> {
    kw: SymMatrix<T>,
    kv: SymMatrix<T>,
    power: T,
}

impl<T: Real> NBlockProblem<T> {
    pub fn new(kw: SymMatrix<T>, kv: SymMatrix<T>, power: T) -> Result<Self, NBlockError> {
        let n = kw.n();
        validate_channel(&kw, power)?;
        if kv.n() != n {
            return Err(NBlockError::InvalidProblem(format!(
                "K_v is {}x{}, K_w is {n}x{n}",
                kv.n(),
                kv.n()
            )));
        }
        let min = min_eigenvalue(&kv);
        if min < -T::lit(1e-10) * kv.max_abs_diag().max(T::one()) {
            return Err(NBlockError::InvalidProblem(format!(
                "K_v is not positive semidefinite (min eigenvalue {min})"
            )));
        }
        Ok(Self { kw, kv, power })
    }

    pub fn n(&self) -> usize {
        self.kw.n()
    }

    pub fn kw(&self) -> &SymMatrix<T> {
        &self.kw
    }

    pub fn kv(&self) -> &SymMatrix<T> {
        &self.kv
    }

    pub fn power(&self) -> T {
        self.power
    }

    /// True when the feedback link is noiseless (`K_v` is exactly zero).
    pub fn is_perfect_feedback(&self) -> bool {
        self.kv.as_matrix().as_slice().iter().all(|&v| v == T::zero())
    }
}

fn validate_channel<T: Real>(kw: &SymMatrix<T>, power: T) -> Result<(), NBlockError> {
    let n = kw.n();
    if n == 0 || n > MAX_BLOCK_LENGTH {
        return Err(NBlockError::InvalidProblem(format!(
            "block length must be in 1..={MAX_BLOCK_LENGTH}, got {n}"
        )));
    }
    if !(power > T::zero()) || !power.is_finite() {
        return Err(NBlockError::InvalidProblem(format!(
            "power must be finite and > 0, got {power}"
        )));
    }
    if cholesky(kw).is_err() {
        return Err(NBlockError::InvalidProblem(
            "K_w must be positive definite".into(),
        ));
    }
    Ok(())
}

/// Solver bookkeeping carried alongside a bound.
#[derive(Debug, Clone)]
pub struct Diagnostics<T> {
    pub iterations: usize,
    /// Barrier duality-gap bound converted to bits per transmission.
    pub gap_bits: T,
    pub status: SolveStatus,
    /// Objective (bits per transmission) after each barrier stage.
    pub stage_values_bits: Vec<T>,
    /// Whether the optimum uses at least 99.9% of the power budget.
    pub power_active: bool,
}

#[derive(Debug, Clone)]
pub struct NBlockSolution<T> {
    pub value_bits: T,
    /// Strictly lower-triangular feedback filter.
    pub b: Matrix<T>,
    /// Message covariance.
    pub k_s: SymMatrix<T>,
    pub h: SymMatrix<T>,
    /// `tr(K_s + B(K_v + K_w)Bᵀ)/n`.
    pub power_used: T,
    pub diagnostics: Diagnostics<T>,
}

/// Coordinates of the decision vector: `vech(H)` row by row over the lower
/// triangle, followed by the strictly-lower entries of `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    n: usize,
}

impl VariableLayout {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h_len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn b_len(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    pub fn len(&self) -> usize {
        self.h_len() + self.b_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of `H[i][j]`, `i >= j`.
    pub fn h_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i >= j && i < self.n);
        i * (i + 1) / 2 + j
    }

    /// Index of `B[i][j]`, `i > j`.
    pub fn b_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i > j && i < self.n);
        self.h_len() + i * (i - 1) / 2 + j
    }

    pub fn pack<T: Real>(&self, h: &SymMatrix<T>, b: &Matrix<T>) -> Vec<T> {
        let mut x = vec![T::zero(); self.len()];
        for i in 0..self.n {
            for j in 0..=i {
                x[self.h_index(i, j)] = h.get(i, j);
            }
            for j in 0..i {
                x[self.b_index(i, j)] = b[(i, j)];
            }
        }
        x
    }

    pub fn unpack<T: Real>(&self, x: &[T]) -> (SymMatrix<T>, Matrix<T>) {
        let h = SymMatrix::from_lower_fn(self.n, |i, j| x[self.h_index(i, j)]);
        let b = Matrix::from_fn(self.n, self.n, |i, j| {
            if i > j {
                x[self.b_index(i, j)]
            } else {
                T::zero()
            }
        });
        (h, b)
    }
}

/// `I + B`.
fn identity_plus<T: Real>(b: &Matrix<T>) -> Matrix<T> {
    b.add(&Matrix::identity(b.rows()))
}

/// `H = (I+B)K_w(I+B)ᵀ + K_s + B K_v Bᵀ`.
pub fn h_from_message<T: Real>(
    kw: &SymMatrix<T>,
    kv: &SymMatrix<T>,
    k_s: &SymMatrix<T>,
    b: &Matrix<T>,
) -> SymMatrix<T> {
    kw.congruence(&identity_plus(b))
        .add(k_s)
        .add(&kv.congruence(b))
}

/// `K_s = H − (I+B)K_w(I+B)ᵀ − B K_v Bᵀ`.
pub fn message_from_h<T: Real>(
    kw: &SymMatrix<T>,
    kv: &SymMatrix<T>,
    h: &SymMatrix<T>,
    b: &Matrix<T>,
) -> SymMatrix<T> {
    h.sub(&kw.congruence(&identity_plus(b)))
        .sub(&kv.congruence(b))
}

/// Input power per transmission `tr(K_s + B(K_v + K_w)Bᵀ)/n`.
pub fn input_power<T: Real>(
    kw: &SymMatrix<T>,
    kv: &SymMatrix<T>,
    k_s: &SymMatrix<T>,
    b: &Matrix<T>,
) -> T {
    let n = T::from_usize(kw.n()).unwrap();
    (k_s.trace() + kw.add(kv).congruence(b).trace()) / n
}

fn nats_to_bits_per_use<T: Real>(nats: T, n: usize) -> T {
    nats / (T::lit(2.0 * LN_2) * T::from_usize(n).unwrap())
}

/// Direct objective `(1/2n) log₂ det((I+B)K_w(I+B)ᵀ + K_s) / det K_w`.
pub fn message_objective_bits<T: Real>(
    kw: &SymMatrix<T>,
    k_s: &SymMatrix<T>,
    b: &Matrix<T>,
) -> Result<T, LinalgError> {
    let out = kw.congruence(&identity_plus(b)).add(k_s);
    let nats = cholesky(&out)?.log_det() - cholesky(kw)?.log_det();
    Ok(nats_to_bits_per_use(nats, kw.n()))
}

/// The block matrix `[[K_v⁻¹, Bᵀ], [B, H]]` whose log-determinant is the
/// convexified objective.
pub fn objective_block<T: Real>(kv_inv: &SymMatrix<T>, h: &SymMatrix<T>, b: &Matrix<T>) -> SymMatrix<T> {
    let n = h.n();
    SymMatrix::from_lower_fn(2 * n, |i, j| match (i < n, j < n) {
        (true, true) => kv_inv.get(i, j),
        (false, true) => b[(i - n, j)],
        (false, false) => h.get(i - n, j - n),
        (true, false) => unreachable!(),
    })
}

/// Convexified objective
/// `(1/2n)[log₂ det [[K_v⁻¹, Bᵀ],[B, H]] − log₂ det(K_v⁻¹K_w)]`.
pub fn convex_objective_bits<T: Real>(
    kw: &SymMatrix<T>,
    kv: &SymMatrix<T>,
    h: &SymMatrix<T>,
    b: &Matrix<T>,
) -> Result<T, LinalgError> {
    let kv_chol = cholesky(kv)?;
    let g = objective_block(&kv_chol.inverse(), h, b);
    let nats = cholesky(&g)?.log_det() + kv_chol.log_det() - cholesky(kw)?.log_det();
    Ok(nats_to_bits_per_use(nats, kw.n()))
}

/// The `3n×3n` matrix
///
/// ```text
/// [ H      I+B    B    ]
/// [ (I+B)ᵀ K_w⁻¹  0    ]
/// [ Bᵀ     0      K_v⁻¹]
/// ```
///
/// which is PSD exactly when `K_s = H − (I+B)K_w(I+B)ᵀ − B K_v Bᵀ` is PSD
/// (its Schur complement with respect to the lower-right block).
pub fn feasibility_lmi<T: Real>(
    kw_inv: &SymMatrix<T>,
    kv_inv: &SymMatrix<T>,
    h: &SymMatrix<T>,
    b: &Matrix<T>,
) -> SymMatrix<T> {
    let n = h.n();
    let ipb = identity_plus(b);
    SymMatrix::from_lower_fn(3 * n, |i, j| {
        let (bi, ri) = (i / n, i % n);
        let (bj, rj) = (j / n, j % n);
        match (bi, bj) {
            (0, 0) => h.get(ri, rj),
            (1, 0) => ipb[(rj, ri)],
            (1, 1) => kw_inv.get(ri, rj),
            (2, 0) => b[(rj, ri)],
            (2, 1) => T::zero(),
            (2, 2) => kv_inv.get(ri, rj),
            _ => unreachable!(),
        }
    })
}

/// Appends the constant blocks and `(H, B)` coefficients of the feasibility
/// LMI. With `kv_inv = None` the third block row/column is omitted.
fn build_lmi<T: Real>(
    layout: &VariableLayout,
    kw_inv: &SymMatrix<T>,
    kv_inv: Option<&SymMatrix<T>>,
) -> Result<AffineSymMap<T>, MaxdetError> {
    let n = layout.n();
    let blocks = if kv_inv.is_some() { 3 } else { 2 };
    let mut constant = SymMatrix::zeros(blocks * n);
    for i in 0..n {
        constant.set(n + i, i, T::one());
        for j in 0..=i {
            constant.set(n + i, n + j, kw_inv.get(i, j));
            if let Some(kv_inv) = kv_inv {
                constant.set(2 * n + i, 2 * n + j, kv_inv.get(i, j));
            }
        }
    }
    let mut coeffs = vec![SymCoeff::new(); layout.len()];
    for i in 0..n {
        for j in 0..=i {
            coeffs[layout.h_index(i, j)].push(i, j, T::one());
        }
        for j in 0..i {
            // (I+B) sits in block (0,1): row i, column n+j.
            let c = &mut coeffs[layout.b_index(i, j)];
            c.push(n + j, i, T::one());
            if kv_inv.is_some() {
                // B sits in block (0,2): row i, column 2n+j.
                c.push(2 * n + j, i, T::one());
            }
        }
    }
    AffineSymMap::new(constant, coeffs)
}

/// `tr(H − K_w Bᵀ − B K_w − K_w) ≤ nP` as `aᵀx ≤ c`.
fn power_constraint<T: Real>(layout: &VariableLayout, kw: &SymMatrix<T>, power: T) -> (Vec<T>, T) {
    let n = layout.n();
    let mut a = vec![T::zero(); layout.len()];
    for i in 0..n {
        a[layout.h_index(i, i)] = T::one();
        for j in 0..i {
            a[layout.b_index(i, j)] = -T::lit(2.0) * kw.get(i, j);
        }
    }
    let c = T::from_usize(n).unwrap() * power + kw.trace();
    (a, c)
}

/// Strictly feasible start: `B = 0`, `H = K_w + (P/2)·I`.
fn initial_point<T: Real>(layout: &VariableLayout, kw: &SymMatrix<T>, power: T) -> Vec<T> {
    let h = kw.shift_diagonal(power * T::lit(0.5));
    layout.pack(&h, &Matrix::zeros(layout.n(), layout.n()))
}

/// Maxdet program for the noisy-feedback bound.
pub fn noisy_feedback_program<T: Real>(prob: &NBlockProblem<T>) -> Result<(MaxdetProblem<T>, Vec<T>), NBlockError> {
    let n = prob.n();
    let layout = VariableLayout::new(n);
    let kv_inv = inverse_spd(prob.kv()).map_err(|_| NBlockError::SingularFeedbackNoise)?;
    let kw_inv = inverse_spd(prob.kw())?;

    let mut g_const = SymMatrix::zeros(2 * n);
    for i in 0..n {
        for j in 0..=i {
            g_const.set(i, j, kv_inv.get(i, j));
        }
    }
    let mut g_coeffs = vec![SymCoeff::new(); layout.len()];
    for i in 0..n {
        for j in 0..=i {
            g_coeffs[layout.h_index(i, j)].push(n + i, n + j, T::one());
        }
        for j in 0..i {
            g_coeffs[layout.b_index(i, j)].push(n + i, j, T::one());
        }
    }
    let objective = AffineSymMap::new(g_const, g_coeffs)?;
    let lmi = build_lmi(&layout, &kw_inv, Some(&kv_inv))?;
    let (a, c) = power_constraint(&layout, prob.kw(), prob.power());
    let x0 = initial_point(&layout, prob.kw(), prob.power());
    Ok((MaxdetProblem::new(objective, lmi, a, c)?, x0))
}

/// Maxdet program for the perfect-feedback n-block capacity.
pub fn perfect_feedback_program<T: Real>(
    kw: &SymMatrix<T>,
    power: T,
) -> Result<(MaxdetProblem<T>, Vec<T>), NBlockError> {
    validate_channel(kw, power)?;
    let n = kw.n();
    let layout = VariableLayout::new(n);
    let kw_inv = inverse_spd(kw)?;
    let mut g_coeffs = vec![SymCoeff::new(); layout.len()];
    for i in 0..n {
        for j in 0..=i {
            g_coeffs[layout.h_index(i, j)].push(i, j, T::one());
        }
    }
    let objective = AffineSymMap::new(SymMatrix::zeros(n), g_coeffs)?;
    let lmi = build_lmi(&layout, &kw_inv, None)?;
    let (a, c) = power_constraint(&layout, kw, power);
    let x0 = initial_point(&layout, kw, power);
    Ok((MaxdetProblem::new(objective, lmi, a, c)?, x0))
}

/// Nonfeedback n-block capacity in bits per transmission: water-filling of
/// `nP` over the eigenvalues of `K_w`.
pub fn nonfeedback_nblock<T: Real>(kw: &SymMatrix<T>, power: T) -> Result<T, NBlockError> {
    validate_channel(kw, power)?;
    let eig = sym_eigenvalues(kw);
    let n = eig.len();
    let budget = T::from_usize(n).unwrap() * power;
    // Active set is a prefix of the ascending eigenvalues.
    let mut prefix = T::zero();
    let mut level = T::zero();
    for k in 0..n {
        prefix += eig[k];
        let candidate = (budget + prefix) / T::from_usize(k + 1).unwrap();
        level = candidate;
        if k + 1 == n || candidate <= eig[k + 1] {
            break;
        }
    }
    let nats: T = eig.iter().map(|&l| (level.max(l) / l).ln()).sum();
    Ok(nats_to_bits_per_use(nats, n))
}

fn solve_program<T: Real>(
    program: &MaxdetProblem<T>,
    x0: &[T],
    cfg: &SolverConfig<T>,
) -> Result<maxdet::MaxdetSolution<T>, NBlockError> {
    let sol = maxdet::solve(program, x0, cfg)?;
    if sol.status == SolveStatus::MaxIterations {
        return Err(NBlockError::MaxIterations {
            iterations: sol.iterations,
        });
    }
    Ok(sol)
}

fn assemble<T: Real>(
    kw: &SymMatrix<T>,
    kv: &SymMatrix<T>,
    power: T,
    sol: maxdet::MaxdetSolution<T>,
    offset_nats: T,
) -> NBlockSolution<T> {
    let n = kw.n();
    let layout = VariableLayout::new(n);
    let (h, b) = layout.unpack(&sol.x);
    let k_s = message_from_h(kw, kv, &h, &b);
    let power_used = input_power(kw, kv, &k_s, &b);
    let to_bits = |v: T| nats_to_bits_per_use(v + offset_nats, n);
    NBlockSolution {
        value_bits: to_bits(sol.value),
        b,
        k_s,
        h,
        power_used,
        diagnostics: Diagnostics {
            iterations: sol.iterations,
            gap_bits: nats_to_bits_per_use(sol.gap_estimate, n),
            status: sol.status,
            stage_values_bits: sol.stage_values.iter().map(|&v| to_bits(v)).collect(),
            power_active: power_used >= T::lit(0.999) * power,
        },
    }
}

/// Upper bound on the n-block capacity with noisy feedback (`K_v ≻ 0`).
pub fn noisy_feedback_bound<T: Real>(
    prob: &NBlockProblem<T>,
    cfg: &SolverConfig<T>,
) -> Result<NBlockSolution<T>, NBlockError> {
    let (program, x0) = noisy_feedback_program(prob)?;
    let sol = solve_program(&program, &x0, cfg)?;
    // ln det G − ln det(K_v⁻¹K_w) = ln det G + ln det K_v − ln det K_w
    let offset = cholesky(prob.kv())
        .map_err(|_| NBlockError::SingularFeedbackNoise)?
        .log_det()
        - cholesky(prob.kw())?.log_det();
    Ok(assemble(prob.kw(), prob.kv(), prob.power(), sol, offset))
}

/// Perfect-feedback n-block capacity.
pub fn perfect_feedback_nblock<T: Real>(
    kw: &SymMatrix<T>,
    power: T,
    cfg: &SolverConfig<T>,
) -> Result<NBlockSolution<T>, NBlockError> {
    let (program, x0) = perfect_feedback_program(kw, power)?;
    let sol = solve_program(&program, &x0, cfg)?;
    let offset = -cholesky(kw)?.log_det();
    let kv = SymMatrix::zeros(kw.n());
    Ok(assemble(kw, &kv, power, sol, offset))
}

/// Noisy bound, or the perfect-feedback program when `K_v` is exactly zero.
pub fn feedback_bound<T: Real>(
    prob: &NBlockProblem<T>,
    cfg: &SolverConfig<T>,
) -> Result<NBlockSolution<T>, NBlockError> {
    if prob.is_perfect_feedback() {
        perfect_feedback_nblock(prob.kw(), prob.power(), cfg)
    } else {
        noisy_feedback_bound(prob, cfg)
    }
}
