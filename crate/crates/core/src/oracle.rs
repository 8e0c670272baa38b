//! Brute-force and identity checks for the finite-horizon program.
//!
//! None of this is needed to compute a bound; it exists to catch solver and
//! formulation bugs independently of the interior-point machinery.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{cholesky, inverse_spd, min_eigenvalue, sym_eigenvalues, LinalgError, Matrix, SymMatrix};
use crate::maxdet::{barrier_value, barrier_value_grad_hess, BarrierEval, MaxdetError, MaxdetProblem};
use crate::nblock::{
    convex_objective_bits, feasibility_lmi, h_from_message, input_power, message_objective_bits,
    objective_block, NBlockProblem,
};
use crate::scalar::Real;

pub const MAX_SEARCH_BLOCK: usize = 4;
/// Samples drawn per independent RNG stream.
const CHUNK: usize = 4096;
/// Give up on a chunk after this many rejected draws per requested sample.
const MAX_REJECTS_PER_SAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Identity {
    Determinant,
    Objective,
    LmiEquivalence,
}

impl std::fmt::Display for Identity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Identity::Determinant => "determinant",
            Identity::Objective => "objective",
            Identity::LmiEquivalence => "lmi-equivalence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("random search supports block length up to {MAX_SEARCH_BLOCK}, got {0}")]
    TooLarge(usize),
    #[error("invalid oracle input: {0}")]
    Invalid(String),
    #[error("{which} identity violated by {magnitude:e}")]
    IdentityViolation { which: Identity, magnitude: f64 },
    #[error("point is not strictly interior")]
    BoundaryPoint,
}

impl From<MaxdetError> for OracleError {
    fn from(e: MaxdetError) -> Self {
        match e {
            MaxdetError::BoundaryPoint => OracleError::BoundaryPoint,
            other => OracleError::Invalid(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasiblePoint<T> {
    pub k_s: SymMatrix<T>,
    /// Strictly lower triangular.
    pub b: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult<T> {
    pub point: FeasiblePoint<T>,
    pub value_bits: T,
    pub samples: usize,
    pub rejected: usize,
}

fn draw<T: Real>(prob: &NBlockProblem<T>, rng: &mut ChaCha8Rng) -> Option<FeasiblePoint<T>> {
    let n = prob.n();
    let b = Matrix::from_fn(n, n, |i, j| {
        if i > j {
            T::lit(rng.gen_range(-2.0..=2.0))
        } else {
            T::zero()
        }
    });
    let l = Matrix::from_fn(n, n, |i, j| {
        if i >= j {
            T::lit(rng.gen_range(-1.0..=1.0))
        } else {
            T::zero()
        }
    });
    let zero = SymMatrix::zeros(n);
    let nf = T::from_usize(n).unwrap();
    let filter_power = input_power(prob.kw(), prob.kv(), &zero, &b) * nf;
    let room = nf * prob.power() - filter_power;
    let gram = SymMatrix::identity(n).congruence(&l);
    let tr = gram.trace();
    if !(room > T::zero()) || !(tr > T::zero()) {
        return None;
    }
    Some(FeasiblePoint {
        k_s: gram.scale(room / tr),
        b,
    })
}

/// Best point of one sampling chunk with its drawn and rejected counts.
type ChunkBest<T> = (Option<(FeasiblePoint<T>, T)>, usize, usize);

/// Best objective over `samples` random points on the power boundary.
///
/// Sampling is split into fixed-size chunks, each with its own RNG stream
/// derived from `seed`, so the result does not depend on thread scheduling.
pub fn random_search<T: Real>(
    prob: &NBlockProblem<T>,
    samples: usize,
    seed: u64,
) -> Result<SearchResult<T>, OracleError> {
    if prob.n() > MAX_SEARCH_BLOCK {
        return Err(OracleError::TooLarge(prob.n()));
    }
    if samples == 0 {
        return Err(OracleError::Invalid("samples must be at least 1".into()));
    }
    let chunks = samples.div_ceil(CHUNK);
    let results: Vec<ChunkBest<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let want = CHUNK.min(samples - c * CHUNK);
            let mut best: Option<(FeasiblePoint<T>, T)> = None;
            let (mut taken, mut rejected) = (0, 0);
            while taken < want && rejected < want * MAX_REJECTS_PER_SAMPLE {
                let Some(p) = draw(prob, &mut rng) else {
                    rejected += 1;
                    continue;
                };
                taken += 1;
                let Ok(v) = message_objective_bits(prob.kw(), &p.k_s, &p.b) else {
                    continue;
                };
                if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                    best = Some((p, v));
                }
            }
            (best, taken, rejected)
        })
        .collect();

    let (mut total, mut rejected) = (0, 0);
    let mut best: Option<(FeasiblePoint<T>, T)> = None;
    for (chunk_best, t, r) in results {
        total += t;
        rejected += r;
        if let Some((p, v)) = chunk_best {
            if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
                best = Some((p, v));
            }
        }
    }
    let (point, value_bits) =
        best.ok_or_else(|| OracleError::Invalid("no feasible sample drawn".into()))?;
    Ok(SearchResult {
        point,
        value_bits,
        samples: total,
        rejected,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport<T> {
    /// `|ln|det lhs| − ln|det rhs||`, which bounds the relative determinant error.
    pub determinant_error: T,
    /// `None` when `K_s` is not PSD and the objectives are undefined.
    pub objective_error: Option<T>,
    pub k_s_min_eigenvalue: T,
    pub lmi_min_eigenvalue: T,
}

/// `(sign, ln|det|)` via the spectrum, valid for indefinite matrices.
fn signed_log_det<T: Real>(a: &SymMatrix<T>) -> (T, T) {
    sym_eigenvalues(a)
        .into_iter()
        .fold((T::one(), T::zero()), |(s, l), e| (s * e.signum(), l + e.abs().ln()))
}

/// Checks the block-determinant factorization, the agreement of the direct
/// and block objectives, and that the `3n×3n` LMI is PSD exactly when `K_s`
/// is, at an arbitrary (possibly infeasible) point.
pub fn schur_identity_check<T: Real>(
    kw: &SymMatrix<T>,
    kv: &SymMatrix<T>,
    point: &FeasiblePoint<T>,
) -> Result<IdentityReport<T>, OracleError> {
    let n = kw.n();
    if kv.n() != n || point.k_s.n() != n || point.b.rows() != n || point.b.cols() != n {
        return Err(OracleError::Invalid("dimension mismatch".into()));
    }
    let inv = |m: &SymMatrix<T>, what: &str| {
        inverse_spd(m).map_err(|e: LinalgError| OracleError::Invalid(format!("{what}: {e}")))
    };
    let kv_inv = inv(kv, "K_v must be positive definite")?;
    let kw_inv = inv(kw, "K_w must be positive definite")?;
    let (b, k_s) = (&point.b, &point.k_s);
    let h = h_from_message(kw, kv, k_s, b);

    let tol = 1e-9;
    let (s_lhs, l_lhs) = signed_log_det(&objective_block(&kv_inv, &h, b));
    let (s_schur, l_schur) = signed_log_det(&h.sub(&kv.congruence(b)));
    let (s_kv, l_kv) = signed_log_det(&kv_inv);
    let determinant_error = if s_lhs == s_schur * s_kv {
        (l_lhs - (l_schur + l_kv)).abs()
    } else {
        T::infinity()
    };
    if !(determinant_error.to_f64_lossy() <= tol) {
        return Err(OracleError::IdentityViolation {
            which: Identity::Determinant,
            magnitude: determinant_error.to_f64_lossy(),
        });
    }

    let k_s_min = min_eigenvalue(k_s);
    let lmi_min = min_eigenvalue(&feasibility_lmi(&kw_inv, &kv_inv, &h, b));
    let scale = |m: &SymMatrix<T>| T::one().max(m.max_abs_diag());
    let ks_ok = k_s_min >= -T::lit(tol) * scale(k_s);
    let lmi_ok = lmi_min >= -T::lit(tol) * scale(&h);
    if ks_ok != lmi_ok {
        return Err(OracleError::IdentityViolation {
            which: Identity::LmiEquivalence,
            magnitude: k_s_min.abs().max(lmi_min.abs()).to_f64_lossy(),
        });
    }

    let objective_error = match (
        message_objective_bits(kw, k_s, b),
        convex_objective_bits(kw, kv, &h, b),
    ) {
        (Ok(direct), Ok(convex)) => {
            let err = (direct - convex).abs() / T::one().max(direct.abs());
            if !(err.to_f64_lossy() <= tol) {
                return Err(OracleError::IdentityViolation {
                    which: Identity::Objective,
                    magnitude: err.to_f64_lossy(),
                });
            }
            Some(err)
        }
        _ => None,
    };

    Ok(IdentityReport {
        determinant_error,
        objective_error,
        k_s_min_eigenvalue: k_s_min,
        lmi_min_eigenvalue: lmi_min,
    })
}

/// Random feasible point of an instance, as used by [`random_search`].
pub fn sample_point<T: Real>(prob: &NBlockProblem<T>, rng: &mut ChaCha8Rng) -> FeasiblePoint<T> {
    loop {
        if let Some(p) = draw(prob, rng) {
            return p;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    /// `‖g_fd − g‖∞ / ‖g‖∞`.
    pub gradient: f64,
    /// `‖H_fd − H‖_max / ‖H‖_max`, with `H_fd` from differenced gradients.
    pub hessian: f64,
}

/// Central-difference check of the barrier gradient and Hessian at `x`.
pub fn finite_diff_check<T: Real>(
    prob: &MaxdetProblem<T>,
    x: &[T],
    t: T,
    h: T,
) -> Result<FdReport, OracleError> {
    finite_diff_check_with(prob, x, t, h, barrier_value_grad_hess)
}

/// As [`finite_diff_check`], with the analytic derivatives supplied by
/// `analytic` so a deliberately broken implementation can be substituted.
pub fn finite_diff_check_with<T: Real, F>(
    prob: &MaxdetProblem<T>,
    x: &[T],
    t: T,
    h: T,
    analytic: F,
) -> Result<FdReport, OracleError>
where
    F: Fn(&MaxdetProblem<T>, &[T], T) -> Result<BarrierEval<T>, MaxdetError>,
{
    if x.len() != prob.x_dim() {
        return Err(OracleError::Invalid("point has the wrong dimension".into()));
    }
    if !(h > T::zero()) {
        return Err(OracleError::Invalid("step must be positive".into()));
    }
    let base = analytic(prob, x, t)?;
    let dim = x.len();
    let shifted = |k: usize, d: T| {
        let mut y = x.to_vec();
        y[k] += d;
        y
    };
    let two_h = h + h;

    let mut g_err = 0.0f64;
    let mut h_err = 0.0f64;
    for k in 0..dim {
        let (up, dn) = (shifted(k, h), shifted(k, -h));
        let fd = (barrier_value(prob, &up, t)? - barrier_value(prob, &dn, t)?) / two_h;
        g_err = g_err.max((fd - base.gradient[k]).abs().to_f64_lossy());

        let (gu, gd) = (analytic(prob, &up, t)?, analytic(prob, &dn, t)?);
        for l in 0..dim {
            let fd = (gu.gradient[l] - gd.gradient[l]) / two_h;
            h_err = h_err.max((fd - base.hessian.get(k, l)).abs().to_f64_lossy());
        }
    }
    let g_norm = base
        .gradient
        .iter()
        .fold(0.0f64, |m, g| m.max(g.abs().to_f64_lossy()));
    let h_norm = base.hessian.as_matrix().max_abs().to_f64_lossy();
    Ok(FdReport {
        gradient: g_err / g_norm.max(f64::MIN_POSITIVE),
        hessian: h_err / h_norm.max(f64::MIN_POSITIVE),
    })
}

/// True when `K_s ⪰ 0` numerically and the power budget holds.
pub fn is_feasible<T: Real>(prob: &NBlockProblem<T>, point: &FeasiblePoint<T>, tol: T) -> bool {
    let n = T::from_usize(prob.n()).unwrap();
    let power = input_power(prob.kw(), prob.kv(), &point.k_s, &point.b);
    let strict = point.b.is_strictly_lower();
    let psd = cholesky(&point.k_s.shift_diagonal(tol)).is_ok();
    strict && psd && power * n <= (prob.power() + tol) * n
}
