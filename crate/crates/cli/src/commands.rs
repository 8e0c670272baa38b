//! The four subcommands, each producing a [`Table`].

use std::collections::BTreeMap;
use std::time::Instant;

use fbcap::linalg::{inverse_spd, min_eigenvalue, SymMatrix};
use fbcap::maxdet::{barrier_value_grad_hess, BarrierEval, MaxdetError, MaxdetProblem};
use fbcap::nblock::{
    feasibility_lmi, feedback_bound, noisy_feedback_program, nonfeedback_nblock, perfect_feedback_nblock,
    NBlockError, NBlockProblem, NBlockSolution, VariableLayout,
};
use fbcap::noise::NoiseModel;
use fbcap::oracle::{finite_diff_check_with, random_search, sample_point, schur_identity_check, FeasiblePoint};
use fbcap::spectral::{nonfeedback_shannon, noisy_spectral_bound, SpectralError, SpectralProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::table::{Cell, Table};

pub const SWEEP_COLUMNS: [&str; 9] = [
    "sigma",
    "n",
    "P",
    "alpha",
    "upper_bound_bits",
    "nonfeedback_bits",
    "perfect_feedback_bits",
    "power_used",
    "solve_seconds",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("{0} check(s) failed")]
    CheckFailed(usize),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Config(_) | CliError::Output(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

fn solver_error(context: &str, e: NBlockError) -> CliError {
    match e {
        NBlockError::InvalidProblem(m) => CliError::Config(ConfigError::Invalid {
            key: context.to_string(),
            message: m,
        }),
        other => CliError::Solver(format!("{context}: {other}")),
    }
}

fn spectral_error(e: SpectralError) -> CliError {
    let SpectralError::InvalidProblem(message) = e;
    CliError::Config(ConfigError::Invalid {
        key: "spectral".into(),
        message,
    })
}

fn models(cfg: &RunConfig) -> Result<(NoiseModel<f64>, NoiseModel<f64>), CliError> {
    Ok((cfg.channel.build("channel")?, cfg.feedback.build("feedback")?))
}

fn nblock_problem(cfg: &RunConfig) -> Result<NBlockProblem<f64>, CliError> {
    let (w, v) = models(cfg)?;
    let n = cfg.block_length;
    let cov = |m: &NoiseModel<f64>, key: &str| {
        m.covariance(n).map_err(|e| {
            CliError::Config(ConfigError::Invalid {
                key: key.into(),
                message: e.to_string(),
            })
        })
    };
    NBlockProblem::new(cov(&w, "channel")?, cov(&v, "feedback")?, cfg.power)
        .map_err(|e| solver_error("channel", e))
}

pub fn nblock(cfg: &RunConfig) -> Result<Table, CliError> {
    let prob = nblock_problem(cfg)?;
    let nf = nonfeedback_nblock(prob.kw(), cfg.power).map_err(|e| solver_error("nonfeedback", e))?;
    let (pf, bound) = rayon::join(
        || perfect_feedback_nblock(prob.kw(), cfg.power, &cfg.solver),
        || feedback_bound(&prob, &cfg.solver),
    );
    let pf = pf.map_err(|e| solver_error("perfect feedback", e))?;
    let bound = bound.map_err(|e| solver_error("feedback bound", e))?;
    warn_sandwich(nf, bound.value_bits, pf.value_bits);

    let mut t = Table::new(vec![
        "n",
        "channel",
        "feedback",
        "sigma",
        "P",
        "bound_bits",
        "nonfeedback_bits",
        "perfect_fb_bits",
        "power_used",
        "iterations",
        "gap_bits",
    ]);
    t.push(vec![
        Cell::Int(cfg.block_length as i64),
        Cell::Text(cfg.channel.label()),
        Cell::Text(cfg.feedback.label()),
        Cell::opt(cfg.sigma()),
        Cell::Num(cfg.power),
        Cell::Num(bound.value_bits),
        Cell::Num(nf),
        Cell::Num(pf.value_bits),
        Cell::Num(bound.power_used),
        Cell::Int(bound.diagnostics.iterations as i64),
        Cell::Num(bound.diagnostics.gap_bits),
    ]);
    Ok(t)
}

fn warn_sandwich(nf: f64, v: f64, pf: f64) {
    if v < nf - 1e-6 || v > pf + 1e-6 {
        eprintln!("warning: bound {v} outside [{nf}, {pf}]");
    }
}

pub fn spectral(cfg: &RunConfig) -> Result<Table, CliError> {
    let (w, v) = models(cfg)?;
    let psd = |m: &NoiseModel<f64>, key: &str| {
        m.psd().map_err(|e| {
            CliError::Config(ConfigError::Invalid {
                key: key.into(),
                message: e.to_string(),
            })
        })
    };
    let (s_w, s_v) = (psd(&w, "channel")?, psd(&v, "feedback")?);
    let nf = nonfeedback_shannon(&s_w, cfg.power, cfg.grid).map_err(spectral_error)?;
    let prob = SpectralProblem::new(s_w, s_v, cfg.power, cfg.taps, cfg.grid).map_err(spectral_error)?;
    let sol = noisy_spectral_bound(&prob);

    let mut t = Table::new(vec![
        "taps",
        "grid",
        "bound_bits",
        "lambda",
        "filter_power_fraction",
        "nonfeedback_shannon_bits",
    ]);
    t.push(vec![
        Cell::Int(cfg.taps as i64),
        Cell::Int(cfg.grid as i64),
        Cell::Num(sol.value_bits),
        Cell::Num(sol.lambda),
        Cell::Num(sol.filter_power / cfg.power),
        Cell::Num(nf),
    ]);
    Ok(t)
}

struct SweepRow {
    cfg: RunConfig,
    nonfeedback: Result<f64, String>,
    bound: Option<Result<(NBlockSolution<f64>, f64), String>>,
}

/// Solves every sweep point, concurrently, and returns rows in input order
/// with the number of points whose bound failed.
pub fn sweep(cfg: &RunConfig) -> Result<(Table, usize), CliError> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| ConfigError::Missing("sweep.param".into()))?;
    if spec.values.is_empty() {
        return Err(ConfigError::Invalid {
            key: "sweep.values".into(),
            message: "list is empty".into(),
        }
        .into());
    }
    let configs: Vec<RunConfig> = spec
        .values
        .iter()
        .map(|&v| cfg.with_param(spec.param, v))
        .collect::<Result<_, _>>()?;
    let problems: Vec<NBlockProblem<f64>> = configs.iter().map(nblock_problem).collect::<Result<_, _>>()?;

    // The perfect-feedback value depends only on the channel, n and P.
    let key = |c: &RunConfig| format!("{}|{}|{:e}", c.channel.label(), c.block_length, c.power);
    let mut unique: BTreeMap<String, usize> = BTreeMap::new();
    for (i, c) in configs.iter().enumerate() {
        unique.entry(key(c)).or_insert(i);
    }
    type Timed = Result<(NBlockSolution<f64>, f64), String>;
    let perfect: BTreeMap<String, Timed> = unique
        .into_par_iter()
        .map(|(k, i)| {
            let start = Instant::now();
            let r = perfect_feedback_nblock(problems[i].kw(), configs[i].power, &cfg.solver)
                .map(|s| (s, start.elapsed().as_secs_f64()))
                .map_err(|e| e.to_string());
            if let Err(e) = &r {
                eprintln!("perfect feedback ({k}): {e}");
            }
            (k, r)
        })
        .collect();

    let rows: Vec<SweepRow> = configs
        .into_par_iter()
        .zip(problems.par_iter())
        .map(|(c, prob)| {
            let nonfeedback = nonfeedback_nblock(prob.kw(), c.power).map_err(|e| e.to_string());
            let bound = if prob.is_perfect_feedback() {
                // Identical program; reuse the cached solve.
                perfect[&key(&c)].clone().ok().map(Ok)
            } else {
                let start = Instant::now();
                let r = feedback_bound(prob, &c.solver).map_err(|e| e.to_string());
                Some(r.map(|s| (s, start.elapsed().as_secs_f64())))
            };
            SweepRow {
                cfg: c,
                nonfeedback,
                bound,
            }
        })
        .collect();

    let mut table = Table::new(SWEEP_COLUMNS.to_vec());
    let mut failures = 0;
    for (i, row) in rows.into_iter().enumerate() {
        let c = &row.cfg;
        let pf = perfect[&key(c)].as_ref().ok().map(|(s, _)| s.value_bits);
        let nf = row.nonfeedback.as_ref().ok().copied();
        let bound = match row.bound {
            Some(Ok(b)) => Some(b),
            Some(Err(e)) => {
                eprintln!("sweep point {} ({} = {}): {e}", i, spec.param.key(), spec.values[i]);
                None
            }
            None => None,
        };
        if bound.is_none() {
            failures += 1;
        }
        if let (Some(nf), Some((b, _)), Some(pf)) = (nf, &bound, pf) {
            warn_sandwich(nf, b.value_bits, pf);
        }
        let seconds = if cfg.timings {
            bound.as_ref().map(|(_, s)| *s)
        } else {
            None
        };
        table.push(vec![
            Cell::opt(c.sigma()),
            Cell::Int(c.block_length as i64),
            Cell::Num(c.power),
            Cell::opt(c.alpha()),
            Cell::opt(bound.as_ref().map(|(b, _)| b.value_bits)),
            Cell::opt(nf),
            Cell::opt(pf),
            Cell::opt(bound.as_ref().map(|(b, _)| b.power_used)),
            Cell::opt(seconds),
        ]);
    }
    Ok((table, failures))
}

/// One line of the self-check report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
}

type Analytic = dyn Fn(&MaxdetProblem<f64>, &[f64], f64) -> Result<BarrierEval<f64>, MaxdetError> + Sync;

fn honest(prob: &MaxdetProblem<f64>, x: &[f64], t: f64) -> Result<BarrierEval<f64>, MaxdetError> {
    barrier_value_grad_hess(prob, x, t)
}

/// Flips the sign of the first gradient entry.
fn sign_flipped(prob: &MaxdetProblem<f64>, x: &[f64], t: f64) -> Result<BarrierEval<f64>, MaxdetError> {
    let mut e = barrier_value_grad_hess(prob, x, t)?;
    e.gradient[0] = -e.gradient[0];
    Ok(e)
}

fn ma1(alpha: f64) -> NoiseModel<f64> {
    NoiseModel::ma1(alpha).expect("valid coefficient")
}

fn instance(model: &NoiseModel<f64>, n: usize, fb_var: f64, p: f64) -> NBlockProblem<f64> {
    NBlockProblem::new(
        model.covariance(n).expect("valid block"),
        SymMatrix::scaled_identity(n, fb_var),
        p,
    )
    .expect("valid instance")
}

fn identity_checks(seed: u64) -> Vec<CheckOutcome> {
    let p = instance(&ma1(0.3), 4, 0.25, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut det, mut obj, mut failed) = (0.0f64, 0.0f64, false);
    for _ in 0..100 {
        let point = sample_point(&p, &mut rng);
        match schur_identity_check(p.kw(), p.kv(), &point) {
            Ok(r) => {
                det = det.max(r.determinant_error);
                obj = obj.max(r.objective_error.unwrap_or(f64::INFINITY));
            }
            Err(e) => {
                eprintln!("identity check: {e}");
                failed = true;
            }
        }
    }
    // A message covariance with eigenvalue −0.1 must make the LMI indefinite.
    let point = sample_point(&p, &mut rng);
    let shift = -0.1 - min_eigenvalue(&point.k_s);
    let bad = FeasiblePoint {
        k_s: point.k_s.shift_diagonal(shift),
        b: point.b,
    };
    let lmi_min = schur_identity_check(p.kw(), p.kv(), &bad)
        .map(|r| r.lmi_min_eigenvalue)
        .unwrap_or(f64::NAN);
    vec![
        CheckOutcome {
            name: "identity-determinant".into(),
            passed: !failed && det <= 1e-9,
            measured: det,
            tolerance: 1e-9,
        },
        CheckOutcome {
            name: "identity-objective".into(),
            passed: !failed && obj <= 1e-9,
            measured: obj,
            tolerance: 1e-9,
        },
        CheckOutcome {
            name: "lmi-rejects-indefinite".into(),
            passed: lmi_min < 0.0,
            measured: lmi_min,
            tolerance: 0.0,
        },
    ]
}

fn derivative_checks(seed: u64, analytic: &Analytic) -> Vec<CheckOutcome> {
    let p = instance(&ma1(0.3), 3, 0.25, 2.0);
    let (prog, x0) = noisy_feedback_program(&p).expect("valid program");
    let layout = VariableLayout::new(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let (mut g, mut h, mut points) = (0.0f64, 0.0f64, 0);
    let mut failed = false;
    while points < 20 {
        let x: Vec<f64> = x0
            .iter()
            .enumerate()
            .map(|(i, v)| v + rng.gen_range(-1.0..1.0) * if i >= layout.h_len() { 0.05 } else { 0.02 })
            .collect();
        if !prog.is_strictly_feasible(&x) {
            continue;
        }
        points += 1;
        match finite_diff_check_with(&prog, &x, 3.0, 1e-5, analytic) {
            Ok(r) => {
                g = g.max(r.gradient);
                h = h.max(r.hessian);
            }
            Err(e) => {
                eprintln!("derivative check: {e}");
                failed = true;
            }
        }
    }
    vec![
        CheckOutcome {
            name: "barrier-gradient".into(),
            passed: !failed && g <= 1e-5,
            measured: g,
            tolerance: 1e-5,
        },
        CheckOutcome {
            name: "barrier-hessian".into(),
            passed: !failed && h <= 1e-4,
            measured: h,
            tolerance: 1e-4,
        },
    ]
}

fn oracle_checks(cfg: &RunConfig) -> Vec<CheckOutcome> {
    let configs: Vec<(&str, NoiseModel<f64>, f64, f64)> = vec![
        ("white", NoiseModel::white(1.0).unwrap(), 1.0, 1.0),
        ("ma1", ma1(0.5), 0.25, 2.0),
        ("ar1", NoiseModel::ar1(0.5, 1.0).unwrap(), 0.04, 5.0),
    ];
    let mut cases = Vec::new();
    for n in [2usize, 3] {
        for (name, model, fb, p) in &configs {
            cases.push((format!("oracle-{name}-n{n}"), instance(model, n, *fb, *p)));
        }
    }
    cases
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, (name, prob))| {
            let oracle = random_search(prob, cfg.samples, cfg.seed.wrapping_add(i as u64));
            let sol = feedback_bound(prob, &cfg.solver);
            let (gap, cert) = match (&oracle, &sol) {
                (Ok(o), Ok(s)) => (o.value_bits - s.value_bits, certificate(prob, s)),
                (o, s) => {
                    if let Err(e) = o {
                        eprintln!("{name}: {e}");
                    }
                    if let Err(e) = s {
                        eprintln!("{name}: {e}");
                    }
                    (f64::INFINITY, f64::INFINITY)
                }
            };
            vec![
                CheckOutcome {
                    name: name.clone(),
                    passed: gap <= 1e-6,
                    measured: gap,
                    tolerance: 1e-6,
                },
                CheckOutcome {
                    name: format!("{name}-certificate"),
                    passed: cert <= 1e-8,
                    measured: cert,
                    tolerance: 1e-8,
                },
            ]
        })
        .collect()
}

/// Largest violation among the LMI and power constraints at a solution,
/// with the power slack measured relative to `nP`.
pub fn certificate(prob: &NBlockProblem<f64>, sol: &NBlockSolution<f64>) -> f64 {
    let kw_inv = inverse_spd(prob.kw()).expect("K_w is positive definite");
    let lmi_min = match inverse_spd(prob.kv()) {
        Ok(kv_inv) => min_eigenvalue(&feasibility_lmi(&kw_inv, &kv_inv, &sol.h, &sol.b)),
        Err(_) => min_eigenvalue(&sol.k_s),
    };
    let power_excess = (sol.power_used - prob.power()) / prob.power();
    (-lmi_min).max(power_excess).max(0.0)
}

/// Runs the self-check suite. `fault` substitutes a sign-flipped gradient.
pub fn check(cfg: &RunConfig, fault: bool) -> (Table, bool) {
    let analytic: &Analytic = if fault { &sign_flipped } else { &honest };
    let mut outcomes = identity_checks(cfg.seed);
    outcomes.extend(derivative_checks(cfg.seed, analytic));
    outcomes.extend(oracle_checks(cfg));

    let mut t = Table::new(vec!["check", "status", "measured", "tolerance"]);
    let mut all = true;
    for o in outcomes {
        all &= o.passed;
        t.push(vec![
            Cell::Text(o.name),
            Cell::Text(if o.passed { "pass" } else { "FAIL" }.into()),
            Cell::Num(o.measured),
            Cell::Num(o.tolerance),
        ]);
    }
    (t, all)
}
