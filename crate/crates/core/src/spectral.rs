//! Stationary (infinite-horizon) capacity quantities on a frequency grid.
//!
//! Spectra are even in `θ`, so every integral `(1/2π)∫_{-π}^{π}` is taken
//! over `[0, π]` with the trapezoid rule on `M + 1` nodes and normalized so
//! the constant function integrates to one.

use std::f64::consts::{LN_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::neldermead::{self, NelderMeadConfig};
use crate::noise::Psd;
use crate::scalar::Real;

pub const DEFAULT_TAPS: usize = 16;
pub const DEFAULT_GRID: usize = 2048;
pub const MIN_GRID: usize = 64;
pub const SEED: u64 = 0x5EED;
const POLISH_ITERATIONS: usize = 2000;
/// Relative gap kept between the filter power and the budget while polishing.
const BOUNDARY_SLACK: f64 = 1e-12;
/// Random starting taps are drawn uniformly from `[-RANDOM_SEED_RANGE, RANDOM_SEED_RANGE]`.
pub const RANDOM_SEED_RANGE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("invalid spectral problem: {0}")]
    InvalidProblem(String),
}

/// Normalized quadrature weights over the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature<T> {
    weights: Vec<T>,
}

impl<T: Real> Quadrature<T> {
    /// Trapezoid rule on `θ_m = π m / grid`, endpoints at half weight.
    pub fn trapezoid(grid: usize) -> Result<Self, SpectralError> {
        if grid == 0 {
            return Err(SpectralError::InvalidProblem("grid must be positive".into()));
        }
        let w = T::from_usize(grid).unwrap().recip();
        let half = w * T::lit(0.5);
        let weights = (0..=grid)
            .map(|m| if m == 0 || m == grid { half } else { w })
            .collect();
        Ok(Self { weights })
    }

    /// Arbitrary positive weights, rescaled to sum to one.
    pub fn from_weights(weights: Vec<T>) -> Result<Self, SpectralError> {
        if weights.is_empty() || weights.iter().any(|w| !(*w > T::zero())) {
            return Err(SpectralError::InvalidProblem(
                "quadrature weights must be positive".into(),
            ));
        }
        let total: T = weights.iter().copied().sum();
        Ok(Self {
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn integrate(&self, f: &[T]) -> T {
        assert_eq!(f.len(), self.weights.len(), "sample count mismatch");
        self.weights.iter().zip(f).map(|(&w, &v)| w * v).sum()
    }
}

/// Result of water-filling over a frequency floor.
#[derive(Debug, Clone, PartialEq)]
pub struct Waterfill<T> {
    pub lambda: T,
    pub s_s: Vec<T>,
    pub value_nats: T,
    pub power_used: T,
}

/// Pours `budget` over `floor` and scores the result against `reference`.
///
/// The level is found exactly: nodes are visited in increasing floor order and
/// the piecewise-linear budget equation is solved on the first segment that
/// contains its root.
pub fn waterfill_frequency<T: Real>(
    quad: &Quadrature<T>,
    floor: &[T],
    reference: &[T],
    budget: T,
) -> Waterfill<T> {
    let len = quad.len();
    assert!(floor.len() == len && reference.len() == len, "sample count mismatch");
    let w = quad.weights();
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| floor[a].partial_cmp(&floor[b]).unwrap_or(std::cmp::Ordering::Equal));

    let budget = budget.max(T::zero());
    let mut lambda = floor[order[0]];
    if budget > T::zero() {
        let (mut cum_w, mut cum_wn) = (T::zero(), T::zero());
        for (pos, &k) in order.iter().enumerate() {
            cum_w += w[k];
            cum_wn += w[k] * floor[k];
            lambda = (budget + cum_wn) / cum_w;
            match order.get(pos + 1) {
                Some(&next) if lambda > floor[next] => continue,
                _ => break,
            }
        }
    }

    let s_s: Vec<T> = floor.iter().map(|&n| (lambda - n).max(T::zero())).collect();
    let log_ratio: Vec<T> = floor
        .iter()
        .zip(reference)
        .map(|(&n, &r)| lambda.max(n).ln() - r.ln())
        .collect();
    Waterfill {
        lambda,
        power_used: quad.integrate(&s_s),
        value_nats: T::lit(0.5) * quad.integrate(&log_ratio),
        s_s,
    }
}

fn validate_forward<T: Real>(s_w: &Psd<T>, grid: usize) -> Result<Vec<T>, SpectralError> {
    if grid < MIN_GRID {
        return Err(SpectralError::InvalidProblem(format!(
            "grid must be at least {MIN_GRID}, got {grid}"
        )));
    }
    let samples = s_w.sample(grid);
    if samples.iter().any(|s| !(*s > T::zero())) {
        return Err(SpectralError::InvalidProblem(
            "forward noise spectrum must be positive on the grid".into(),
        ));
    }
    Ok(samples)
}

fn validate_power<T: Real>(power: T) -> Result<(), SpectralError> {
    if !(power > T::zero()) || !power.is_finite() {
        return Err(SpectralError::InvalidProblem(format!(
            "power must be positive and finite, got {power}"
        )));
    }
    Ok(())
}

/// Nonfeedback capacity in bits per transmission.
pub fn nonfeedback_shannon<T: Real>(s_w: &Psd<T>, power: T, grid: usize) -> Result<T, SpectralError> {
    validate_power(power)?;
    let samples = validate_forward(s_w, grid)?;
    let quad = Quadrature::trapezoid(grid)?;
    let wf = waterfill_frequency(&quad, &samples, &samples, power);
    Ok(wf.value_nats / T::lit(LN_2))
}

#[derive(Debug, Clone)]
pub struct SpectralProblem<T> {
    s_w: Psd<T>,
    s_v: Psd<T>,
    power: T,
    taps: usize,
    grid: usize,
    quad: Quadrature<T>,
    s_w_samples: Vec<T>,
    total_samples: Vec<T>,
    cos: Vec<Vec<T>>,
    sin: Vec<Vec<T>>,
}

struct Scored<T> {
    candidate: Candidate<T>,
    re: Vec<T>,
    im: Vec<T>,
    floor: Vec<T>,
}

/// Score of one filter candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    pub waterfill: Waterfill<T>,
    pub filter_power: T,
}

impl<T: Real> SpectralProblem<T> {
    pub fn new(
        s_w: Psd<T>,
        s_v: Psd<T>,
        power: T,
        taps: usize,
        grid: usize,
    ) -> Result<Self, SpectralError> {
        validate_power(power)?;
        let s_w_samples = validate_forward(&s_w, grid)?;
        let s_v_samples = s_v.sample(grid);
        let total_samples = s_w_samples
            .iter()
            .zip(&s_v_samples)
            .map(|(&a, &b)| a + b)
            .collect();
        let theta: Vec<f64> = (0..=grid).map(|m| PI * m as f64 / grid as f64).collect();
        let table = |f: fn(f64) -> f64| -> Vec<Vec<T>> {
            (1..=taps)
                .map(|k| theta.iter().map(|&t| T::lit(f(k as f64 * t))).collect())
                .collect()
        };
        Ok(Self {
            cos: table(f64::cos),
            sin: table(f64::sin),
            quad: Quadrature::trapezoid(grid)?,
            s_w,
            s_v,
            power,
            taps,
            grid,
            s_w_samples,
            total_samples,
        })
    }

    pub fn s_w(&self) -> &Psd<T> {
        &self.s_w
    }

    pub fn s_v(&self) -> &Psd<T> {
        &self.s_v
    }

    pub fn power(&self) -> T {
        self.power
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn quadrature(&self) -> &Quadrature<T> {
        &self.quad
    }

    /// Real and imaginary parts of `B(e^{iθ_m}) = Σ b_k e^{ikθ_m}`.
    pub fn response(&self, b: &[T]) -> (Vec<T>, Vec<T>) {
        assert_eq!(b.len(), self.taps, "tap count mismatch");
        let len = self.grid + 1;
        let mut re = vec![T::zero(); len];
        let mut im = vec![T::zero(); len];
        for (k, &bk) in b.iter().enumerate() {
            if bk == T::zero() {
                continue;
            }
            for m in 0..len {
                re[m] += bk * self.cos[k][m];
                im[m] += bk * self.sin[k][m];
            }
        }
        (re, im)
    }

    /// Power consumed by the filter acting on the fed-back noise.
    pub fn filter_power(&self, b: &[T]) -> T {
        let (re, im) = self.response(b);
        self.filter_power_from(&re, &im)
    }

    fn filter_power_from(&self, re: &[T], im: &[T]) -> T {
        let cost: Vec<T> = re
            .iter()
            .zip(im)
            .zip(&self.total_samples)
            .map(|((&r, &i), &s)| (r * r + i * i) * s)
            .collect();
        self.quad.integrate(&cost)
    }

    /// `None` when the filter alone exhausts the power budget.
    pub fn evaluate(&self, b: &[T]) -> Option<Candidate<T>> {
        self.score(b).map(|s| s.candidate)
    }

    fn score(&self, b: &[T]) -> Option<Scored<T>> {
        let (re, im) = self.response(b);
        let filter_power = self.filter_power_from(&re, &im);
        if !(filter_power < self.power) {
            return None;
        }
        let floor: Vec<T> = re
            .iter()
            .zip(&im)
            .zip(&self.s_w_samples)
            .map(|((&r, &i), &s)| {
                let one_r = T::one() + r;
                (one_r * one_r + i * i) * s
            })
            .collect();
        let waterfill = waterfill_frequency(
            &self.quad,
            &floor,
            &self.s_w_samples,
            self.power - filter_power,
        );
        Some(Scored {
            candidate: Candidate {
                waterfill,
                filter_power,
            },
            re,
            im,
            floor,
        })
    }

    /// Score in nats together with its gradient in the taps.
    ///
    /// The level is held fixed by the envelope argument: the budget constraint
    /// contributes `-1/(2λ)` per unit of filter power.
    pub fn value_gradient(&self, b: &[T]) -> Option<(Candidate<T>, Vec<T>)> {
        let sc = self.score(b)?;
        let lambda = sc.candidate.waterfill.lambda;
        let w = self.quad.weights();
        let len = self.grid + 1;
        // Per-node factors multiplying d/db_k of Re and Im parts.
        let mut a = vec![T::zero(); len];
        let mut c = vec![T::zero(); len];
        for m in 0..len {
            let denom = lambda.max(sc.floor[m]);
            let p = w[m] * self.s_w_samples[m] / denom;
            let q = w[m] * self.total_samples[m] / lambda;
            a[m] = p * (T::one() + sc.re[m]) - q * sc.re[m];
            c[m] = (p - q) * sc.im[m];
        }
        let grad = (0..self.taps)
            .map(|k| {
                (0..len)
                    .map(|m| a[m] * self.cos[k][m] + c[m] * self.sin[k][m])
                    .sum()
            })
            .collect();
        Some((sc.candidate, grad))
    }

    /// Gradient of [`filter_power`](Self::filter_power) in the taps.
    pub fn filter_power_gradient(&self, b: &[T]) -> Vec<T> {
        let (re, im) = self.response(b);
        let w = self.quad.weights();
        let two = T::lit(2.0);
        (0..self.taps)
            .map(|k| {
                (0..=self.grid)
                    .map(|m| {
                        two * w[m]
                            * self.total_samples[m]
                            * (re[m] * self.cos[k][m] + im[m] * self.sin[k][m])
                    })
                    .sum()
            })
            .collect()
    }

    /// The deterministic starting taps of the outer search, in seed order.
    pub fn seeds(&self) -> Vec<Vec<T>> {
        let k = self.taps;
        let alternating = |first: f64| -> Vec<T> {
            (0..k)
                .map(|i| T::lit(if i % 2 == 0 { first } else { -first }))
                .collect()
        };
        let mut first = vec![T::zero(); k];
        if k > 0 {
            first[0] = T::lit(-0.5);
        }
        let mut seeds = vec![vec![T::zero(); k], first, alternating(0.2), alternating(-0.2)];
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        for _ in 0..4 {
            seeds.push(
                (0..k)
                    .map(|_| T::lit(rng.gen_range(-RANDOM_SEED_RANGE..=RANDOM_SEED_RANGE)))
                    .collect(),
            );
        }
        seeds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSolution<T> {
    pub b: Vec<T>,
    pub lambda: T,
    pub s_s_samples: Vec<T>,
    pub value_bits: T,
    /// Total power: channel input spectrum plus filtered feedback noise.
    pub power_used: T,
    pub filter_power: T,
    /// Index into [`SpectralProblem::seeds`] of the winning start.
    pub seed_index: usize,
    pub iterations: usize,
}

fn solution_from<T: Real>(b: Vec<T>, c: Candidate<T>, seed_index: usize, iterations: usize) -> SpectralSolution<T> {
    SpectralSolution {
        b,
        lambda: c.waterfill.lambda,
        value_bits: c.waterfill.value_nats / T::lit(LN_2),
        power_used: c.waterfill.power_used + c.filter_power,
        filter_power: c.filter_power,
        s_s_samples: c.waterfill.s_s,
        seed_index,
        iterations,
    }
}

/// Best finite-tap noisy-feedback bound found by the multistart simplex search.
pub fn noisy_spectral_bound<T: Real>(prob: &SpectralProblem<T>) -> SpectralSolution<T> {
    let cfg = NelderMeadConfig::default();
    let objective = |b: &[T]| -> T {
        match prob.evaluate(b) {
            Some(c) => -c.waterfill.value_nats,
            None => T::infinity(),
        }
    };

    let runs: Vec<(usize, Vec<T>, T, usize)> = prob
        .seeds()
        .into_par_iter()
        .enumerate()
        .map(|(idx, mut seed)| {
            let mut halvings = 0;
            while prob.filter_power(&seed) >= prob.power() && halvings < 200 {
                seed.iter_mut().for_each(|v| *v *= T::lit(0.5));
                halvings += 1;
            }
            let m = neldermead::minimize(objective, &seed, &cfg);
            let (x, f) = polish(prob, m.x, m.f);
            (idx, x, f, m.iterations)
        })
        .collect();

    // Ordered reduction: strictly better value wins, ties keep the earlier seed.
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.2 < runs[best].2 {
            best = i;
        }
    }
    let (idx, b, _, iterations) = runs.into_iter().nth(best).unwrap();
    let candidate = prob
        .evaluate(&b)
        .expect("zero taps are always feasible for positive power");
    solution_from(b, candidate, idx, iterations)
}

/// Projected quasi-Newton ascent from a simplex result using the exact
/// gradient. Iterates are kept inside `filter_power ≤ P(1 − BOUNDARY_SLACK)` by
/// radial pull-back; on that surface the gradient is projected onto its
/// tangent space. Returns the improved taps and the negated score.
fn polish<T: Real>(prob: &SpectralProblem<T>, x0: Vec<T>, f0: T) -> (Vec<T>, T) {
    let k = x0.len();
    if k == 0 {
        return (x0, f0);
    }
    let limit = prob.power() * (T::one() - T::lit(BOUNDARY_SLACK));
    let dot = |a: &[T], b: &[T]| -> T { a.iter().zip(b).map(|(&p, &q)| p * q).sum() };
    let retract = |y: Vec<T>| -> Vec<T> {
        let cost = prob.filter_power(&y);
        if cost > limit {
            let r = (limit / cost).sqrt();
            y.into_iter().map(|v| v * r).collect()
        } else {
            y
        }
    };
    // Ascent direction restricted to the feasible side of the power surface.
    let effective = |x: &[T], g: Vec<T>, cost: T| -> Vec<T> {
        if cost < limit * (T::one() - T::lit(1e-9)) {
            return g;
        }
        let n = prob.filter_power_gradient(x);
        let gn = dot(&g, &n);
        let nn = dot(&n, &n);
        if gn <= T::zero() || nn <= T::zero() {
            return g;
        }
        g.iter().zip(&n).map(|(&gi, &ni)| gi - gn / nn * ni).collect()
    };

    let x0 = retract(x0);
    let Some((cand, g)) = prob.value_gradient(&x0) else {
        return (x0, f0);
    };
    let mut x = x0;
    let mut v = cand.waterfill.value_nats;
    let mut g = effective(&x, g, cand.filter_power);
    let identity = |h: &mut Vec<Vec<T>>| {
        for (i, row) in h.iter_mut().enumerate() {
            row.iter_mut().for_each(|e| *e = T::zero());
            row[i] = T::one();
        }
    };
    let mut h = vec![vec![T::zero(); k]; k];
    identity(&mut h);
    let mut stalls = 0;

    for _ in 0..POLISH_ITERATIONS {
        if g.iter().all(|gi| gi.abs() <= T::lit(1e-13)) {
            break;
        }
        let mut d: Vec<T> = h.iter().map(|row| dot(row, &g)).collect();
        if !(dot(&d, &g) > T::zero()) {
            identity(&mut h);
            d = g.clone();
        }
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let xn = retract(x.iter().zip(&d).map(|(&xi, &di)| xi + step * di).collect());
            if let Some((c, gn)) = prob.value_gradient(&xn) {
                let vn = c.waterfill.value_nats;
                let moved: Vec<T> = xn.iter().zip(&x).map(|(&a, &b)| a - b).collect();
                if vn > v && vn >= v + T::lit(1e-4) * dot(&moved, &g) {
                    let ge = effective(&xn, gn, c.filter_power);
                    accepted = Some((xn, moved, vn, ge));
                    break;
                }
            }
            step *= T::lit(0.5);
        }
        let Some((xn, s, vn, gn)) = accepted else {
            if stalls > 0 {
                break;
            }
            // A stale curvature model can block progress; retry once with steepest ascent.
            stalls += 1;
            identity(&mut h);
            continue;
        };
        let y: Vec<T> = g.iter().zip(&gn).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        let gain = vn - v;
        x = xn;
        v = vn;
        g = gn;
        if sy > T::zero() {
            let rho = sy.recip();
            let hy: Vec<T> = h.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..k {
                for j in 0..k {
                    h[i][j] += (T::one() + rho * yhy) * rho * s[i] * s[j]
                        - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        if gain <= T::epsilon() * v.abs() {
            stalls += 1;
            if stalls > 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    (x, (-v).min(f0))
}

/// Perfect-feedback capacity over the same finite-tap filter class.
pub fn perfect_feedback_shannon<T: Real>(
    s_w: &Psd<T>,
    power: T,
    taps: usize,
    grid: usize,
) -> Result<SpectralSolution<T>, SpectralError> {
    let silent = Psd::constant(T::zero())
        .map_err(|e| SpectralError::InvalidProblem(e.to_string()))?;
    let prob = SpectralProblem::new(s_w.clone(), silent, power, taps, grid)?;
    Ok(noisy_spectral_bound(&prob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseModel;

    fn white(v: f64) -> Psd<f64> {
        Psd::constant(v).unwrap()
    }

    fn ma1(alpha: f64) -> Psd<f64> {
        NoiseModel::ma1(alpha).unwrap().psd().unwrap()
    }

    #[test]
    fn quadrature_normalized() {
        for m in [1, 2, 7, 64, 2048] {
            let q = Quadrature::<f64>::trapezoid(m).unwrap();
            assert_eq!(q.len(), m + 1);
            assert!((q.integrate(&vec![1.0; m + 1]) - 1.0).abs() < 1e-15);
        }
        let q = Quadrature::<f64>::trapezoid(8).unwrap();
        let w = q.weights();
        assert_eq!(w[0], 1.0 / 16.0);
        assert_eq!(w[8], 1.0 / 16.0);
        assert_eq!(w[3], 1.0 / 8.0);
        assert!(Quadrature::<f64>::trapezoid(0).is_err());
        assert!(Quadrature::<f64>::from_weights(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn quadrature_exact_on_low_harmonics() {
        // The trapezoid rule integrates cos(kθ) over a full period exactly for k < 2M.
        let m = 64;
        let q = Quadrature::<f64>::trapezoid(m).unwrap();
        for k in 1..2 * m {
            let f: Vec<f64> = (0..=m)
                .map(|j| (k as f64 * PI * j as f64 / m as f64).cos())
                .collect();
            assert!(q.integrate(&f).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn flat_floor() {
        let q = Quadrature::<f64>::trapezoid(128).unwrap();
        let n = vec![1.0; 129];
        let wf = waterfill_frequency(&q, &n, &n, 1.0);
        assert!((wf.lambda - 2.0).abs() < 1e-14);
        assert!((wf.value_nats / LN_2 - 0.5).abs() < 1e-14);
        assert!((wf.power_used - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_budget() {
        let q = Quadrature::<f64>::trapezoid(64).unwrap();
        let floor: Vec<f64> = (0..=64).map(|m| 1.0 + (m as f64 * 0.1).sin().abs()).collect();
        let reference: Vec<f64> = (0..=64).map(|m| 1.0 + 0.01 * m as f64).collect();
        let wf = waterfill_frequency(&q, &floor, &reference, 0.0);
        assert!(wf.s_s.iter().all(|&s| s == 0.0));
        let direct: f64 = q
            .weights()
            .iter()
            .zip(floor.iter().zip(&reference))
            .map(|(w, (n, r))| w * (n / r).ln())
            .sum::<f64>()
            * 0.5;
        assert!((wf.value_nats - direct).abs() < 1e-14);
    }

    #[test]
    fn two_bin_toy() {
        // Equal-weight bins with floors 1 and 3.
        let q = Quadrature::<f64>::from_weights(vec![1.0, 1.0]).unwrap();
        let floor = [1.0f64, 3.0];
        // Budget 1/2 lifts only the low bin: (λ-1)/2 = 1/2.
        let wf = waterfill_frequency(&q, &floor, &floor, 0.5);
        assert!((wf.lambda - 2.0).abs() < 1e-15);
        assert_eq!(wf.s_s, vec![1.0, 0.0]);
        let direct = 0.5 * (0.5 * (2.0f64 / 1.0).ln() + 0.5 * (3.0f64 / 3.0).ln());
        assert!((wf.value_nats - direct).abs() < 1e-15);
        // Budget 1 reaches the upper floor exactly.
        let wf = waterfill_frequency(&q, &floor, &floor, 1.0);
        assert!((wf.lambda - 3.0).abs() < 1e-15);
        // Budget 3 covers both bins: (λ-1)/2 + (λ-3)/2 = 3.
        let wf = waterfill_frequency(&q, &floor, &floor, 3.0);
        assert!((wf.lambda - 5.0).abs() < 1e-15);
        let direct = 0.5 * (0.5 * 5.0f64.ln() + 0.5 * (5.0f64 / 3.0).ln());
        assert!((wf.value_nats - direct).abs() < 1e-15);
    }

    #[test]
    fn budget_met_on_rough_floors() {
        let q = Quadrature::<f64>::trapezoid(512).unwrap();
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let floor: Vec<f64> = (0..=512).map(|_| rng.gen_range(0.01..20.0)).collect();
            let budget = rng.gen_range(0.0..30.0);
            let wf = waterfill_frequency(&q, &floor, &floor, budget);
            assert!((wf.power_used - budget).abs() <= 1e-10 * budget.max(1.0));
            assert!(wf.s_s.iter().all(|&s| s >= 0.0));
            // Every filled node sits at the water level.
            for (s, n) in wf.s_s.iter().zip(&floor) {
                if *s > 0.0 {
                    assert!((s + n - wf.lambda).abs() < 1e-12 * wf.lambda);
                } else {
                    assert!(*n >= wf.lambda - 1e-12);
                }
            }
        }
    }

    #[test]
    fn nonfeedback_examples() {
        let v = nonfeedback_shannon(&white(1.0), 10.0, 256).unwrap();
        assert!((v - 0.5 * 11f64.log2()).abs() < 1e-13);
        let v = nonfeedback_shannon(&ma1(0.1), 10.0, 2048).unwrap();
        assert!(v >= 0.5 * (1.0 + 10.0 / 1.21f64).log2());
        assert!(nonfeedback_shannon(&white(1.0), 10.0, 32).is_err());
        assert!(nonfeedback_shannon(&white(1.0), 0.0, 128).is_err());
        assert!(nonfeedback_shannon(&ma1(-1.0), 1.0, 128).is_err());
    }

    #[test]
    fn nonfeedback_grid_refinement() {
        for alpha in [0.1, 0.5, 0.9] {
            let a = nonfeedback_shannon(&ma1(alpha), 10.0, 2048).unwrap();
            let b = nonfeedback_shannon(&ma1(alpha), 10.0, 4096).unwrap();
            assert!((a - b).abs() <= 1e-6, "alpha {alpha}: {a} vs {b}");
        }
    }

    #[test]
    fn seeds_are_fixed() {
        let p = SpectralProblem::new(white(1.0), white(1.0), 1.0, 4, 64).unwrap();
        let s = p.seeds();
        assert_eq!(s.len(), 8);
        assert_eq!(s[0], vec![0.0; 4]);
        assert_eq!(s[1], vec![-0.5, 0.0, 0.0, 0.0]);
        assert_eq!(s[2], vec![0.2, -0.2, 0.2, -0.2]);
        assert_eq!(s[3], vec![-0.2, 0.2, -0.2, 0.2]);
        assert_eq!(s, p.seeds());
        for r in &s[4..] {
            assert!(r.iter().all(|v| v.abs() <= RANDOM_SEED_RANGE));
        }
        assert_ne!(s[4], s[5]);
    }

    #[test]
    fn response_matches_direct_sum() {
        let p = SpectralProblem::new(white(1.0), white(0.5), 1.0, 3, 64).unwrap();
        let b = [0.3, -0.2, 0.1];
        let (re, im) = p.response(&b);
        for m in [0, 5, 31, 64] {
            let t = PI * m as f64 / 64.0;
            let r: f64 = (1..=3).map(|k| b[k - 1] * (k as f64 * t).cos()).sum();
            let i: f64 = (1..=3).map(|k| b[k - 1] * (k as f64 * t).sin()).sum();
            assert!((re[m] - r).abs() < 1e-15 && (im[m] - i).abs() < 1e-15);
        }
        // Parseval: (1/2π)∫|B|² = Σ b_k² against a flat spectrum.
        let cost = p.filter_power(&b);
        assert!((cost - 1.5 * 0.14).abs() < 1e-14, "{cost}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = SpectralProblem::new(ma1(0.6), white(0.3), 5.0, 4, 256).unwrap();
        for b in [[0.0, 0.0, 0.0, 0.0], [-0.3, 0.1, 0.05, -0.02], [0.2, -0.2, 0.1, 0.1]] {
            let (c, g) = p.value_gradient(&b).unwrap();
            assert_eq!(c, p.evaluate(&b).unwrap());
            let h = 1e-6;
            for k in 0..4 {
                let (mut up, mut dn) = (b, b);
                up[k] += h;
                dn[k] -= h;
                let fd = (p.evaluate(&up).unwrap().waterfill.value_nats
                    - p.evaluate(&dn).unwrap().waterfill.value_nats)
                    / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7, "b={b:?} k={k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn infeasible_filter_rejected() {
        let p = SpectralProblem::new(white(1.0), white(1.0), 1.0, 1, 64).unwrap();
        // Cost b²·2 ≥ 1 once |b| ≥ 1/√2.
        assert!(p.evaluate(&[0.8]).is_none());
        assert!(p.evaluate(&[0.7]).is_some());
    }

    #[test]
    fn problem_validation() {
        assert!(SpectralProblem::new(white(1.0), white(1.0), 1.0, 4, 63).is_err());
        assert!(SpectralProblem::new(white(1.0), white(1.0), -1.0, 4, 64).is_err());
        let zero = Psd::constant(0.0).unwrap();
        assert!(SpectralProblem::new(zero.clone(), white(1.0), 1.0, 4, 64).is_err());
        assert!(SpectralProblem::new(white(1.0), zero, 1.0, 0, 64).is_ok());
    }

    #[test]
    fn zero_taps_equal_nonfeedback() {
        let p = SpectralProblem::new(ma1(0.5), white(0.04), 10.0, 0, 512).unwrap();
        let s = noisy_spectral_bound(&p);
        let nf = nonfeedback_shannon(&ma1(0.5), 10.0, 512).unwrap();
        assert_eq!(s.value_bits, nf);
        assert!(s.b.is_empty());
    }

    #[test]
    fn white_pinch() {
        let target = 0.5 * 11f64.log2();
        for sigma in [0.0, 0.5, 2.0] {
            let p = SpectralProblem::new(white(1.0), white(sigma * sigma), 10.0, 4, 256).unwrap();
            let s = noisy_spectral_bound(&p);
            assert!((s.value_bits - target).abs() < 1e-3, "sigma {sigma}: {}", s.value_bits);
            assert!(s.b.iter().all(|v| v.abs() < 1e-2), "{:?}", s.b);
            // Perturbing the optimum only lowers the score.
            for k in 0..4 {
                for d in [-0.05, 0.05] {
                    let mut b = s.b.clone();
                    b[k] += d;
                    if let Some(c) = p.evaluate(&b) {
                        assert!(c.waterfill.value_nats / LN_2 <= s.value_bits + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn solution_invariants() {
        let p = SpectralProblem::new(ma1(0.5), white(0.1), 10.0, 6, 256).unwrap();
        let s = noisy_spectral_bound(&p);
        assert!(s.s_s_samples.iter().all(|&v| v >= 0.0));
        assert!(s.power_used <= 10.0 * (1.0 + 1e-8));
        assert!((s.power_used - 10.0).abs() < 1e-9);
        assert_eq!(s.s_s_samples.len(), 257);
        assert_eq!(s, noisy_spectral_bound(&p));
    }

    #[test]
    fn large_feedback_noise_collapses_to_nonfeedback() {
        let p = SpectralProblem::new(ma1(0.5), white(1e6), 10.0, 8, 512).unwrap();
        let s = noisy_spectral_bound(&p);
        let nf = nonfeedback_shannon(&ma1(0.5), 10.0, 512).unwrap();
        assert!(s.value_bits >= nf - 1e-12);
        assert!(s.value_bits - nf < 1e-5, "{} vs {nf}", s.value_bits);
    }

    #[test]
    fn sandwich_and_noise_monotonicity() {
        let (taps, grid) = (8, 512);
        let s_w = ma1(0.5);
        let nf = nonfeedback_shannon(&s_w, 10.0, grid).unwrap();
        let pf = perfect_feedback_shannon(&s_w, 10.0, taps, grid).unwrap().value_bits;
        let mut last = pf;
        for var in [0.01, 0.04, 0.16, 0.64] {
            let p = SpectralProblem::new(s_w.clone(), white(var), 10.0, taps, grid).unwrap();
            let v = noisy_spectral_bound(&p).value_bits;
            assert!(nf <= v + 1e-8 && v <= pf + 1e-8, "{nf} {v} {pf}");
            assert!(v <= last + 1e-8, "var {var}: {v} > {last}");
            last = v;
        }
        assert!(pf > nf + 1e-3);
    }

    #[test]
    fn perfect_feedback_taps_doubling() {
        let s_w = ma1(0.5);
        let v: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&k| perfect_feedback_shannon(&s_w, 10.0, k, 512).unwrap().value_bits)
            .collect();
        assert!(v[1] >= v[0] - 1e-9 && v[2] >= v[1] - 1e-9, "{v:?}");
    }

    #[test]
    fn single_precision() {
        let p = SpectralProblem::<f32>::new(
            Psd::constant(1.0).unwrap(),
            Psd::constant(0.25).unwrap(),
            10.0,
            2,
            128,
        )
        .unwrap();
        let s = noisy_spectral_bound(&p);
        assert!((s.value_bits - 0.5 * 11f32.log2()).abs() < 1e-3);
    }
}
