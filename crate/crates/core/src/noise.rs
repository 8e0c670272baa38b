//! Stationary Gaussian noise models and their two faces: the Toeplitz
//! covariance of an `n`-sample window and the power spectral density.

use std::f64::consts::PI;

use thiserror::Error;

use crate::linalg::{min_eigenvalue, toeplitz, SymMatrix};
use crate::scalar::Real;

/// Number of frequency points used to check that a custom autocovariance
/// has a nonnegative spectrum.
pub const PSD_CHECK_POINTS: usize = 4096;

/// Largest window the custom-autocovariance constructor validates by default.
pub const DEFAULT_N_MAX: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("invalid noise model: {0}")]
    InvalidModel(String),
}

/// Stationary Gaussian noise process.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel<T> {
    /// i.i.d. samples with the given variance. Zero variance models a
    /// noiseless (perfect) feedback link.
    White { variance: T },
    /// `W_i = U_i + alpha U_{i-1}` with unit-variance white `U`.
    Ma1 { alpha: T },
    /// `W_i = rho W_{i-1} + E_i` with innovation variance `innovation`.
    Ar1 { rho: T, innovation: T },
    /// Explicit autocovariance `r_0, r_1, …, r_m`; lags beyond `m` are zero.
    Custom { autocov: Vec<T> },
}

impl<T: Real> NoiseModel<T> {
    pub fn white(variance: T) -> Result<Self, NoiseError> {
        if !(variance >= T::zero()) || !variance.is_finite() {
            return Err(NoiseError::InvalidModel(format!(
                "white noise variance must be finite and >= 0, got {variance}"
            )));
        }
        Ok(Self::White { variance })
    }

    pub fn ma1(alpha: T) -> Result<Self, NoiseError> {
        if !alpha.is_finite() {
            return Err(NoiseError::InvalidModel("MA(1) alpha must be finite".into()));
        }
        Ok(Self::Ma1 { alpha })
    }

    pub fn ar1(rho: T, innovation: T) -> Result<Self, NoiseError> {
        if !(rho.abs() < T::one()) {
            return Err(NoiseError::InvalidModel(format!(
                "AR(1) requires |rho| < 1, got {rho}"
            )));
        }
        if !(innovation > T::zero()) || !innovation.is_finite() {
            return Err(NoiseError::InvalidModel(format!(
                "AR(1) innovation variance must be > 0, got {innovation}"
            )));
        }
        Ok(Self::Ar1 { rho, innovation })
    }

    /// Custom autocovariance, validated so that the Toeplitz matrix is PSD
    /// for every window up to `n_max` and the spectrum is nonnegative on
    /// the check grid.
    pub fn custom(autocov: Vec<T>, n_max: usize) -> Result<Self, NoiseError> {
        if autocov.is_empty() || !(autocov[0] > T::zero()) {
            return Err(NoiseError::InvalidModel(
                "custom autocovariance needs r_0 > 0".into(),
            ));
        }
        if autocov.iter().any(|r| !r.is_finite()) {
            return Err(NoiseError::InvalidModel(
                "custom autocovariance has non-finite entries".into(),
            ));
        }
        let model = Self::Custom { autocov };
        model.check_spectrum()?;
        // Nested leading blocks: PSD at n_max implies PSD at every smaller n.
        model.covariance(n_max.max(1))?;
        Ok(model)
    }

    /// True for `White { variance: 0 }`, the perfect-feedback marker.
    pub fn is_zero(&self) -> bool {
        matches!(self, Self::White { variance } if *variance == T::zero())
    }

    /// Autocovariance at lag `k`.
    pub fn autocov(&self, k: usize) -> T {
        match self {
            Self::White { variance } => {
                if k == 0 {
                    *variance
                } else {
                    T::zero()
                }
            }
            Self::Ma1 { alpha } => match k {
                0 => T::one() + *alpha * *alpha,
                1 => *alpha,
                _ => T::zero(),
            },
            Self::Ar1 { rho, innovation } => {
                let k = i32::try_from(k).unwrap_or(i32::MAX);
                *innovation * rho.powi(k) / (T::one() - *rho * *rho)
            }
            Self::Custom { autocov } => autocov.get(k).copied().unwrap_or(T::zero()),
        }
    }

    /// Toeplitz covariance of `n` consecutive samples.
    pub fn covariance(&self, n: usize) -> Result<SymMatrix<T>, NoiseError> {
        if n == 0 {
            return Err(NoiseError::InvalidModel("window length must be >= 1".into()));
        }
        let r: Vec<T> = (0..n).map(|k| self.autocov(k)).collect();
        let cov = toeplitz(&r, n);
        if let Self::Custom { .. } = self {
            let min = min_eigenvalue(&cov);
            if min < -T::lit(1e-10) * r[0].abs().max(T::one()) {
                return Err(NoiseError::InvalidModel(format!(
                    "custom autocovariance is not PSD at n={n} (min eigenvalue {min})"
                )));
            }
        }
        Ok(cov)
    }

    /// Power spectral density `S(e^{iθ})`.
    pub fn psd(&self) -> Result<Psd<T>, NoiseError> {
        if let Self::Custom { .. } = self {
            self.check_spectrum()?;
        }
        Ok(Psd {
            model: self.clone(),
        })
    }

    fn spectrum_at(&self, theta: T) -> T {
        let two = T::lit(2.0);
        match self {
            Self::White { variance } => *variance,
            Self::Ma1 { alpha } => T::one() + *alpha * *alpha + two * *alpha * theta.cos(),
            Self::Ar1 { rho, innovation } => {
                *innovation / (T::one() + *rho * *rho - two * *rho * theta.cos())
            }
            Self::Custom { autocov } => {
                let mut s = autocov[0];
                for (k, &r) in autocov.iter().enumerate().skip(1) {
                    s += two * r * (T::from_usize(k).unwrap() * theta).cos();
                }
                s
            }
        }
    }

    fn check_spectrum(&self) -> Result<(), NoiseError> {
        let scale = self.autocov(0).abs().max(T::one());
        for m in 0..=PSD_CHECK_POINTS {
            let theta = T::lit(PI * m as f64 / PSD_CHECK_POINTS as f64);
            let s = self.spectrum_at(theta);
            if s < -T::lit(1e-12) * scale {
                return Err(NoiseError::InvalidModel(format!(
                    "power spectral density is negative ({s}) at theta={theta}"
                )));
            }
        }
        Ok(())
    }
}

/// Power spectral density of a stationary real process; even in `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd<T> {
    model: NoiseModel<T>,
}

impl<T: Real> Psd<T> {
    /// Flat spectrum of the given level.
    pub fn constant(level: T) -> Result<Self, NoiseError> {
        NoiseModel::white(level)?.psd()
    }

    pub fn eval(&self, theta: T) -> T {
        self.model.spectrum_at(theta)
    }

    pub fn model(&self) -> &NoiseModel<T> {
        &self.model
    }

    /// Samples on `θ_m = π m / grid`, `m = 0..=grid`.
    pub fn sample(&self, grid: usize) -> Vec<T> {
        (0..=grid)
            .map(|m| self.eval(T::lit(PI * m as f64 / grid as f64)))
            .collect()
    }

    pub fn scaled(&self, c: T) -> Result<Self, NoiseError> {
        let model = match &self.model {
            NoiseModel::White { variance } => NoiseModel::white(*variance * c)?,
            NoiseModel::Custom { autocov } => NoiseModel::Custom {
                autocov: autocov.iter().map(|&r| r * c).collect(),
            },
            NoiseModel::Ma1 { alpha } => NoiseModel::Custom {
                autocov: vec![(T::one() + *alpha * *alpha) * c, *alpha * c],
            },
            NoiseModel::Ar1 { rho, innovation } => NoiseModel::ar1(*rho, *innovation * c)?,
        };
        Ok(Self { model })
    }
}
