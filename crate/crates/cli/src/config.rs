//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Keys are dotted (`channel.alpha`);
//! every key must be known and used by the selected models, so a typo is
//! reported instead of silently ignored.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fbcap::maxdet::SolverConfig;
use fbcap::nblock::MAX_BLOCK_LENGTH;
use fbcap::noise::{NoiseModel, DEFAULT_N_MAX};
use fbcap::spectral::{DEFAULT_GRID, DEFAULT_TAPS, MIN_GRID};
use thiserror::Error;

use crate::table::Format;

pub const KNOWN_KEYS: &[&str] = &[
    "channel.kind",
    "channel.alpha",
    "channel.variance",
    "channel.rho",
    "channel.innovation",
    "channel.autocov",
    "channel.power",
    "channel.block_length",
    "feedback.kind",
    "feedback.sigma",
    "feedback.alpha",
    "feedback.rho",
    "feedback.innovation",
    "feedback.autocov",
    "solver.t0",
    "solver.mu",
    "solver.gap_tol",
    "solver.newton_tol",
    "solver.max_iterations",
    "solver.seed",
    "solver.samples",
    "spectral.taps",
    "spectral.grid",
    "sweep.param",
    "sweep.values",
    "output.format",
    "output.path",
    "output.timings",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("missing required key `{0}`")]
    Missing(String),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Raw key/value pairs, before interpretation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: idx + 1 })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: idx + 1 });
            }
            if !KNOWN_KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate(key.to_string()));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Sets `key`, replacing any file value.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.entries.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Tracks which keys were consumed so leftovers can be rejected.
struct Reader<'a> {
    raw: &'a RawConfig,
    used: Vec<&'a str>,
}

impl<'a> Reader<'a> {
    fn take(&mut self, key: &str) -> Option<&'a str> {
        let (k, v) = self.raw.entries.get_key_value(key)?;
        self.used.push(k.as_str());
        Some(v.as_str())
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.take(key).map_or(Ok(default), |v| parse_f64(key, v))
    }

    fn f64_req(&mut self, key: &str) -> Result<f64, ConfigError> {
        let v = self.take(key).ok_or_else(|| ConfigError::Missing(key.into()))?;
        parse_f64(key, v)
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize, ConfigError> {
        self.take(key).map_or(Ok(default), |v| {
            v.parse()
                .map_err(|_| invalid(key, format!("`{v}` is not a non-negative integer")))
        })
    }

    fn list_req(&mut self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let v = self.take(key).ok_or_else(|| ConfigError::Missing(key.into()))?;
        parse_list(key, v)
    }

    fn leftover(&self) -> Option<&'a str> {
        self.raw
            .entries
            .keys()
            .map(String::as_str)
            .find(|k| !self.used.contains(k))
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v
        .parse()
        .map_err(|_| invalid(key, format!("`{v}` is not a number")))?;
    if !x.is_finite() {
        return Err(invalid(key, "must be finite"));
    }
    Ok(x)
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

/// A stationary noise process as named in the config.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    White { variance: f64 },
    Ma1 { alpha: f64 },
    Ar1 { rho: f64, innovation: f64 },
    Custom { autocov: Vec<f64> },
}

impl ModelSpec {
    pub fn build(&self, section: &str) -> Result<NoiseModel<f64>, ConfigError> {
        let key = |name: &str| format!("{section}.{name}");
        let err = |name: &str, e: fbcap::noise::NoiseError| invalid(&key(name), e.to_string());
        match self {
            ModelSpec::White { variance } => {
                let name = if section == "feedback" { "sigma" } else { "variance" };
                NoiseModel::white(*variance).map_err(|e| err(name, e))
            }
            ModelSpec::Ma1 { alpha } => NoiseModel::ma1(*alpha).map_err(|e| err("alpha", e)),
            ModelSpec::Ar1 { rho, innovation } => {
                NoiseModel::ar1(*rho, *innovation).map_err(|e| err("rho", e))
            }
            ModelSpec::Custom { autocov } => {
                NoiseModel::custom(autocov.clone(), DEFAULT_N_MAX).map_err(|e| err("autocov", e))
            }
        }
    }

    /// Compact, comma-free description for tabular output.
    pub fn label(&self) -> String {
        let g = |x: f64| crate::table::format_g(x, crate::table::DIGITS);
        match self {
            ModelSpec::White { variance } => format!("white({})", g(*variance)),
            ModelSpec::Ma1 { alpha } => format!("ma1({})", g(*alpha)),
            ModelSpec::Ar1 { rho, innovation } => format!("ar1({};{})", g(*rho), g(*innovation)),
            ModelSpec::Custom { autocov } => {
                let parts: Vec<String> = autocov.iter().map(|&r| g(r)).collect();
                format!("custom({})", parts.join(";"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Sigma,
    Alpha,
    Power,
    BlockLength,
}

impl SweepParam {
    pub fn key(self) -> &'static str {
        match self {
            SweepParam::Sigma => "feedback.sigma",
            SweepParam::Alpha => "channel.alpha",
            SweepParam::Power => "channel.power",
            SweepParam::BlockLength => "channel.block_length",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub channel: ModelSpec,
    pub feedback: ModelSpec,
    pub power: f64,
    pub block_length: usize,
    pub taps: usize,
    pub grid: usize,
    pub solver: SolverConfig<f64>,
    pub seed: u64,
    pub samples: usize,
    pub sweep: Option<SweepSpec>,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub timings: bool,
}

fn read_model(r: &mut Reader, section: &str, default_kind: &str) -> Result<ModelSpec, ConfigError> {
    let kind_key = format!("{section}.kind");
    let kind = r.take(&kind_key).unwrap_or(default_kind).to_ascii_lowercase();
    let key = |name: &str| format!("{section}.{name}");
    let spec = match kind.as_str() {
        "white" if section == "feedback" => {
            let sigma = r.f64_or(&key("sigma"), 0.2)?;
            if sigma < 0.0 {
                return Err(invalid(&key("sigma"), "must be >= 0"));
            }
            ModelSpec::White {
                variance: sigma * sigma,
            }
        }
        "white" => ModelSpec::White {
            variance: r.f64_or(&key("variance"), 1.0)?,
        },
        "ma1" => ModelSpec::Ma1 {
            alpha: r.f64_or(&key("alpha"), 0.1)?,
        },
        "ar1" => ModelSpec::Ar1 {
            rho: r.f64_req(&key("rho"))?,
            innovation: r.f64_or(&key("innovation"), 1.0)?,
        },
        "custom" => ModelSpec::Custom {
            autocov: r.list_req(&key("autocov"))?,
        },
        other => {
            return Err(invalid(
                &kind_key,
                format!("unknown model `{other}` (white, ma1, ar1, custom)"),
            ))
        }
    };
    Ok(spec)
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let mut r = Reader {
            raw,
            used: Vec::new(),
        };
        let channel = read_model(&mut r, "channel", "ma1")?;
        let feedback = read_model(&mut r, "feedback", "white")?;
        let power = r.f64_or("channel.power", 10.0)?;
        if !(power > 0.0) {
            return Err(invalid("channel.power", "must be > 0"));
        }
        let block_length = r.usize_or("channel.block_length", 30)?;
        if block_length == 0 || block_length > MAX_BLOCK_LENGTH {
            return Err(invalid(
                "channel.block_length",
                format!("must be in 1..={MAX_BLOCK_LENGTH}"),
            ));
        }
        let taps = r.usize_or("spectral.taps", DEFAULT_TAPS)?;
        let grid = r.usize_or("spectral.grid", DEFAULT_GRID)?;
        if grid < MIN_GRID {
            return Err(invalid("spectral.grid", format!("must be at least {MIN_GRID}")));
        }

        let d = SolverConfig::<f64>::default();
        let solver = SolverConfig {
            t0: r.f64_or("solver.t0", d.t0)?,
            mu: r.f64_or("solver.mu", d.mu)?,
            gap_tol: r.f64_or("solver.gap_tol", d.gap_tol)?,
            newton_tol: r.f64_or("solver.newton_tol", d.newton_tol)?,
            max_iterations: r.usize_or("solver.max_iterations", d.max_iterations)?,
            ..d
        };
        for (key, v) in [
            ("solver.t0", solver.t0),
            ("solver.gap_tol", solver.gap_tol),
            ("solver.newton_tol", solver.newton_tol),
        ] {
            if !(v > 0.0) {
                return Err(invalid(key, "must be > 0"));
            }
        }
        if !(solver.mu > 1.0) {
            return Err(invalid("solver.mu", "must be > 1"));
        }
        if solver.max_iterations == 0 {
            return Err(invalid("solver.max_iterations", "must be positive"));
        }
        let seed = r
            .take("solver.seed")
            .map_or(Ok(0), |v| v.parse().map_err(|_| invalid("solver.seed", format!("`{v}` is not an unsigned integer"))))?;
        let samples = r.usize_or("solver.samples", 100_000)?;
        if samples == 0 {
            return Err(invalid("solver.samples", "must be positive"));
        }

        let sweep = match r.take("sweep.param") {
            None => None,
            Some(p) => {
                let param = match p {
                    "sigma" => SweepParam::Sigma,
                    "alpha" => SweepParam::Alpha,
                    "power" | "P" => SweepParam::Power,
                    "n" | "block_length" => SweepParam::BlockLength,
                    other => {
                        return Err(invalid(
                            "sweep.param",
                            format!("unknown parameter `{other}` (sigma, alpha, power, n)"),
                        ))
                    }
                };
                let values = r.list_req("sweep.values")?;
                Some(SweepSpec { param, values })
            }
        };

        let format = match r.take("output.format").unwrap_or("csv") {
            "csv" => Format::Csv,
            "json" => Format::Json,
            other => return Err(invalid("output.format", format!("`{other}` is not csv or json"))),
        };
        let out = r.take("output.path").filter(|p| !p.is_empty()).map(PathBuf::from);
        let timings = match r.take("output.timings").unwrap_or("false") {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => return Err(invalid("output.timings", format!("`{other}` is not a boolean"))),
        };

        if let Some(key) = r.leftover() {
            return Err(invalid(key, "not used by the selected model"));
        }

        let cfg = Self {
            channel,
            feedback,
            power,
            block_length,
            taps,
            grid,
            solver,
            seed,
            samples,
            sweep,
            format,
            out,
            timings,
        };
        cfg.channel.build("channel")?;
        cfg.feedback.build("feedback")?;
        Ok(cfg)
    }

    /// Feedback standard deviation when the feedback link is white.
    pub fn sigma(&self) -> Option<f64> {
        match self.feedback {
            ModelSpec::White { variance } => Some(variance.sqrt()),
            _ => None,
        }
    }

    /// MA(1) coefficient of the forward channel, if it is MA(1).
    pub fn alpha(&self) -> Option<f64> {
        match self.channel {
            ModelSpec::Ma1 { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// Copy with one swept parameter replaced.
    pub fn with_param(&self, param: SweepParam, value: f64) -> Result<Self, ConfigError> {
        let key = param.key();
        if !value.is_finite() || value < 0.0 {
            return Err(invalid("sweep.values", format!("{value} must be finite and >= 0")));
        }
        let mut cfg = self.clone();
        match param {
            SweepParam::Sigma => match cfg.feedback {
                ModelSpec::White { .. } => cfg.feedback = ModelSpec::White { variance: value * value },
                _ => return Err(invalid("sweep.param", "sigma sweeps need white feedback")),
            },
            SweepParam::Alpha => match cfg.channel {
                ModelSpec::Ma1 { .. } => cfg.channel = ModelSpec::Ma1 { alpha: value },
                _ => return Err(invalid("sweep.param", "alpha sweeps need an ma1 channel")),
            },
            SweepParam::Power => {
                if value == 0.0 {
                    return Err(invalid(key, "must be > 0"));
                }
                cfg.power = value;
            }
            SweepParam::BlockLength => {
                if value.fract() != 0.0 || value < 1.0 || value > MAX_BLOCK_LENGTH as f64 {
                    return Err(invalid(key, format!("{value} is not an integer in 1..={MAX_BLOCK_LENGTH}")));
                }
                cfg.block_length = value as usize;
            }
        }
        cfg.channel.build("channel")?;
        cfg.feedback.build("feedback")?;
        Ok(cfg)
    }
}
