//! Experiment configuration as flat `key = value` text.
//!
//! Lines starting with `#` and blank lines are ignored. Every key may also be
//! set through an environment variable `COLLAPSELAB_<KEY>` (upper case), and
//! through [`ExperimentConfig::set`], which the command line uses for flags.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `dims` | `5,10,20,50,100,200,500` | state dimensions, ascending |
//! | `replicates` | `100` | repetitions per (dimension, algorithm) |
//! | `estimator_samples` | `100000` | draws used to estimate `G` |
//! | `filter_ensemble` | `50` | EnKF size for the fixed-size algorithms, or `n` |
//! | `inflation` | `on` | `(1 + 1/N_e)` inflation for localized variants |
//! | `taper` | `identity` | `identity`, `ones`, or `compact:<L>` |
//! | `seed` | `0` | master seed |
//! | `jobs` | `0` | worker threads, `0` = all cores |
//! | `out` | `results` | output directory |
//! | `algorithms` | all five | comma-separated algorithm labels |
//! | `filtering_mode` | `empirical` | `empirical` or `idealized` |
//! | `beta_constant` | `1` | `c` in `β = c/√N_e` for the idealized mode |
//! | `kappa` | `0.05` | energy fraction left out of `ℓ_sys` |
//! | `steady_state` | `posterior` | covariance used for `τ_sys`, `ℓ_sys` |
//! | `model` | `canonical` | `canonical` or `scaled:<m>,<h>,<q>,<r>` |
//! | `model_dimension` | `10` | state dimension for `dims` |
//! | `record_timing` | `false` | write wall-clock seconds into records |

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::AlgorithmId;
use crate::kalman::SteadyStateKind;
use crate::model::{LinearGaussianModel, TaperKind};

pub const ENV_PREFIX: &str = "COLLAPSELAB_";

/// Every recognised key, in manifest order.
pub const KEYS: &[&str] = &[
    "dims",
    "replicates",
    "estimator_samples",
    "filter_ensemble",
    "inflation",
    "taper",
    "seed",
    "jobs",
    "out",
    "algorithms",
    "filtering_mode",
    "beta_constant",
    "kappa",
    "steady_state",
    "model",
    "model_dimension",
    "record_timing",
];

/// Size of the EnKF used by the fixed-size algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleSize {
    Fixed(usize),
    /// `N_e = n`.
    StateDimension,
}

impl EnsembleSize {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            EnsembleSize::Fixed(size) => size,
            EnsembleSize::StateDimension => n,
        }
    }
}

impl fmt::Display for EnsembleSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnsembleSize::Fixed(size) => write!(f, "{size}"),
            EnsembleSize::StateDimension => f.write_str("n"),
        }
    }
}

impl FromStr for EnsembleSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "n" => Ok(EnsembleSize::StateDimension),
            other => {
                let size = parse_int(other, "filter_ensemble")?;
                if size < 2 {
                    return Err(Error::Config("filter_ensemble must be at least 2".into()));
                }
                Ok(EnsembleSize::Fixed(size))
            }
        }
    }
}

/// Which proposal the filtering-density algorithms use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilteringMode {
    /// Averaged EnKF proposal built from the actual EnKF gain.
    #[default]
    Empirical,
    /// `N(μ_k, (1+β) P_k)` with `β = c/√N_e`.
    Idealized,
}

impl fmt::Display for FilteringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilteringMode::Empirical => "empirical",
            FilteringMode::Idealized => "idealized",
        })
    }
}

impl FromStr for FilteringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "empirical" => Ok(FilteringMode::Empirical),
            "idealized" => Ok(FilteringMode::Idealized),
            other => Err(Error::Config(format!("unknown filtering_mode `{other}`"))),
        }
    }
}

/// Model used by the `dims` report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    Canonical,
    /// `M = mI`, `H = hI`, `Q = qI`, `R = rI`.
    Scaled { m: f64, h: f64, q: f64, r: f64 },
}

impl ModelSpec {
    pub fn build(&self, n: usize) -> Result<LinearGaussianModel> {
        match *self {
            ModelSpec::Canonical => Ok(LinearGaussianModel::canonical(n)),
            ModelSpec::Scaled { m, h, q, r } => LinearGaussianModel::scaled_identity(n, m, h, q, r),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Canonical => f.write_str("canonical"),
            ModelSpec::Scaled { m, h, q, r } => write!(f, "scaled:{m},{h},{q},{r}"),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "canonical" {
            return Ok(ModelSpec::Canonical);
        }
        let body = s
            .strip_prefix("scaled:")
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))?;
        let parts = body
            .split(',')
            .map(|p| parse_float(p, "model"))
            .collect::<Result<Vec<_>>>()?;
        match parts[..] {
            [m, h, q, r] => Ok(ModelSpec::Scaled { m, h, q, r }),
            _ => Err(Error::Config(format!("model `{s}` needs four numbers"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dims: Vec<usize>,
    pub replicates: usize,
    pub estimator_samples: usize,
    pub filter_ensemble: EnsembleSize,
    pub inflation: bool,
    pub taper: TaperKind,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub algorithms: Vec<AlgorithmId>,
    pub filtering_mode: FilteringMode,
    pub beta_constant: f64,
    pub kappa: f64,
    pub steady_state: SteadyStateKind,
    pub model: ModelSpec,
    pub model_dimension: usize,
    pub record_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dims: vec![5, 10, 20, 50, 100, 200, 500],
            replicates: 100,
            estimator_samples: 100_000,
            filter_ensemble: EnsembleSize::Fixed(50),
            inflation: true,
            taper: TaperKind::Identity,
            seed: 0,
            jobs: 0,
            out: PathBuf::from("results"),
            algorithms: AlgorithmId::ALL.to_vec(),
            filtering_mode: FilteringMode::Empirical,
            beta_constant: 1.0,
            kappa: crate::diagnostics::DEFAULT_KAPPA,
            steady_state: SteadyStateKind::Posterior,
            model: ModelSpec::Canonical,
            model_dimension: 10,
            record_timing: false,
        }
    }
}

fn parse_int(value: &str, key: &str) -> Result<usize> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a nonnegative integer, got `{value}`")))
}

fn parse_float(value: &str, key: &str) -> Result<f64> {
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("`{key}` must be finite")));
    }
    Ok(v)
}

fn parse_bool(value: &str, key: &str) -> Result<bool> {
    match value.trim() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!("`{key}` expects on/off, got `{other}`"))),
    }
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "dims" => {
                self.dims = value
                    .split(',')
                    .map(|d| parse_int(d, "dims"))
                    .collect::<Result<_>>()?;
            }
            "replicates" => self.replicates = parse_int(value, key)?,
            "estimator_samples" => self.estimator_samples = parse_int(value, key)?,
            "filter_ensemble" => self.filter_ensemble = value.parse()?,
            "inflation" => self.inflation = parse_bool(value, key)?,
            "taper" => {
                self.taper = value
                    .parse()
                    .map_err(|e: Error| Error::Config(e.to_string()))?
            }
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("`seed` expects an unsigned integer, got `{value}`")))?
            }
            "jobs" => self.jobs = parse_int(value, key)?,
            "out" => self.out = PathBuf::from(value),
            "algorithms" => {
                self.algorithms = if value == "all" {
                    AlgorithmId::ALL.to_vec()
                } else {
                    value.split(',').map(str::parse).collect::<Result<_>>()?
                };
            }
            "filtering_mode" => self.filtering_mode = value.parse()?,
            "beta_constant" => self.beta_constant = parse_float(value, key)?,
            "kappa" => self.kappa = parse_float(value, key)?,
            "steady_state" => self.steady_state = value.parse()?,
            "model" => self.model = value.parse()?,
            "model_dimension" => self.model_dimension = parse_int(value, key)?,
            "record_timing" => self.record_timing = parse_bool(value, key)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "dims" => join(&self.dims),
            "replicates" => self.replicates.to_string(),
            "estimator_samples" => self.estimator_samples.to_string(),
            "filter_ensemble" => self.filter_ensemble.to_string(),
            "inflation" => if self.inflation { "on" } else { "off" }.to_string(),
            "taper" => self.taper.to_string(),
            "seed" => self.seed.to_string(),
            "jobs" => self.jobs.to_string(),
            "out" => self.out.display().to_string(),
            "algorithms" => join(&self.algorithms),
            "filtering_mode" => self.filtering_mode.to_string(),
            "beta_constant" => self.beta_constant.to_string(),
            "kappa" => self.kappa.to_string(),
            "steady_state" => self.steady_state.to_string(),
            "model" => self.model.to_string(),
            "model_dimension" => self.model_dimension.to_string(),
            "record_timing" => self.record_timing.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (number, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", number + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", number + 1)))?;
        }
        Ok(())
    }

    /// Applies `COLLAPSELAB_<KEY>` variables from `vars`; other names are
    /// ignored, unknown keys under the prefix are errors.
    pub fn merge_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut pairs: Vec<(String, String)> = vars
            .into_iter()
            .filter_map(|(k, v)| {
                k.as_ref()
                    .strip_prefix(ENV_PREFIX)
                    .map(|key| (key.to_ascii_lowercase(), v.as_ref().to_string()))
            })
            .collect();
        pairs.sort();
        for (key, value) in pairs {
            self.set(&key, &value)
                .map_err(|e| Error::Config(format!("{ENV_PREFIX}{}: {e}", key.to_ascii_uppercase())))?;
        }
        Ok(())
    }

    /// Checks cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Config("dims must be a nonempty list of positive integers".into()));
        }
        if self.dims.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("dims must be strictly ascending".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.estimator_samples < 10 {
            return Err(Error::Config("estimator_samples must be at least 10".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("algorithms must not be empty".into()));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::Config("kappa must lie in [0, 1)".into()));
        }
        if self.beta_constant < 0.0 {
            return Err(Error::Config("beta_constant must be nonnegative".into()));
        }
        if self.model_dimension == 0 {
            return Err(Error::Config("model_dimension must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.merge_text(text)?;
        Ok(config)
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}
