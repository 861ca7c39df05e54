//! Dimension sweeps on the canonical model `M = H = Q = R = I_n`.
//!
//! One replicate at dimension `n` is a single assimilation step from
//! `x_{k−1} ~ N(0, I)`: the truth `x_k` and observation `y` are simulated
//! jointly, so the truth is a draw from the exact filtering density given
//! `y`. Every algorithm then builds its proposal, draws `N_G` samples from
//! it, and reports the estimated `G` of their weights together with the
//! normalized MSE of its `N_e`-member filter mean.
//!
//! Each `(n, replicate)` pair owns its random streams, so results do not
//! depend on the number of worker threads.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, FilteringMode};
use crate::diagnostics::{estimate_g, normalized_mse};
use crate::enkf::{apply_gain, enkf_forecast, enkf_gain, ensemble_mean_cov, EnkfConfig};
use crate::error::{Error, Result};
use crate::kalman::{kf_predict, kf_update, KalmanState};
use crate::model::{make_taper, simulate_truth, Ensemble, Gaussian, LinearGaussianModel, TaperKind, WeightedEnsemble};
use crate::particle::{optimal_pf_step, weighted_mean, OptimalProposal};
use crate::pf_enkf::{beta_from_ensemble_size, enkf_filtering_proposal, BetaPerturbation, FilteringWeigher, SmoothingWeigher};
use crate::rng::{tag, StreamKey, StreamRng};

/// Estimator draws are generated and weighed this many at a time.
const BLOCK: usize = 4096;

/// The five algorithm configurations of the collapse study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlgorithmId {
    FilteringUnlocalizedNe50,
    FilteringLocalizedNe50,
    FilteringLocalizedNeEqN,
    SmoothingLocalizedNe50,
    OptimalPfSmoothingNe50,
}

impl AlgorithmId {
    pub const ALL: [AlgorithmId; 5] = [
        AlgorithmId::FilteringUnlocalizedNe50,
        AlgorithmId::FilteringLocalizedNe50,
        AlgorithmId::FilteringLocalizedNeEqN,
        AlgorithmId::SmoothingLocalizedNe50,
        AlgorithmId::OptimalPfSmoothingNe50,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AlgorithmId::FilteringUnlocalizedNe50 => "enkf_pf_filtering_unlocalized_Ne50",
            AlgorithmId::FilteringLocalizedNe50 => "enkf_pf_filtering_localized_Ne50",
            AlgorithmId::FilteringLocalizedNeEqN => "enkf_pf_filtering_localized_NeEqN",
            AlgorithmId::SmoothingLocalizedNe50 => "enkf_pf_smoothing_localized_Ne50",
            AlgorithmId::OptimalPfSmoothingNe50 => "optimal_pf_smoothing_Ne50",
        }
    }

    /// Localized and inflated EnKF (all but the unlocalized filtering run).
    pub fn localized(self) -> bool {
        self != AlgorithmId::FilteringUnlocalizedNe50
    }

    /// Filter ensemble size at dimension `n`. A sample covariance needs two
    /// members, so `N_e = n` is raised to 2 at `n = 1`.
    pub fn ensemble_size(self, config: &ExperimentConfig, n: usize) -> usize {
        match self {
            AlgorithmId::FilteringLocalizedNeEqN => n.max(2),
            _ => config.filter_ensemble.resolve(n).max(2),
        }
    }
}

impl fmt::Display for AlgorithmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AlgorithmId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        AlgorithmId::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

/// A row label: one of the algorithms or the exact-posterior baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Series {
    Algorithm(AlgorithmId),
    /// `N_e` exact posterior draws; `G = 1` by construction.
    IdealSampler,
}

impl Series {
    pub fn label(self) -> &'static str {
        match self {
            Series::Algorithm(a) => a.label(),
            Series::IdealSampler => "ideal_sampler",
        }
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Series {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "ideal_sampler" {
            Ok(Series::IdealSampler)
        } else {
            s.parse().map(Series::Algorithm)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub n: usize,
    pub algorithm: Series,
    pub replicate: usize,
    pub g: f64,
    pub mse: f64,
    pub elapsed_seconds: f64,
    pub seed_used: u64,
}

/// A task that raised an error; the sweep carries on without it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFailure {
    pub n: usize,
    pub algorithm: Series,
    pub replicate: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<TaskFailure>,
}

/// The shared part of one replicate: model, observation, truth, and the
/// exact densities before and after the update.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: LinearGaussianModel,
    pub prior: Gaussian,
    pub y: DVector<f64>,
    pub truth: DVector<f64>,
    pub posterior: Gaussian,
}

impl Problem {
    /// Canonical problem at dimension `n` drawn from `rng`.
    pub fn canonical(n: usize, rng: &mut StreamRng) -> Result<Self> {
        let model = LinearGaussianModel::canonical(n);
        let prior = Gaussian::standard(n);
        let traj = simulate_truth(&model, &prior, 1, rng)?;
        let y = traj.observations[0].clone();
        let forecast = kf_predict(&KalmanState::new(prior.clone(), 0), &model)?;
        let posterior = kf_update(&forecast, &model, &y)?;
        Ok(Self {
            model,
            prior,
            y,
            truth: traj.states[1].clone(),
            posterior,
        })
    }

    fn posterior_variances(&self) -> DVector<f64> {
        self.posterior.cov().diagonal()
    }
}

fn problem_key(config: &ExperimentConfig, n: usize, replicate: usize) -> StreamKey {
    StreamKey::new(config.seed, tag("problem"), replicate as u64, n as u64)
}

fn series_key(config: &ExperimentConfig, series: Series, n: usize, replicate: usize) -> StreamKey {
    StreamKey::new(config.seed, tag(series.label()), replicate as u64, n as u64)
}

/// Collects `total` log-weights, `BLOCK` at a time, and returns `G`.
fn blocked_g(total: usize, mut block: impl FnMut(usize) -> Result<Vec<f64>>) -> Result<f64> {
    let mut log_w = Vec::with_capacity(total);
    while log_w.len() < total {
        let count = BLOCK.min(total - log_w.len());
        log_w.extend(block(count)?);
    }
    Ok(estimate_g(&log_w)?.g)
}

/// One EnKF cycle from the prior; returns the gain and the analysis ensemble.
fn enkf_cycle(
    problem: &Problem,
    algorithm: AlgorithmId,
    ensemble_size: usize,
    config: &ExperimentConfig,
    rng: &mut StreamRng,
) -> Result<(DMatrix<f64>, Ensemble)> {
    let n = problem.model.n_x();
    let (taper_kind, inflation) = if algorithm.localized() {
        let alpha = if config.inflation { 1.0 / ensemble_size as f64 } else { 0.0 };
        (config.taper, alpha)
    } else {
        (TaperKind::AllOnes, 0.0)
    };
    let enkf = EnkfConfig::new(ensemble_size, make_taper(taper_kind, n)?, inflation, config.seed)?;
    let prev = problem.prior.sample(ensemble_size, rng)?;
    let forecast = enkf_forecast(&prev, &problem.model, rng)?;
    let (_, cov) = ensemble_mean_cov(&forecast)?;
    let (gain, _) = enkf_gain(&cov, &problem.model, &enkf)?;
    let analysis = apply_gain(&forecast, &problem.model, &problem.y, &gain, rng)?;
    Ok((gain, analysis))
}

/// `(G, normalized MSE)` for one algorithm on one problem.
fn run_algorithm(
    problem: &Problem,
    algorithm: AlgorithmId,
    config: &ExperimentConfig,
    rng: &mut StreamRng,
) -> Result<(f64, f64)> {
    let n = problem.model.n_x();
    let ne = algorithm.ensemble_size(config, n);
    let samples = config.estimator_samples;
    let variances = problem.posterior_variances();

    if algorithm == AlgorithmId::OptimalPfSmoothingNe50 {
        let prev = WeightedEnsemble::uniform(problem.prior.sample(ne, rng)?);
        let filtered = optimal_pf_step(&prev, &problem.model, &problem.y, rng)?;
        let mse = normalized_mse(&weighted_mean(&filtered)?, &problem.truth, &variances)?;
        let proposal = OptimalProposal::new(&problem.model, &problem.y)?;
        // The increment depends on x_{k−1} only, so x_k is never drawn.
        let g = blocked_g(samples, |count| {
            let prev = problem.prior.sample(count, rng)?;
            Ok(proposal.log_increment_columns(prev.members()))
        })?;
        return Ok((g, mse));
    }

    let (gain, analysis) = enkf_cycle(problem, algorithm, ne, config, rng)?;
    let mse = normalized_mse(&analysis.mean(), &problem.truth, &variances)?;

    let g = if algorithm == AlgorithmId::SmoothingLocalizedNe50 {
        let weigher = SmoothingWeigher::new(&problem.model, &gain, &problem.y)?;
        blocked_g(samples, |count| {
            let prev = problem.prior.sample(count, rng)?.into_members();
            let states = weigher.sample(&prev, rng);
            Ok(weigher.log_increment_columns(&states, &prev))
        })?
    } else {
        let proposal = match config.filtering_mode {
            FilteringMode::Empirical => {
                let taper_kind = if algorithm.localized() {
                    config.taper
                } else {
                    TaperKind::AllOnes
                };
                let cov = enkf_filtering_proposal(
                    problem.prior.cov(),
                    &problem.model,
                    &gain,
                    &make_taper(taper_kind, n)?,
                )?;
                Gaussian::new(analysis.mean(), cov)?
            }
            FilteringMode::Idealized => {
                let beta = beta_from_ensemble_size(ne, config.beta_constant);
                BetaPerturbation::new(beta, problem.posterior.clone())?.proposal()?
            }
        };
        let weigher = FilteringWeigher::new(&problem.posterior, &proposal)?;
        blocked_g(samples, |count| {
            let states = weigher.sample(count, rng);
            Ok(weigher.log_weight_columns(&states))
        })?
    };
    Ok((g, mse))
}

fn run_ideal(problem: &Problem, ensemble_size: usize, rng: &mut StreamRng) -> Result<(f64, f64)> {
    let draws = problem.posterior.sample(ensemble_size, rng)?;
    let mse = normalized_mse(&draws.mean(), &problem.truth, &problem.posterior_variances())?;
    Ok((1.0, mse))
}

fn run_series(
    problem: &Problem,
    series: Series,
    config: &ExperimentConfig,
    n: usize,
    replicate: usize,
) -> std::result::Result<ExperimentRecord, TaskFailure> {
    let key = series_key(config, series, n, replicate);
    let mut rng = key.rng();
    let start = Instant::now();
    let outcome = match series {
        Series::Algorithm(a) => run_algorithm(problem, a, config, &mut rng),
        Series::IdealSampler => run_ideal(problem, config.filter_ensemble.resolve(n).max(2), &mut rng),
    };
    let elapsed = start.elapsed().as_secs_f64();
    match outcome {
        Ok((g, mse)) => Ok(ExperimentRecord {
            n,
            algorithm: series,
            replicate,
            g,
            mse,
            elapsed_seconds: if config.record_timing { elapsed } else { 0.0 },
            seed_used: key.seed(),
        }),
        Err(e) => Err(TaskFailure {
            n,
            algorithm: series,
            replicate,
            message: e.to_string(),
        }),
    }
}

fn run_grid(config: &ExperimentConfig, series: &[Series]) -> Result<SweepOutput> {
    config.validate()?;
    let tasks: Vec<(usize, usize)> = config
        .dims
        .iter()
        .flat_map(|&n| (0..config.replicates).map(move |r| (n, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let results: Vec<Vec<std::result::Result<ExperimentRecord, TaskFailure>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n, replicate)| {
                let mut rng = problem_key(config, n, replicate).rng();
                match Problem::canonical(n, &mut rng) {
                    Ok(problem) => series
                        .iter()
                        .map(|&s| run_series(&problem, s, config, n, replicate))
                        .collect(),
                    Err(e) => series
                        .iter()
                        .map(|&s| {
                            Err(TaskFailure {
                                n,
                                algorithm: s,
                                replicate,
                                message: e.to_string(),
                            })
                        })
                        .collect(),
                }
            })
            .collect()
    });
    let mut out = SweepOutput::default();
    for result in results.into_iter().flatten() {
        match result {
            Ok(record) => out.records.push(record),
            Err(failure) => out.failures.push(failure),
        }
    }
    sort_records(&mut out.records);
    out.failures
        .sort_by(|a, b| (a.n, a.algorithm.label(), a.replicate).cmp(&(b.n, b.algorithm.label(), b.replicate)));
    Ok(out)
}

fn sort_records(records: &mut [ExperimentRecord]) {
    records.sort_by(|a, b| (a.n, a.algorithm.label(), a.replicate).cmp(&(b.n, b.algorithm.label(), b.replicate)));
}

/// `G` and MSE for every configured algorithm, dimension, and replicate.
pub fn run_collapse_sweep(config: &ExperimentConfig) -> Result<SweepOutput> {
    let series: Vec<Series> = config.algorithms.iter().map(|&a| Series::Algorithm(a)).collect();
    run_grid(config, &series)
}

/// As [`run_collapse_sweep`] plus the exact-posterior baseline.
pub fn run_mse_sweep(config: &ExperimentConfig) -> Result<SweepOutput> {
    let mut series: Vec<Series> = config.algorithms.iter().map(|&a| Series::Algorithm(a)).collect();
    series.push(Series::IdealSampler);
    run_grid(config, &series)
}

/// Least-squares fit of `log G = intercept + slope · n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// One-sigma standard error of the slope.
    pub slope_se: f64,
    pub intercept_se: f64,
    /// Residual standard deviation of `log G`.
    pub residual_sd: f64,
    pub r_squared: f64,
    pub points: usize,
    mean_n: f64,
    sxx: f64,
}

impl LogLinearFit {
    pub fn log_g_at(&self, n: f64) -> f64 {
        self.intercept + self.slope * n
    }

    /// One-sigma half-width of the fitted `log G` at `n`.
    pub fn band_at(&self, n: f64) -> f64 {
        let d = n - self.mean_n;
        self.residual_sd * (1.0 / self.points as f64 + d * d / self.sxx).sqrt()
    }

    /// Slope interval `slope ± slope_se`.
    pub fn slope_band(&self) -> (f64, f64) {
        (self.slope - self.slope_se, self.slope + self.slope_se)
    }
}

pub fn log_linear_fit(points: &[(f64, f64)]) -> Result<LogLinearFit> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "a fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(_, g)) = points.iter().find(|(_, g)| !(*g > 0.0)) {
        return Err(Error::NonPositiveG(g));
    }
    let m = points.len() as f64;
    let mean_n = points.iter().map(|p| p.0).sum::<f64>() / m;
    let logs: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mean_log = logs.iter().sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_n).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateAbscissae);
    }
    let sxy: f64 = points
        .iter()
        .zip(&logs)
        .map(|(p, l)| (p.0 - mean_n) * (l - mean_log))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_log - slope * mean_n;
    let ss_res: f64 = points
        .iter()
        .zip(&logs)
        .map(|(p, l)| (l - intercept - slope * p.0).powi(2))
        .sum();
    let ss_tot: f64 = logs.iter().map(|l| (l - mean_log).powi(2)).sum();
    let residual_sd = (ss_res / (m - 2.0)).sqrt();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LogLinearFit {
        slope,
        intercept,
        slope_se: residual_sd / sxx.sqrt(),
        intercept_se: residual_sd * (1.0 / m + mean_n * mean_n / sxx).sqrt(),
        residual_sd,
        r_squared,
        points: points.len(),
        mean_n,
        sxx,
    })
}

/// `(n, G)` points of one series, in record order.
pub fn series_points(records: &[ExperimentRecord], series: Series) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter(|r| r.algorithm == series)
        .map(|r| (r.n as f64, r.g))
        .collect()
}

/// Series present in `records`, ordered by label.
pub fn series_in(records: &[ExperimentRecord]) -> Vec<Series> {
    let mut by_label: BTreeMap<&'static str, Series> = BTreeMap::new();
    for r in records {
        by_label.insert(r.algorithm.label(), r.algorithm);
    }
    by_label.into_values().collect()
}

/// Per-dimension mean and sample standard deviation of `value` over the
/// records of one series.
pub fn summarize(
    records: &[ExperimentRecord],
    series: Series,
    value: impl Fn(&ExperimentRecord) -> f64,
) -> Vec<(usize, f64, f64)> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.algorithm == series) {
        groups.entry(r.n).or_default().push(value(r));
    }
    groups
        .into_iter()
        .map(|(n, v)| {
            let m = v.len() as f64;
            let mean = v.iter().sum::<f64>() / m;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else {
                0.0
            };
            (n, mean, sd)
        })
        .collect()
}

pub const CSV_HEADER: [&str; 7] = ["n", "algorithm", "replicate", "G", "mse", "elapsed_seconds", "seed_used"];

/// Writes the record table to `path`, rows ordered by
/// `(n, algorithm, replicate)`, and the plot-data files next to it.
pub fn write_records(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in &sorted {
        w.write_record([
            r.n.to_string(),
            r.algorithm.label().to_string(),
            r.replicate.to_string(),
            r.g.to_string(),
            r.mse.to_string(),
            r.elapsed_seconds.to_string(),
            r.seed_used.to_string(),
        ])?;
    }
    w.flush()?;
    write_plot_data(&sorted, path)?;
    Ok(())
}

/// Companion file for `series` and `quantity` (`G` or `mse`) next to `path`.
pub fn plot_data_path(path: &Path, series: Series, quantity: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{}.{quantity}.csv", series.label()))
}

/// Per-series `n,mean,lo,hi` summaries. For `G`, `lo`/`hi` is the one-sigma
/// band of the log-linear fit (the observed range when no fit is possible);
/// for MSE it is the mean ± two sample standard deviations.
fn write_plot_data(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    for series in series_in(records) {
        let fit = log_linear_fit(&series_points(records, series)).ok();
        let mut w = csv::Writer::from_path(plot_data_path(path, series, "G"))?;
        w.write_record(["n", "mean", "lo", "hi"])?;
        let ranges = summarize_range(records, series);
        for (n, mean, _) in summarize(records, series, |r| r.g) {
            let (lo, hi) = match fit {
                Some(f) => {
                    let centre = f.log_g_at(n as f64);
                    let band = f.band_at(n as f64);
                    ((centre - band).exp(), (centre + band).exp())
                }
                None => ranges[&n],
            };
            w.write_record([n.to_string(), mean.to_string(), lo.to_string(), hi.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(plot_data_path(path, series, "mse"))?;
        w.write_record(["n", "mean", "lo", "hi"])?;
        for (n, mean, sd) in summarize(records, series, |r| r.mse) {
            w.write_record([
                n.to_string(),
                mean.to_string(),
                (mean - 2.0 * sd).to_string(),
                (mean + 2.0 * sd).to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn summarize_range(records: &[ExperimentRecord], series: Series) -> BTreeMap<usize, (f64, f64)> {
    let mut out: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.algorithm == series) {
        let e = out.entry(r.n).or_insert((f64::INFINITY, f64::NEG_INFINITY));
        e.0 = e.0.min(r.g);
        e.1 = e.1.max(r.g);
    }
    out
}

/// Reads a table written by [`write_records`].
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::Config(format!(
            "{}: expected header `{}`",
            path.display(),
            CSV_HEADER.join(",")
        )));
    }
    let parse_err = |what: &str, v: &str| Error::Config(format!("{}: bad {what} `{v}`", path.display()));
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        out.push(ExperimentRecord {
            n: field(0).parse().map_err(|_| parse_err("n", field(0)))?,
            algorithm: field(1).parse()?,
            replicate: field(2).parse().map_err(|_| parse_err("replicate", field(2)))?,
            g: field(3).parse().map_err(|_| parse_err("G", field(3)))?,
            mse: field(4).parse().map_err(|_| parse_err("mse", field(4)))?,
            elapsed_seconds: field(5).parse().map_err(|_| parse_err("elapsed_seconds", field(5)))?,
            seed_used: field(6).parse().map_err(|_| parse_err("seed_used", field(6)))?,
        });
    }
    Ok(out)
}

/// Writes the effective configuration, the command, and the code version.
pub fn write_manifest(config: &ExperimentConfig, command: &str, path: &Path) -> Result<()> {
    let text = format!(
        "# collapselab run manifest\ncode_version = {} {}\ncommand = {command}\n{}",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION"),
        config.to_text()
    );
    fs::write(path, text)?;
    Ok(())
}
