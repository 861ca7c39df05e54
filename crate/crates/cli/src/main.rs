use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use collapselab::config::ExperimentConfig;
use collapselab::diagnostics::EffectiveDimensions;
use collapselab::harness::{
    log_linear_fit, read_records, run_collapse_sweep, run_mse_sweep, series_in, series_points, summarize,
    write_manifest, write_records, ExperimentRecord, SweepOutput,
};
use collapselab::kalman::{steady_state_covariance, SteadyStateKind, DEFAULT_MAX_ITER, DEFAULT_TOL};
use nalgebra::DVector;

mod selftest;

#[derive(Parser, Debug)]
#[command(name = "collapselab", version, about = "Weight-collapse experiments for EnKF-based particle filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sweep G and MSE over dimensions for the five algorithms.
    Collapse(ConfigArgs),
    /// As `collapse`, plus the exact-posterior baseline.
    Mse(ConfigArgs),
    /// Print effective dimensions of the configured model at steady state.
    Dims(ConfigArgs),
    /// Fit log G against n for every algorithm in a record table.
    Fit {
        /// CSV written by `collapse` or `mse`.
        csv: PathBuf,
    },
    /// Run the built-in example checks.
    Selftest,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated dimensions.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    /// Draws used to estimate G.
    #[arg(long)]
    estimator_samples: Option<String>,
    /// EnKF size for the fixed-size algorithms, or `n`.
    #[arg(long)]
    filter_ensemble: Option<String>,
    /// `on` or `off`.
    #[arg(long)]
    inflation: Option<String>,
    /// `identity`, `ones`, or `compact:<L>`.
    #[arg(long)]
    taper: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    jobs: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Any other config key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    /// Defaults, then the config file, then `COLLAPSELAB_*` variables, then
    /// flags.
    fn resolve(&self) -> Result<ExperimentConfig, String> {
        let mut config = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            config
                .merge_text(&text)
                .map_err(|e| format!("{}: {e}", path.display()))?;
        }
        config.merge_env(std::env::vars()).map_err(|e| e.to_string())?;
        let flags = [
            ("dims", &self.dims),
            ("replicates", &self.replicates),
            ("estimator_samples", &self.estimator_samples),
            ("filter_ensemble", &self.filter_ensemble),
            ("inflation", &self.inflation),
            ("taper", &self.taper),
            ("seed", &self.seed),
            ("jobs", &self.jobs),
            ("out", &self.out),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, v).map_err(|e| format!("--{}: {e}", key.replace('_', "-")))?;
            }
        }
        for kv in &self.overrides {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            config.set(key, value).map_err(|e| format!("--set {kv}: {e}"))?;
        }
        config.validate().map_err(|e| e.to_string())?;
        Ok(config)
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Collapse(args) => {
            let config = args.resolve().map_err(Failure::Usage)?;
            let out = run_collapse_sweep(&config).map_err(runtime)?;
            emit("collapse", &config, &out)
        }
        Command::Mse(args) => {
            let config = args.resolve().map_err(Failure::Usage)?;
            let out = run_mse_sweep(&config).map_err(runtime)?;
            emit("mse", &config, &out)
        }
        Command::Dims(args) => {
            let config = args.resolve().map_err(Failure::Usage)?;
            dims(&config).map_err(runtime)
        }
        Command::Fit { csv } => fit(&csv),
        Command::Selftest => {
            if selftest::run(&mut std::io::stdout()) {
                Ok(())
            } else {
                Err(Failure::Runtime("selftest failed".into()))
            }
        }
    }
}

fn emit(command: &str, config: &ExperimentConfig, out: &SweepOutput) -> Result<(), Failure> {
    std::fs::create_dir_all(&config.out).map_err(|e| Failure::Runtime(format!("{}: {e}", config.out.display())))?;
    let csv = config.out.join(format!("{command}.csv"));
    write_records(&out.records, &csv).map_err(runtime)?;
    write_manifest(config, command, &config.out.join(format!("{command}.manifest.txt"))).map_err(runtime)?;
    for f in &out.failures {
        eprintln!(
            "warning: n={} {} replicate {} failed: {}",
            f.n, f.algorithm, f.replicate, f.message
        );
    }
    println!("wrote {} records to {}", out.records.len(), csv.display());
    print_fits(&out.records);
    Ok(())
}

fn print_fits(records: &[ExperimentRecord]) {
    for series in series_in(records) {
        let mse: Vec<String> = summarize(records, series, |r| r.mse)
            .into_iter()
            .map(|(n, mean, _)| format!("{n}:{mean:.4}"))
            .collect();
        match log_linear_fit(&series_points(records, series)) {
            Ok(f) => println!(
                "{series}: slope {:.5} ± {:.5}, intercept {:.4}, R² {:.3}; mean MSE {}",
                f.slope,
                f.slope_se,
                f.intercept,
                f.r_squared,
                mse.join(" ")
            ),
            Err(e) => println!("{series}: no fit ({e}); mean MSE {}", mse.join(" ")),
        }
    }
}

fn dims(config: &ExperimentConfig) -> collapselab::Result<()> {
    let n = config.model_dimension;
    let model = config.model.build(n)?;
    let prior = steady_state_covariance(&model, SteadyStateKind::Prior, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let state = steady_state_covariance(&model, config.steady_state, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let d = EffectiveDimensions::compute(&model, &prior, &state, &DVector::zeros(model.n_y()), config.kappa)?;
    println!("model = {}", config.model);
    println!("n = {n}");
    println!("steady_state = {}", config.steady_state);
    println!("tau_squared = {}", d.tau_squared);
    println!("tau_spf = {}", d.tau_spf);
    println!("tau_spf_frobenius = {}", d.tau_spf_frobenius);
    println!("tau_sys = {}", d.tau_sys);
    println!("ell_sys = {}", d.ell_sys);
    println!("kappa = {}", d.kappa);
    Ok(())
}

fn fit(path: &Path) -> Result<(), Failure> {
    let records = read_records(path).map_err(|e| match e {
        collapselab::Error::Io(_) | collapselab::Error::Csv(_) => Failure::Runtime(format!("{}: {e}", path.display())),
        other => Failure::Usage(other.to_string()),
    })?;
    if records.is_empty() {
        return Err(Failure::Runtime(format!("{}: no records", path.display())));
    }
    for series in series_in(&records) {
        match log_linear_fit(&series_points(&records, series)) {
            Ok(f) => println!(
                "{series}: slope = {} slope_se = {} intercept = {} r_squared = {}",
                f.slope, f.slope_se, f.intercept, f.r_squared
            ),
            Err(e) => println!("{series}: no fit ({e})"),
        }
    }
    Ok(())
}
