//! Hermetic checks of worked examples, one line per check.

use std::io::Write;

use collapselab::config::ExperimentConfig;
use collapselab::diagnostics::{
    closed_form_g, ell_sys, estimate_g, predicted_mse_stats, tau_spf, tau_spf_frobenius, tau_squared, tau_sys,
};
use collapselab::enkf::enkf_gain;
use collapselab::enkf::EnkfConfig;
use collapselab::harness::{log_linear_fit, run_collapse_sweep, write_records};
use collapselab::kalman::{kf_predict, kf_update, steady_state_covariance, KalmanState, SteadyStateKind};
use collapselab::model::{inflate, log_normal_pdf, make_taper, schur_localize, TaperKind};
use collapselab::particle::{normalize_log_weights, resample, OptimalProposal};
use collapselab::pf_enkf::{
    enkf_filtering_proposal, enkf_proposal_params, filtering_log_weight, simplified_beta_log_weight,
    smoothing_log_weight, BetaPerturbation,
};
use collapselab::rng::seeded;
use collapselab::{Ensemble, Gaussian, LinearGaussianModel, WeightedEnsemble};
use nalgebra::{DMatrix, DVector};

type Check = fn() -> Result<(), String>;

fn close(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, want {want} ± {tol}"))
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn s(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn g1(mean: f64, var: f64) -> Result<Gaussian, String> {
    Gaussian::new(v1(mean), s(var)).map_err(err)
}

const CHECKS: &[(&str, Check)] = &[
    ("kalman predict M=2", || {
        let model = LinearGaussianModel::scaled_identity(1, 2.0, 1.0, 1.0, 1.0).map_err(err)?;
        let f = kf_predict(&KalmanState::new(g1(1.0, 1.0)?, 0), &model).map_err(err)?;
        close("mean", f.mean()[0], 2.0, 1e-15)?;
        close("var", f.cov()[(0, 0)], 5.0, 1e-15)
    }),
    ("kalman update canonical", || {
        let model = LinearGaussianModel::canonical(1);
        let p = kf_update(&g1(0.0, 2.0)?, &model, &v1(1.5)).map_err(err)?;
        close("mean", p.mean()[0], 1.0, 1e-14)?;
        close("var", p.cov()[(0, 0)], 2.0 / 3.0, 1e-14)
    }),
    ("steady state canonical", || {
        let model = LinearGaussianModel::canonical(1);
        let p = steady_state_covariance(&model, SteadyStateKind::Posterior, 1e-12, 100_000).map_err(err)?;
        close("p*", p[(0, 0)], (5f64.sqrt() - 1.0) / 2.0, 1e-8)
    }),
    ("identity taper", || {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let out = schur_localize(&p, &make_taper(TaperKind::Identity, 2).map_err(err)?).map_err(err)?;
        close("off-diagonal", out[(0, 1)], 0.0, 0.0)?;
        close("inflated", inflate(&s(2.0), 0.5).map_err(err)?[(0, 0)], 3.0, 0.0)
    }),
    ("enkf gain scalar", || {
        let model = LinearGaussianModel::canonical(1);
        let cfg = EnkfConfig::new(10, make_taper(TaperKind::AllOnes, 1).map_err(err)?, 0.0, 0).map_err(err)?;
        let (k, _) = enkf_gain(&s(2.0), &model, &cfg).map_err(err)?;
        close("K", k[(0, 0)], 2.0 / 3.0, 1e-15)
    }),
    ("weight normalization", || {
        let (w, _) = normalize_log_weights(&[0.0, 3f64.ln()]).map_err(err)?;
        close("w1", w[0], 0.25, 1e-15)?;
        close("w2", w[1], 0.75, 1e-15)?;
        let (w, _) = normalize_log_weights(&[0.0, -1e6]).map_err(err)?;
        close("extreme", w[0], 1.0, 0.0)
    }),
    ("systematic resampling", || {
        let e = Ensemble::new(DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]), 0).map_err(err)?;
        let lw = vec![0.75f64.ln(), 0.25f64.ln(), f64::NEG_INFINITY, f64::NEG_INFINITY];
        let out = resample(&WeightedEnsemble::new(e, lw).map_err(err)?, &mut seeded(3)).map_err(err)?;
        let ones = out.members().iter().filter(|&&x| x == 1.0).count();
        if ones == 3 {
            Ok(())
        } else {
            Err(format!("member 1 copied {ones} times"))
        }
    }),
    ("optimal proposal scalar", || {
        let model = LinearGaussianModel::canonical(1);
        let p = OptimalProposal::new(&model, &v1(1.0)).map_err(err)?;
        close("C", p.cov()[(0, 0)], 0.5, 1e-15)?;
        close("m", p.mean(&v1(0.0))[0], 0.5, 1e-15)?;
        close("increment", p.log_increment(&v1(0.0)), log_normal_pdf(1.0, 0.0, 2.0), 1e-14)
    }),
    ("enkf proposal and smoothing weight", || {
        let model = LinearGaussianModel::canonical(1);
        let params = enkf_proposal_params(&v1(0.0), &model, &s(2.0 / 3.0), &v1(1.5)).map_err(err)?;
        close("mu", params.mean[0], 1.0, 1e-15)?;
        close("sigma", params.cov[(0, 0)], 5.0 / 9.0, 1e-15)?;
        let lw = smoothing_log_weight(&v1(1.0), &v1(0.0), &v1(1.5), &model, &params, 0.0).map_err(err)?;
        close("w", lw.exp(), 0.1592, 1e-4)
    }),
    ("filtering proposal and weight", || {
        let model = LinearGaussianModel::canonical(1);
        let taper = make_taper(TaperKind::AllOnes, 1).map_err(err)?;
        let p = enkf_filtering_proposal(&s(2.0 / 3.0), &model, &s(2.0 / 3.0), &taper).map_err(err)?;
        close("P_EnKF", p[(0, 0)], 0.62963, 1e-5)?;
        close(
            "weight",
            filtering_log_weight(&v1(1.0), &g1(0.0, 1.0)?, &g1(0.0, 2.0)?).map_err(err)?,
            -0.25,
            1e-15,
        )
    }),
    ("beta weight", || {
        let pert = BetaPerturbation::new(0.1, g1(0.0, 1.0)?).map_err(err)?;
        close("|w|", simplified_beta_log_weight(&v1(2.0), &pert).map_err(err)?.abs(), 0.18182, 1e-5)
    }),
    ("effective dimensions", || {
        close("tau2", tau_squared(&[1.0, 1.0], &[0.0, 0.0]).map_err(err)?, 1.0, 1e-12)?;
        close("tau2", tau_squared(&[2.0], &[1.0]).map_err(err)?, 4.0, 1e-12)?;
        close("tau_spf", tau_spf(&[1.0, 2.0, 3.0]).map_err(err)?, 6.0, 1e-12)?;
        close("tau_hat", tau_spf_frobenius(&[1.0, 2.0, 3.0]).map_err(err)?, 14f64.sqrt(), 1e-12)?;
        close("tau_sys", tau_sys(&DMatrix::identity(9, 9)), 3.0, 0.0)?;
        close("ell_sys", ell_sys(&[2.0, 1.0, 0.1], 0.05).map_err(err)? as f64, 2.0, 0.0)?;
        close("ell_sys uniform", ell_sys(&[1.0; 20], 0.05).map_err(err)? as f64, 19.0, 0.0)
    }),
    ("G estimates", || {
        let lw = [0.5f64.ln(), 0.5f64.ln(), f64::NEG_INFINITY, f64::NEG_INFINITY];
        close("G", estimate_g(&lw).map_err(err)?.g, 2.0, 1e-14)?;
        close("closed form", closed_form_g(0.1, 10), 1.0424, 1e-4)
    }),
    ("predicted MSE", || {
        let p = predicted_mse_stats(0.0, 50, 100);
        close("mean", p.mean, 1.02, 1e-15)?;
        close("variance", p.variance, 0.020808, 1e-15)
    }),
    ("log-linear fit", || {
        let pts: Vec<(f64, f64)> = [5.0f64, 10.0, 20.0].iter().map(|&n| (n, (0.02 * n).exp())).collect();
        close("slope", log_linear_fit(&pts).map_err(err)?.slope, 0.02, 1e-14)
    }),
    ("sweep is deterministic", || {
        let dir = tempfile::tempdir().map_err(err)?;
        let config = ExperimentConfig {
            dims: vec![1],
            replicates: 3,
            estimator_samples: 100,
            jobs: 1,
            ..ExperimentConfig::default()
        };
        let a = run_collapse_sweep(&config).map_err(err)?;
        let b = run_collapse_sweep(&ExperimentConfig { jobs: 2, ..config }).map_err(err)?;
        if a.records.len() != 15 || !a.failures.is_empty() {
            return Err(format!("{} records, {} failures", a.records.len(), a.failures.len()));
        }
        let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_records(&a.records, &pa).map_err(err)?;
        write_records(&b.records, &pb).map_err(err)?;
        let (ta, tb) = (std::fs::read(&pa).map_err(err)?, std::fs::read(&pb).map_err(err)?);
        if ta != tb {
            return Err("CSV differs between runs".into());
        }
        let lines = ta.iter().filter(|&&c| c == b'\n').count();
        close("lines", lines as f64, 16.0, 0.0)
    }),
];

/// Runs every check, printing `PASS`/`FAIL` lines; true when all pass.
pub fn run(out: &mut impl Write) -> bool {
    let mut failed = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => {
                let _ = writeln!(out, "PASS {name}");
            }
            Err(msg) => {
                failed += 1;
                let _ = writeln!(out, "FAIL {name}: {msg}");
            }
        }
    }
    let _ = writeln!(out, "{} checks, {} failed", CHECKS.len(), failed);
    failed == 0
}
