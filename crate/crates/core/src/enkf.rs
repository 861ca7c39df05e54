//! Perturbed-observation ensemble Kalman filter with Schur localization and
//! multiplicative inflation.
//!
//! The forecast covariance is localized first and inflated second; the
//! resulting matrix defines the gain used for every member of the analysis.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kalman::kalman_gain;
use crate::model::linalg::{standard_normal_matrix, symmetrize};
use crate::model::{inflate, schur_localize, Ensemble, LinearGaussianModel, LocalizationTaper};

#[derive(Debug, Clone)]
pub struct EnkfConfig {
    ensemble_size: usize,
    taper: LocalizationTaper,
    inflation: f64,
    seed: u64,
}

impl EnkfConfig {
    pub fn new(ensemble_size: usize, taper: LocalizationTaper, inflation: f64, seed: u64) -> Result<Self> {
        if ensemble_size < 2 {
            return Err(Error::TooFewMembers {
                needed: 2,
                found: ensemble_size,
            });
        }
        if !(inflation >= 0.0) {
            return Err(Error::NegativeInflation(inflation));
        }
        Ok(Self {
            ensemble_size,
            taper,
            inflation,
            seed,
        })
    }

    pub fn ensemble_size(&self) -> usize {
        self.ensemble_size
    }

    pub fn taper(&self) -> &LocalizationTaper {
        &self.taper
    }

    pub fn inflation(&self) -> f64 {
        self.inflation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// `x̂ʲ = M xʲ + ηʲ` with independent `ηʲ ~ N(0, Q)`.
pub fn enkf_forecast<R: Rng + ?Sized>(
    analysis: &Ensemble,
    model: &LinearGaussianModel,
    rng: &mut R,
) -> Result<Ensemble> {
    if analysis.dim() != model.n_x() {
        return Err(crate::error::dim_mismatch("EnKF forecast", model.n_x(), analysis.dim()));
    }
    let noise = model.q_sqrt() * standard_normal_matrix(model.n_x(), analysis.size(), rng);
    Ensemble::new(model.m() * analysis.members() + noise, analysis.time_index() + 1)
}

/// Sample mean and unbiased (`N_e − 1`) sample covariance.
pub fn ensemble_mean_cov(e: &Ensemble) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n_e = e.size();
    if n_e < 2 {
        return Err(Error::TooFewMembers {
            needed: 2,
            found: n_e,
        });
    }
    let mean = e.mean();
    let mut anomalies = e.members().clone();
    for mut col in anomalies.column_iter_mut() {
        col -= &mean;
    }
    let cov = symmetrize(&(&anomalies * anomalies.transpose() / (n_e as f64 - 1.0)));
    Ok((mean, cov))
}

/// Localizes and inflates `forecast_cov`, then forms the gain from it.
/// Returns `(K, treated covariance)`.
pub fn enkf_gain(
    forecast_cov: &DMatrix<f64>,
    model: &LinearGaussianModel,
    config: &EnkfConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let treated = inflate(&schur_localize(forecast_cov, config.taper())?, config.inflation())?;
    let gain = kalman_gain(&treated, model)?;
    Ok((gain, treated))
}

/// `xʲ = x̂ʲ + K (y + εʲ − H x̂ʲ)` with a gain already in hand.
///
/// Perturbations `εʲ ~ N(0, R)` are drawn member by member and are not
/// recentred.
pub fn apply_gain<R: Rng + ?Sized>(
    forecast: &Ensemble,
    model: &LinearGaussianModel,
    y: &DVector<f64>,
    gain: &DMatrix<f64>,
    rng: &mut R,
) -> Result<Ensemble> {
    model.check_observation(y, "EnKF analysis")?;
    if forecast.dim() != model.n_x() {
        return Err(crate::error::dim_mismatch("EnKF analysis", model.n_x(), forecast.dim()));
    }
    if gain.shape() != (model.n_x(), model.n_y()) {
        return Err(crate::error::dim_mismatch(
            "EnKF gain",
            format!("{}x{}", model.n_x(), model.n_y()),
            format!("{}x{}", gain.nrows(), gain.ncols()),
        ));
    }
    let eps = model.r_sqrt() * standard_normal_matrix(model.n_y(), forecast.size(), rng);
    let mut innovations = eps - model.h() * forecast.members();
    for mut col in innovations.column_iter_mut() {
        col += y;
    }
    Ensemble::new(forecast.members() + gain * innovations, forecast.time_index())
}

/// Analysis step: sample covariance, treated gain, perturbed-observation update.
pub fn enkf_analysis<R: Rng + ?Sized>(
    forecast: &Ensemble,
    model: &LinearGaussianModel,
    y: &DVector<f64>,
    config: &EnkfConfig,
    rng: &mut R,
) -> Result<Ensemble> {
    let (_, cov) = ensemble_mean_cov(forecast)?;
    let (gain, _) = enkf_gain(&cov, model, config)?;
    apply_gain(forecast, model, y, &gain, rng)
}
