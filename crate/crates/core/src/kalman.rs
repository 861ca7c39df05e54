//! Exact Kalman recursion and steady-state covariances.
//!
//! These are the ground truth the ensemble methods are measured against:
//! the exact filtering density `N(μ_k, P_k)` for weights and MSE, and the
//! steady-state covariance for effective dimensions.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::linalg::{cholesky, ensure_shape, symmetrize};
use crate::model::{Gaussian, LinearGaussianModel};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Filtering density at time `k`.
#[derive(Debug, Clone)]
pub struct KalmanState {
    pub posterior: Gaussian,
    pub time_index: usize,
}

impl KalmanState {
    pub fn new(posterior: Gaussian, time_index: usize) -> Self {
        Self {
            posterior,
            time_index,
        }
    }

    /// One predict + update cycle.
    pub fn step(&self, model: &LinearGaussianModel, y: &DVector<f64>) -> Result<KalmanState> {
        let forecast = kf_predict(self, model)?;
        Ok(KalmanState::new(
            kf_update(&forecast, model, y)?,
            self.time_index + 1,
        ))
    }
}

/// `M P Mᵀ + Q`, symmetrized.
pub fn predict_cov(p: &DMatrix<f64>, model: &LinearGaussianModel) -> Result<DMatrix<f64>> {
    ensure_shape(p, model.n_x(), model.n_x(), "Kalman predict")?;
    Ok(symmetrize(&(model.m() * p * model.m().transpose() + model.q())))
}

pub fn kf_predict(state: &KalmanState, model: &LinearGaussianModel) -> Result<Gaussian> {
    let prior = &state.posterior;
    model.check_state(prior.mean(), "Kalman predict")?;
    let cov = predict_cov(prior.cov(), model)?;
    Gaussian::new(model.m() * prior.mean(), cov)
}

/// Gain `P Hᵀ (H P Hᵀ + R)⁻¹` for a symmetric forecast covariance `P`.
///
/// The innovation covariance is factored and solved against, never inverted.
pub fn kalman_gain(forecast_cov: &DMatrix<f64>, model: &LinearGaussianModel) -> Result<DMatrix<f64>> {
    ensure_shape(forecast_cov, model.n_x(), model.n_x(), "Kalman gain")?;
    let hp = model.h() * forecast_cov;
    let s = symmetrize(&(&hp * model.h().transpose() + model.r()));
    let chol = cholesky(&s).ok_or(Error::SingularInnovationCovariance)?;
    Ok(chol.solve(&hp).transpose())
}

/// `(I - K H) P`, symmetrized.
pub fn update_cov(forecast_cov: &DMatrix<f64>, model: &LinearGaussianModel) -> Result<DMatrix<f64>> {
    let k = kalman_gain(forecast_cov, model)?;
    let n = model.n_x();
    let a = DMatrix::identity(n, n) - &k * model.h();
    Ok(symmetrize(&(a * forecast_cov)))
}

pub fn kf_update(forecast: &Gaussian, model: &LinearGaussianModel, y: &DVector<f64>) -> Result<Gaussian> {
    model.check_state(forecast.mean(), "Kalman update")?;
    model.check_observation(y, "Kalman update")?;
    let k = kalman_gain(forecast.cov(), model)?;
    let innovation = y - model.h() * forecast.mean();
    let mean = forecast.mean() + &k * innovation;
    let n = model.n_x();
    let cov = symmetrize(&((DMatrix::identity(n, n) - &k * model.h()) * forecast.cov()));
    Gaussian::new(mean, cov)
}

/// Which side of the update the steady state is taken on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SteadyStateKind {
    /// Forecast covariance, fixed point of update-then-predict.
    Prior,
    /// Analysis covariance, fixed point of predict-then-update.
    #[default]
    Posterior,
}

impl fmt::Display for SteadyStateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SteadyStateKind::Prior => "prior",
            SteadyStateKind::Posterior => "posterior",
        })
    }
}

impl FromStr for SteadyStateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "prior" => Ok(SteadyStateKind::Prior),
            "posterior" => Ok(SteadyStateKind::Posterior),
            other => Err(Error::Config(format!("unknown steady-state kind `{other}`"))),
        }
    }
}

/// Fixed point of the covariance recursion, reached when successive iterates
/// differ by at most `tol` in Frobenius norm.
///
/// Iteration starts from the zero posterior covariance (or `Q` for the prior
/// side). Detectability is assumed, not checked.
pub fn steady_state_covariance(
    model: &LinearGaussianModel,
    which: SteadyStateKind,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let n = model.n_x();
    let step = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        match which {
            SteadyStateKind::Posterior => update_cov(&predict_cov(p, model)?, model),
            SteadyStateKind::Prior => predict_cov(&update_cov(p, model)?, model),
        }
    };
    let mut p = match which {
        SteadyStateKind::Posterior => DMatrix::zeros(n, n),
        SteadyStateKind::Prior => model.q().clone(),
    };
    for _ in 0..max_iter {
        let next = step(&p)?;
        let change = (&next - &p).norm();
        p = next;
        if change <= tol {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence { max_iter })
}
