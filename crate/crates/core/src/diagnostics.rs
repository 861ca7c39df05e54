//! Effective dimensions, the weight-variance measure `G`, and MSE statistics.
//!
//! `G = E(w²)/E(w)²` is estimated by `N Σ w̃ⱼ²` over normalized weights, so
//! `G = 1` for uniform weights and `G = N` when one member carries all the
//! weight. The effective sample size is `N_e / G`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::linalg::{cholesky, symmetrize, ClampedSpectrum};
use crate::model::LinearGaussianModel;
use crate::particle::normalize_log_weights;

pub const DEFAULT_KAPPA: f64 = 0.05;

/// Relative cutoff below which eigenvalues count as zero.
const EIGEN_CLAMP: f64 = 1e-12;

fn check_nonnegative(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(**v >= 0.0)) {
        Some(&v) => Err(Error::NegativeEigenvalue(v)),
        None => Ok(()),
    }
}

/// `Σ ½λⱼ² + λⱼ yⱼ²`.
pub fn tau_squared(lambdas: &[f64], y: &[f64]) -> Result<f64> {
    if lambdas.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: lambdas.len(),
            right: y.len(),
        });
    }
    check_nonnegative(lambdas)?;
    Ok(lambdas
        .iter()
        .zip(y)
        .map(|(l, yj)| 0.5 * l * l + l * yj * yj)
        .sum())
}

/// `Σ λⱼ`.
pub fn tau_spf(lambdas: &[f64]) -> Result<f64> {
    check_nonnegative(lambdas)?;
    Ok(lambdas.iter().sum())
}

/// `√Σ λⱼ²`.
pub fn tau_spf_frobenius(lambdas: &[f64]) -> Result<f64> {
    check_nonnegative(lambdas)?;
    Ok(lambdas.iter().map(|l| l * l).sum::<f64>().sqrt())
}

/// Eigenvalues of `R^{−1/2} H P Hᵀ R^{−1/2}`, descending, clamped at zero.
pub fn observed_prior_eigenvalues(model: &LinearGaussianModel, prior_cov: &DMatrix<f64>) -> Result<Vec<f64>> {
    crate::model::linalg::ensure_shape(prior_cov, model.n_x(), model.n_x(), "observed prior")?;
    let chol = cholesky(model.r()).ok_or(Error::SingularR)?;
    // L⁻¹ H P Hᵀ L⁻ᵀ has the same spectrum as R^{−1/2} H P Hᵀ R^{−1/2}.
    let mut a = model.h() * prior_cov * model.h().transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut a);
    let mut b = a.transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut b);
    let spectrum = ClampedSpectrum::new(&symmetrize(&b))?;
    Ok(clamp_relative(spectrum.values.as_slice()))
}

fn clamp_relative(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(0.0, f64::max);
    values
        .iter()
        .map(|&v| if v < EIGEN_CLAMP * max { 0.0 } else { v })
        .collect()
}

/// Frobenius norm `‖P‖_F`.
pub fn tau_sys(p: &DMatrix<f64>) -> f64 {
    p.norm()
}

/// Smallest `ℓ` with `Σ_{j≤ℓ} αⱼ² ≥ (1 − κ) Σ αⱼ²`, eigenvalues taken in
/// descending order.
pub fn ell_sys(alphas: &[f64], kappa: f64) -> Result<usize> {
    if alphas.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    check_nonnegative(alphas)?;
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::InvalidParameter(format!("kappa must lie in [0, 1), got {kappa}")));
    }
    let mut sorted = clamp_relative(alphas);
    sorted.sort_by(|a, b| b.total_cmp(a));
    let squares: Vec<f64> = sorted.iter().map(|a| a * a).collect();
    let total: f64 = squares.iter().sum();
    if total == 0.0 {
        return Ok(0);
    }
    let target = (1.0 - kappa) * total;
    let mut cumulative = 0.0;
    for (l, sq) in squares.iter().enumerate() {
        cumulative += sq;
        // Tolerate rounding in the running sum so that exact ties land on the
        // smaller ℓ.
        if cumulative >= target * (1.0 - 4.0 * f64::EPSILON) {
            return Ok(l + 1);
        }
    }
    Ok(squares.len())
}

/// The five effective dimensions for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveDimensions {
    pub tau_squared: f64,
    pub tau_spf: f64,
    pub tau_spf_frobenius: f64,
    pub tau_sys: f64,
    pub ell_sys: usize,
    pub kappa: f64,
}

impl EffectiveDimensions {
    /// Observation-space quantities from `prior_cov` evaluated at `y`;
    /// system quantities from `state_cov`.
    pub fn compute(
        model: &LinearGaussianModel,
        prior_cov: &DMatrix<f64>,
        state_cov: &DMatrix<f64>,
        y: &DVector<f64>,
        kappa: f64,
    ) -> Result<Self> {
        model.check_observation(y, "effective dimensions")?;
        let lambdas = observed_prior_eigenvalues(model, prior_cov)?;
        // λ comes out in descending order; τ² pairs λⱼ with the matching
        // coordinate of y in that eigenbasis.
        let y_rotated = rotated_observation(model, prior_cov, y)?;
        let alphas = ClampedSpectrum::new(&symmetrize(state_cov))?;
        Ok(Self {
            tau_squared: tau_squared(&lambdas, &y_rotated)?,
            tau_spf: tau_spf(&lambdas)?,
            tau_spf_frobenius: tau_spf_frobenius(&lambdas)?,
            tau_sys: tau_sys(state_cov),
            ell_sys: ell_sys(alphas.values.as_slice(), kappa)?,
            kappa,
        })
    }
}

/// Coordinates of `R^{−1/2} y` in the eigenbasis of the observed prior
/// covariance, ordered like [`observed_prior_eigenvalues`].
fn rotated_observation(model: &LinearGaussianModel, prior_cov: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
    let chol = cholesky(model.r()).ok_or(Error::SingularR)?;
    let mut a = model.h() * prior_cov * model.h().transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut a);
    let mut b = a.transpose();
    chol.l_dirty().solve_lower_triangular_mut(&mut b);
    let spectrum = ClampedSpectrum::new(&symmetrize(&b))?;
    let mut white = y.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut white);
    Ok((spectrum.vectors.transpose() * white).iter().copied().collect())
}

/// Estimated `G` and the matching effective sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityEstimate {
    pub g: f64,
    pub n_eff: f64,
    pub sample_count: usize,
}

impl QualityEstimate {
    /// Attaches the effective size `nominal / G` for a filter of size
    /// `nominal`.
    pub fn with_nominal(self, nominal: usize) -> Self {
        Self {
            n_eff: nominal as f64 / self.g,
            ..self
        }
    }
}

/// `G = N Σ w̃ⱼ²` from unnormalized log-weights.
pub fn estimate_g(log_weights: &[f64]) -> Result<QualityEstimate> {
    if log_weights.len() < 2 {
        return Err(Error::TooFewMembers {
            needed: 2,
            found: log_weights.len(),
        });
    }
    let (w, _) = normalize_log_weights(log_weights)?;
    let n = w.len();
    let g = n as f64 * w.iter().map(|x| x * x).sum::<f64>();
    Ok(QualityEstimate {
        g,
        n_eff: n as f64 / g,
        sample_count: n,
    })
}

/// `((1+β)/√(1+2β))ⁿ`, evaluated in log space.
pub fn closed_form_g(beta: f64, n: usize) -> f64 {
    (n as f64 * ((1.0 + beta).ln() - 0.5 * (1.0 + 2.0 * beta).ln())).exp()
}

/// Second-order expansion `1 + β² n / 2`.
pub fn closed_form_g_second_order(beta: f64, n: usize) -> f64 {
    1.0 + 0.5 * beta * beta * n as f64
}

/// `(1/n) Σ (x̄ᵢ − xᵗᵢ)²`.
pub fn mse(mean: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if mean.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: mean.len(),
            right: truth.len(),
        });
    }
    if mean.is_empty() {
        return Err(Error::InvalidParameter("MSE needs at least one coordinate".into()));
    }
    Ok((mean - truth).norm_squared() / mean.len() as f64)
}

/// MSE with each coordinate's squared error divided by `variances[i]`.
pub fn normalized_mse(mean: &DVector<f64>, truth: &DVector<f64>, variances: &DVector<f64>) -> Result<f64> {
    if mean.len() != truth.len() || variances.len() != mean.len() {
        return Err(Error::LengthMismatch {
            left: mean.len(),
            right: truth.len().min(variances.len()),
        });
    }
    if mean.is_empty() {
        return Err(Error::InvalidParameter("MSE needs at least one coordinate".into()));
    }
    Ok(mean
        .iter()
        .zip(truth.iter())
        .zip(variances.iter())
        .map(|((m, t), v)| (m - t) * (m - t) / v)
        .sum::<f64>()
        / mean.len() as f64)
}

/// Predicted mean and variance of the normalized MSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsePrediction {
    pub mean: f64,
    pub variance: f64,
}

impl MsePrediction {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Mean `1 + (1+β)/N_e`, variance `2 (1 + N_e + β)² / (N_e² n_x)`.
pub fn predicted_mse_stats(beta: f64, ensemble_size: usize, n_x: usize) -> MsePrediction {
    let n_e = ensemble_size as f64;
    MsePrediction {
        mean: 1.0 + (1.0 + beta) / n_e,
        variance: 2.0 * (1.0 + n_e + beta).powi(2) / (n_e * n_e * n_x as f64),
    }
}
