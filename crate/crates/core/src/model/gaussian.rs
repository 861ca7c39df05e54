use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use super::ensemble::Ensemble;
use super::linalg::{
    check_symmetric, ensure_len, ensure_square, square_root_factor, standard_normal_matrix,
};
use crate::error::{dim_mismatch, Error, Result};

/// Multivariate normal distribution `N(mean, cov)` with a cached square-root
/// factor of the covariance.
///
/// The covariance only needs to be positive semidefinite, so point masses and
/// rank-deficient distributions are representable. Density evaluation goes
/// through [`GaussianDensity`], which requires a positive-definite covariance.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        ensure_square(&cov, "Gaussian covariance")?;
        if cov.nrows() != mean.len() {
            return Err(dim_mismatch("Gaussian covariance", mean.len(), cov.nrows()));
        }
        check_symmetric(&cov)?;
        let factor = square_root_factor(&cov)?;
        Ok(Self { mean, cov, factor })
    }

    /// `N(0, I_n)`.
    pub fn standard(n: usize) -> Self {
        Self {
            mean: DVector::zeros(n),
            cov: DMatrix::identity(n, n),
            factor: DMatrix::identity(n, n),
        }
    }

    /// Point mass at `mean`.
    pub fn point_mass(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: DMatrix::zeros(n, n),
            factor: DMatrix::zeros(n, n),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Square-root factor `L` with `L Lᵀ = cov`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Ensemble> {
        sample_gaussian(self, count, rng)
    }

    pub fn density(&self) -> Result<GaussianDensity> {
        GaussianDensity::new(self.mean.clone(), &self.cov)
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        ensure_len(x, self.dim(), "Gaussian log density")?;
        Ok(self.density()?.log_pdf(x))
    }
}

/// Draws `count` members `mean + L z` with `z ~ N(0, I)`.
pub fn sample_gaussian<R: Rng + ?Sized>(g: &Gaussian, count: usize, rng: &mut R) -> Result<Ensemble> {
    if count == 0 {
        return Err(Error::TooFewMembers {
            needed: 1,
            found: 0,
        });
    }
    let z = standard_normal_matrix(g.dim(), count, rng);
    let mut members = &g.factor * z;
    for mut col in members.column_iter_mut() {
        col += &g.mean;
    }
    Ensemble::new(members, 0)
}

/// Log-density evaluator for a Gaussian with positive-definite covariance.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GaussianDensity {
    /// Fails with [`Error::SingularCovariance`] when `cov` is not positive definite.
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        ensure_square(cov, "Gaussian density")?;
        if cov.nrows() != mean.len() {
            return Err(dim_mismatch("Gaussian density", mean.len(), cov.nrows()));
        }
        let chol = Cholesky::new(cov.clone()).ok_or(Error::SingularCovariance)?;
        let n = mean.len() as f64;
        let log_norm = -0.5 * (n * (2.0 * PI).ln() + chol.ln_determinant());
        Ok(Self {
            mean,
            chol,
            log_norm,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `-½ (n log 2π + log det Σ)`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    /// `dᵀ Σ⁻¹ d` for a deviation `d` from the mean.
    pub fn mahalanobis_sq(&self, deviation: &DVector<f64>) -> f64 {
        let mut z = deviation.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut z);
        z.norm_squared()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        self.log_norm - 0.5 * self.mahalanobis_sq(&(x - &self.mean))
    }

    /// Column-wise `dᵀ Σ⁻¹ d`, consuming the matrix of deviations.
    pub fn mahalanobis_sq_columns(&self, mut deviations: DMatrix<f64>) -> Vec<f64> {
        self.chol.l_dirty().solve_lower_triangular_mut(&mut deviations);
        deviations.column_iter().map(|c| c.norm_squared()).collect()
    }

    /// Column-wise log density of `points`.
    pub fn log_pdf_columns(&self, points: &DMatrix<f64>) -> Vec<f64> {
        let mut dev = points.clone();
        for mut col in dev.column_iter_mut() {
            col -= &self.mean;
        }
        self.mahalanobis_sq_columns(dev)
            .into_iter()
            .map(|m| self.log_norm - 0.5 * m)
            .collect()
    }
}

/// Scalar normal log density.
pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}
