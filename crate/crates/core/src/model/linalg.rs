//! Covariance surgery: symmetry checks, square-root factors, clamped spectra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_mismatch, Error, Result};

/// Relative element-wise tolerance for symmetry, measured against the
/// largest absolute entry.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues below `-INDEFINITE_TOL * λ_max` are rejected.
pub const INDEFINITE_TOL: f64 = 1e-10;
/// Eigenvalues below `CLAMP_TOL * λ_max` are treated as zero.
pub const CLAMP_TOL: f64 = 1e-12;

pub(crate) fn ensure_square(a: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(dim_mismatch(
            context,
            "square matrix",
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    Ok(())
}

pub(crate) fn ensure_shape(
    a: &DMatrix<f64>,
    rows: usize,
    cols: usize,
    context: &'static str,
) -> Result<()> {
    if a.shape() != (rows, cols) {
        return Err(dim_mismatch(
            context,
            format!("{rows}x{cols}"),
            format!("{}x{}", a.nrows(), a.ncols()),
        ));
    }
    Ok(())
}

pub(crate) fn ensure_len(v: &DVector<f64>, len: usize, context: &'static str) -> Result<()> {
    if v.len() != len {
        return Err(dim_mismatch(context, len, v.len()));
    }
    Ok(())
}

/// Largest `|a_ij - a_ji|` over the matrix.
pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    ensure_square(a, "symmetry check")?;
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL * a.amax() {
        return Err(Error::NotSymmetric {
            max_asymmetry: asym,
        });
    }
    Ok(())
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and tiny or slightly negative values clamped to zero.
#[derive(Debug, Clone)]
pub struct ClampedSpectrum {
    pub values: DVector<f64>,
    /// Columns are the eigenvectors matching `values`.
    pub vectors: DMatrix<f64>,
}

impl ClampedSpectrum {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(a)?;
        let n = a.nrows();
        if n == 0 {
            return Ok(Self {
                values: DVector::zeros(0),
                vectors: DMatrix::zeros(0, 0),
            });
        }
        let eig = SymmetricEigen::new(a.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        let scale = max.max(0.0);
        if min < -INDEFINITE_TOL * scale || (scale == 0.0 && min < 0.0) {
            return Err(Error::IndefiniteBeyondTolerance {
                min_eigenvalue: min,
                max_eigenvalue: max,
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let values = DVector::from_iterator(
            n,
            order.iter().map(|&i| {
                let v = eig.eigenvalues[i];
                if v < CLAMP_TOL * scale {
                    0.0
                } else {
                    v
                }
            }),
        );
        let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Self { values, vectors })
    }

    pub fn largest(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Factor `L` with `L Lᵀ = cov`.
///
/// Tries a Cholesky factorization first and falls back to `V diag(√λ)` from
/// the clamped eigen-decomposition, so rank-deficient covariances (including
/// the zero matrix) are accepted.
pub fn square_root_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(cov)?;
    if let Some(chol) = Cholesky::new(cov.clone()) {
        return Ok(chol.l());
    }
    let spec = ClampedSpectrum::new(cov)?;
    let mut factor = spec.vectors;
    for (j, mut col) in factor.column_iter_mut().enumerate() {
        col *= spec.values[j].sqrt();
    }
    Ok(factor)
}

/// Cholesky factorization of a symmetric positive-definite matrix, or `None`.
pub(crate) fn cholesky(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone())
}

/// Matrix of independent standard-normal draws, filled column by column.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    z
}

/// Frobenius norm of `A - B`.
pub fn frobenius_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm()
}
