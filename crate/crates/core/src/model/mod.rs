//! Linear-Gaussian state-space model, Gaussians, ensembles, and covariance
//! surgery.
//!
//! The model is
//!
//! ```text
//! x_k = M x_{k-1} + η_k,   η_k ~ N(0, Q)
//! y_k = H x_k     + ε_k,   ε_k ~ N(0, R)
//! ```

mod ensemble;
mod gaussian;
pub mod linalg;
mod taper;

pub use ensemble::{Ensemble, WeightedEnsemble};
pub use gaussian::{log_normal_pdf, sample_gaussian, Gaussian, GaussianDensity};
pub use linalg::{square_root_factor, ClampedSpectrum};
pub use taper::{
    compact_support_correlation, inflate, make_taper, schur_localize, LocalizationTaper, TaperKind,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{dim_mismatch, Error, Result};
use linalg::{check_symmetric, ensure_len, ensure_shape, standard_normal_matrix};

/// The quadruple `(M, H, Q, R)`.
///
/// `Q` and `R` must be symmetric positive semidefinite. Operations that need
/// an invertible noise covariance (the optimal proposal, densities of the
/// transition) report that at the point of use.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    m: DMatrix<f64>,
    h: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    q_sqrt: DMatrix<f64>,
    r_sqrt: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(m: DMatrix<f64>, h: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n_x = m.nrows();
        if n_x == 0 || m.ncols() != n_x {
            return Err(dim_mismatch(
                "dynamics M",
                "nonempty square matrix",
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        let n_y = h.nrows();
        if n_y == 0 {
            return Err(dim_mismatch("observation operator H", "at least one row", 0));
        }
        ensure_shape(&h, n_y, n_x, "observation operator H")?;
        ensure_shape(&q, n_x, n_x, "model-error covariance Q")?;
        ensure_shape(&r, n_y, n_y, "observation-error covariance R")?;
        check_symmetric(&q)?;
        check_symmetric(&r)?;
        let q_sqrt = square_root_factor(&q)?;
        let r_sqrt = square_root_factor(&r)?;
        Ok(Self {
            m,
            h,
            q,
            r,
            q_sqrt,
            r_sqrt,
        })
    }

    /// `M = H = Q = R = I_n`.
    pub fn canonical(n: usize) -> Self {
        let i = DMatrix::identity(n, n);
        Self {
            m: i.clone(),
            h: i.clone(),
            q: i.clone(),
            r: i.clone(),
            q_sqrt: i.clone(),
            r_sqrt: i,
        }
    }

    /// `M = mI`, `H = hI`, `Q = qI`, `R = rI` in dimension `n`.
    pub fn scaled_identity(n: usize, m: f64, h: f64, q: f64, r: f64) -> Result<Self> {
        let i = DMatrix::<f64>::identity(n, n);
        Self::new(&i * m, &i * h, &i * q, &i * r)
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// Square-root factor of `Q`.
    pub fn q_sqrt(&self) -> &DMatrix<f64> {
        &self.q_sqrt
    }

    /// Square-root factor of `R`.
    pub fn r_sqrt(&self) -> &DMatrix<f64> {
        &self.r_sqrt
    }

    pub fn n_x(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.h.nrows()
    }

    pub(crate) fn check_state(&self, x: &DVector<f64>, context: &'static str) -> Result<()> {
        ensure_len(x, self.n_x(), context)
    }

    pub(crate) fn check_observation(&self, y: &DVector<f64>, context: &'static str) -> Result<()> {
        ensure_len(y, self.n_y(), context)
    }
}

/// A simulated truth trajectory and its observations.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `x^t_0, ..., x^t_K`.
    pub states: Vec<DVector<f64>>,
    /// `y_1, ..., y_K`.
    pub observations: Vec<DVector<f64>>,
}

/// Draws `x^t_0 ~ x0` and runs the model forward `steps` times, observing
/// each new state.
pub fn simulate_truth<R: Rng + ?Sized>(
    model: &LinearGaussianModel,
    x0: &Gaussian,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    if x0.dim() != model.n_x() {
        return Err(dim_mismatch("initial condition", model.n_x(), x0.dim()));
    }
    let mut state = x0.sample(1, rng)?.member(0);
    let mut states = Vec::with_capacity(steps + 1);
    let mut observations = Vec::with_capacity(steps);
    states.push(state.clone());
    for _ in 0..steps {
        let eta = model.q_sqrt() * standard_normal_matrix(model.n_x(), 1, rng).column(0);
        state = model.m() * &state + eta;
        let eps = model.r_sqrt() * standard_normal_matrix(model.n_y(), 1, rng).column(0);
        observations.push(model.h() * &state + eps);
        states.push(state.clone());
    }
    Ok(Trajectory {
        states,
        observations,
    })
}
