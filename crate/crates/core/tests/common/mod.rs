#![allow(dead_code)]

use collapselab::{Gaussian, LinearGaussianModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `A Aᵀ + 0.1 I`, comfortably positive definite.
pub fn random_spd<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = normal_matrix(n, n, rng);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

pub struct RandomCase {
    pub model: LinearGaussianModel,
    pub prior: Gaussian,
    pub y: DVector<f64>,
}

pub fn random_case<R: Rng>(rng: &mut R) -> RandomCase {
    let n_x = rng.random_range(1..=5);
    let n_y = rng.random_range(1..=5);
    let model = LinearGaussianModel::new(
        normal_matrix(n_x, n_x, rng),
        normal_matrix(n_y, n_x, rng),
        random_spd(n_x, rng),
        random_spd(n_y, rng),
    )
    .unwrap();
    let prior = Gaussian::new(normal_matrix(n_x, 1, rng).column(0).into(), random_spd(n_x, rng)).unwrap();
    let y = normal_matrix(n_y, 1, rng).column(0).into();
    RandomCase { model, prior, y }
}

/// Builds the joint law of `(x_k, y_k)` from `x_{k-1} ~ prior` and conditions
/// on `y_k` with an explicit inverse of the marginal `y` covariance.
pub fn joint_conditioning(case: &RandomCase) -> (DVector<f64>, DMatrix<f64>) {
    let RandomCase { model, prior, y } = case;
    let (m, h, q, r) = (model.m(), model.h(), model.q(), model.r());
    let mean_x = m * prior.mean();
    let cov_xx = m * prior.cov() * m.transpose() + q;
    let mean_y = h * &mean_x;
    let cov_xy = &cov_xx * h.transpose();
    let cov_yy = h * &cov_xx * h.transpose() + r;
    let inv = cov_yy.try_inverse().expect("invertible");
    let mean = &mean_x + &cov_xy * &inv * (y - mean_y);
    let cov = &cov_xx - &cov_xy * &inv * cov_xy.transpose();
    (mean, cov)
}

/// Least-squares slope of `ys` on `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
