//! The EnKF read as a particle filter.
//!
//! Each analysis member `xʲ_k = (I−KH)(M xʲ_{k−1} + ηʲ) + K(y + εʲ)` is a draw
//! from `N(μʲ, Σ)` with
//!
//! ```text
//! μʲ = (I − KH) M xʲ_{k−1} + K y
//! Σ  = (I − KH) Q (I − KH)ᵀ + K R Kᵀ
//! ```
//!
//! Attaching importance weights to those draws gives the smoothing weights.
//! Averaging the proposal over the previous ensemble gives a Gaussian
//! proposal for the filtering density, whose weights compare two quadratic
//! forms.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{dim_mismatch, Error, Result};
use crate::model::linalg::{cholesky, ensure_shape, standard_normal_matrix, symmetrize, ClampedSpectrum};
use crate::model::{schur_localize, Ensemble, Gaussian, GaussianDensity, LinearGaussianModel, LocalizationTaper};
use crate::particle::normalize_log_weights;

fn check_gain(gain: &DMatrix<f64>, model: &LinearGaussianModel, context: &'static str) -> Result<()> {
    ensure_shape(gain, model.n_x(), model.n_y(), context)
}

/// `I − K H`.
fn gain_complement(gain: &DMatrix<f64>, model: &LinearGaussianModel) -> DMatrix<f64> {
    let n = model.n_x();
    DMatrix::identity(n, n) - gain * model.h()
}

/// `(I − KH) Q (I − KH)ᵀ + K R Kᵀ`.
pub fn proposal_covariance(model: &LinearGaussianModel, gain: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_gain(gain, model, "EnKF proposal covariance")?;
    let a = gain_complement(gain, model);
    Ok(symmetrize(
        &(&a * model.q() * a.transpose() + gain * model.r() * gain.transpose()),
    ))
}

/// Proposal parameters for one member.
#[derive(Debug, Clone)]
pub struct EnkfProposalParams {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

pub fn enkf_proposal_params(
    prev_member: &DVector<f64>,
    model: &LinearGaussianModel,
    gain: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<EnkfProposalParams> {
    model.check_state(prev_member, "EnKF proposal")?;
    model.check_observation(y, "EnKF proposal")?;
    check_gain(gain, model, "EnKF proposal")?;
    let a = gain_complement(gain, model);
    Ok(EnkfProposalParams {
        mean: &a * model.m() * prev_member + gain * y,
        cov: proposal_covariance(model, gain)?,
        gain: gain.clone(),
    })
}

/// `prev_log_w + log N(x_k; M x_{k−1}, Q) + log N(y; H x_k, R) − log N(x_k; μ, Σ)`.
pub fn smoothing_log_weight(
    x_k: &DVector<f64>,
    x_prev: &DVector<f64>,
    y: &DVector<f64>,
    model: &LinearGaussianModel,
    params: &EnkfProposalParams,
    prev_log_w: f64,
) -> Result<f64> {
    model.check_state(x_k, "smoothing weight")?;
    model.check_state(x_prev, "smoothing weight")?;
    model.check_observation(y, "smoothing weight")?;
    let transition =
        GaussianDensity::new(model.m() * x_prev, model.q()).map_err(|_| Error::SingularQ)?;
    let likelihood = GaussianDensity::new(model.h() * x_k, model.r()).map_err(|_| Error::SingularR)?;
    let proposal = GaussianDensity::new(params.mean.clone(), &params.cov)
        .map_err(|_| Error::SingularProposalCovariance)?;
    Ok(prev_log_w + transition.log_pdf(x_k) + likelihood.log_pdf(y) - proposal.log_pdf(x_k))
}

/// Batched smoothing proposal and weights for a fixed gain and observation.
///
/// All three densities are factored once; per-member work is a few
/// triangular solves.
#[derive(Debug, Clone)]
pub struct SmoothingWeigher {
    /// `(I − KH) M`.
    prev_map: DMatrix<f64>,
    /// `K y`.
    shift: DVector<f64>,
    sigma_sqrt: DMatrix<f64>,
    proposal: GaussianDensity,
    transition: GaussianDensity,
    likelihood: GaussianDensity,
    m: DMatrix<f64>,
    h: DMatrix<f64>,
    y: DVector<f64>,
}

impl SmoothingWeigher {
    pub fn new(model: &LinearGaussianModel, gain: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        model.check_observation(y, "smoothing weigher")?;
        check_gain(gain, model, "smoothing weigher")?;
        let n = model.n_x();
        let sigma = proposal_covariance(model, gain)?;
        let sigma_chol = cholesky(&sigma).ok_or(Error::SingularProposalCovariance)?;
        let sigma_sqrt = sigma_chol.l();
        let proposal = GaussianDensity::new(DVector::zeros(n), &sigma)?;
        let transition =
            GaussianDensity::new(DVector::zeros(n), model.q()).map_err(|_| Error::SingularQ)?;
        let likelihood = GaussianDensity::new(DVector::zeros(model.n_y()), model.r())
            .map_err(|_| Error::SingularR)?;
        Ok(Self {
            prev_map: gain_complement(gain, model) * model.m(),
            shift: gain * y,
            sigma_sqrt,
            proposal,
            transition,
            likelihood,
            m: model.m().clone(),
            h: model.h().clone(),
            y: y.clone(),
        })
    }

    /// Proposal means `μʲ`, one column per previous member.
    pub fn means(&self, prev: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.prev_map * prev;
        for mut col in out.column_iter_mut() {
            col += &self.shift;
        }
        out
    }

    /// One proposal draw per column of `prev`.
    pub fn sample<R: Rng + ?Sized>(&self, prev: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
        self.means(prev) + &self.sigma_sqrt * standard_normal_matrix(self.shift.len(), prev.ncols(), rng)
    }

    /// Log-weight increments for draws `states` paired column-wise with `prev`.
    pub fn log_increment_columns(&self, states: &DMatrix<f64>, prev: &DMatrix<f64>) -> Vec<f64> {
        let trans = self
            .transition
            .log_pdf_columns(&(states - &self.m * prev));
        let mut resid = -(&self.h * states);
        for mut col in resid.column_iter_mut() {
            col += &self.y;
        }
        let lik = self.likelihood.log_pdf_columns(&resid);
        let prop = self.proposal.log_pdf_columns(&(states - self.means(prev)));
        trans
            .iter()
            .zip(&lik)
            .zip(&prop)
            .map(|((t, l), p)| t + l - p)
            .collect()
    }
}

/// Filtering-proposal covariance
/// `(I−KH) M P Mᵀ (I−KH)ᵀ + (I−KH) Q (I−KH)ᵀ + K R Kᵀ`, then localized.
pub fn enkf_filtering_proposal(
    prev_proposal_cov: &DMatrix<f64>,
    model: &LinearGaussianModel,
    gain: &DMatrix<f64>,
    taper: &LocalizationTaper,
) -> Result<DMatrix<f64>> {
    ensure_shape(prev_proposal_cov, model.n_x(), model.n_x(), "filtering proposal")?;
    check_gain(gain, model, "filtering proposal")?;
    let a = gain_complement(gain, model) * model.m();
    let propagated = &a * prev_proposal_cov * a.transpose();
    let cov = symmetrize(&(propagated + proposal_covariance(model, gain)?));
    schur_localize(&cov, taper)
}

/// `−½ (x−μ)ᵀ P⁻¹ (x−μ) + ½ (x−μ_E)ᵀ P_E⁻¹ (x−μ_E)`.
///
/// Log-determinant terms are shared by all members and left out.
pub fn filtering_log_weight(x: &DVector<f64>, target: &Gaussian, proposal: &Gaussian) -> Result<f64> {
    FilteringWeigher::new(target, proposal)?.log_weight(x)
}

/// Batched filtering weights against fixed target and proposal Gaussians.
#[derive(Debug, Clone)]
pub struct FilteringWeigher {
    target: GaussianDensity,
    proposal: GaussianDensity,
    proposal_mean: DVector<f64>,
    proposal_sqrt: DMatrix<f64>,
}

impl FilteringWeigher {
    pub fn new(target: &Gaussian, proposal: &Gaussian) -> Result<Self> {
        if target.dim() != proposal.dim() {
            return Err(dim_mismatch("filtering weight", target.dim(), proposal.dim()));
        }
        let target_density = GaussianDensity::new(target.mean().clone(), target.cov())?;
        let proposal_chol = cholesky(proposal.cov()).ok_or(Error::SingularCovariance)?;
        Ok(Self {
            target: target_density,
            proposal_sqrt: proposal_chol.l(),
            proposal: GaussianDensity::new(proposal.mean().clone(), proposal.cov())?,
            proposal_mean: proposal.mean().clone(),
        })
    }

    pub fn log_weight(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.proposal_mean.len() {
            return Err(dim_mismatch("filtering weight", self.proposal_mean.len(), x.len()));
        }
        Ok(-0.5 * self.target.mahalanobis_sq(&(x - self.target.mean()))
            + 0.5 * self.proposal.mahalanobis_sq(&(x - &self.proposal_mean)))
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let n = self.proposal_mean.len();
        let mut out = &self.proposal_sqrt * standard_normal_matrix(n, count, rng);
        for mut col in out.column_iter_mut() {
            col += &self.proposal_mean;
        }
        out
    }

    pub fn log_weight_columns(&self, states: &DMatrix<f64>) -> Vec<f64> {
        let centred = |mean: &DVector<f64>| {
            let mut d = states.clone();
            for mut col in d.column_iter_mut() {
                col -= mean;
            }
            d
        };
        let t = self.target.mahalanobis_sq_columns(centred(self.target.mean()));
        let p = self.proposal.mahalanobis_sq_columns(centred(&self.proposal_mean));
        t.iter().zip(&p).map(|(a, b)| -0.5 * a + 0.5 * b).collect()
    }
}

/// Proposal `N(μ, (1+β) P)` around the reference `N(μ, P)`.
#[derive(Debug, Clone)]
pub struct BetaPerturbation {
    beta: f64,
    reference: Gaussian,
}

impl BetaPerturbation {
    pub fn new(beta: f64, reference: Gaussian) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be nonnegative, got {beta}")));
        }
        Ok(Self { beta, reference })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn reference(&self) -> &Gaussian {
        &self.reference
    }

    /// `√(β / (1+β))`.
    fn scale(&self) -> f64 {
        (self.beta / (1.0 + self.beta)).sqrt()
    }

    /// The perturbed proposal `N(μ, (1+β) P)`.
    pub fn proposal(&self) -> Result<Gaussian> {
        Gaussian::new(
            self.reference.mean().clone(),
            self.reference.cov() * (1.0 + self.beta),
        )
    }
}

/// `β = c / √N_e`.
pub fn beta_from_ensemble_size(ensemble_size: usize, constant: f64) -> f64 {
    constant / (ensemble_size as f64).sqrt()
}

/// Log-weight `−½ sᵀs` with `s = √(β/(1+β)) P^{−1/2} (x − μ)`.
///
/// This is the filtering weight for the proposal `N(μ, (1+β)P)` with the
/// constant dropped; draws far from `μ` are down-weighted.
pub fn simplified_beta_log_weight(x: &DVector<f64>, pert: &BetaPerturbation) -> Result<f64> {
    let reference = pert.reference();
    if x.len() != reference.dim() {
        return Err(dim_mismatch("beta weight", reference.dim(), x.len()));
    }
    let chol = cholesky(reference.cov()).ok_or(Error::SingularCovariance)?;
    let mut s = x - reference.mean();
    chol.l_dirty().solve_lower_triangular_mut(&mut s);
    s *= pert.scale();
    Ok(-0.5 * s.norm_squared())
}

/// As [`simplified_beta_log_weight`] with `P` replaced by its eigen-truncation:
/// eigenvalues at or below `rank_threshold · λ_max` are dropped and the
/// pseudo-inverse square root is used on the rest.
pub fn simplified_beta_log_weight_pseudo(
    x: &DVector<f64>,
    pert: &BetaPerturbation,
    rank_threshold: f64,
) -> Result<f64> {
    let reference = pert.reference();
    if x.len() != reference.dim() {
        return Err(dim_mismatch("beta weight", reference.dim(), x.len()));
    }
    let spectrum = ClampedSpectrum::new(reference.cov())?;
    let cutoff = rank_threshold * spectrum.largest();
    let d = x - reference.mean();
    let coords = spectrum.vectors.transpose() * d;
    let quad: f64 = spectrum
        .values
        .iter()
        .zip(coords.iter())
        .filter(|(lambda, _)| **lambda > cutoff && **lambda > 0.0)
        .map(|(lambda, c)| c * c / lambda)
        .sum();
    Ok(-0.5 * pert.scale().powi(2) * quad)
}

/// Log-sum-exp over a sorted copy, so the result does not depend on the
/// order of `values`.
fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(normalize_log_weights(&sorted)?.1)
}

/// `log p(y|x_k) + logΣ_j N(x_k; M xʲ_{k−1}, Q) − logΣ_j N(x_k; μʲ, Σ)`.
///
/// The `1/N_e` mixture weights cancel between numerator and denominator.
pub fn marginal_approx_log_weight(
    x_k: &DVector<f64>,
    prev: &Ensemble,
    model: &LinearGaussianModel,
    y: &DVector<f64>,
    gain: &DMatrix<f64>,
) -> Result<f64> {
    Ok(MarginalWeigher::new(prev, model, gain, y)?.log_weight_columns(&DMatrix::from_column_slice(
        x_k.len(),
        1,
        x_k.as_slice(),
    ))?[0])
}

/// Batched mixture-ratio weights sharing one previous ensemble.
#[derive(Debug, Clone)]
pub struct MarginalWeigher {
    inner: SmoothingWeigher,
    forecast_means: DMatrix<f64>,
    proposal_means: DMatrix<f64>,
}

impl MarginalWeigher {
    pub fn new(
        prev: &Ensemble,
        model: &LinearGaussianModel,
        gain: &DMatrix<f64>,
        y: &DVector<f64>,
    ) -> Result<Self> {
        if prev.dim() != model.n_x() {
            return Err(dim_mismatch("marginal weight", model.n_x(), prev.dim()));
        }
        let inner = SmoothingWeigher::new(model, gain, y)?;
        Ok(Self {
            forecast_means: model.m() * prev.members(),
            proposal_means: inner.means(prev.members()),
            inner,
        })
    }

    /// Draws from the mixture proposal `(1/N_e) Σ_j N(μʲ, Σ)`, cycling
    /// through components in order.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> DMatrix<f64> {
        let n = self.proposal_means.nrows();
        let n_e = self.proposal_means.ncols();
        let means = DMatrix::from_fn(n, count, |i, j| self.proposal_means[(i, j % n_e)]);
        means + &self.inner.sigma_sqrt * standard_normal_matrix(n, count, rng)
    }

    pub fn log_weight_columns(&self, states: &DMatrix<f64>) -> Result<Vec<f64>> {
        let n_e = self.forecast_means.ncols();
        let mut out = Vec::with_capacity(states.ncols());
        let mut trans = vec![0.0; n_e];
        let mut prop = vec![0.0; n_e];
        for x in states.column_iter() {
            let x = x.clone_owned();
            for j in 0..n_e {
                trans[j] = self
                    .inner
                    .transition
                    .log_pdf(&(&x - self.forecast_means.column(j)));
                prop[j] = self
                    .inner
                    .proposal
                    .log_pdf(&(&x - self.proposal_means.column(j)));
            }
            let lik = self
                .inner
                .likelihood
                .log_pdf(&(&self.inner.y - &self.inner.h * &x));
            out.push(lik + log_sum_exp(&trans)? - log_sum_exp(&prop)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::{kalman_gain, kf_predict, kf_update, KalmanState};
    use crate::model::{log_normal_pdf, make_taper, TaperKind};
    use crate::particle::OptimalProposal;
    use crate::rng::seeded;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn v1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn g1(mean: f64, var: f64) -> Gaussian {
        Gaussian::new(v1(mean), s(var)).unwrap()
    }

    #[test]
    fn zero_gain_gives_transition() {
        let model = LinearGaussianModel::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 1.1]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
            s(0.3),
        )
        .unwrap();
        let prev = DVector::from_column_slice(&[0.4, -1.0]);
        let p = enkf_proposal_params(&prev, &model, &DMatrix::zeros(2, 1), &v1(2.0)).unwrap();
        assert_eq!(p.mean, model.m() * &prev);
        assert!((p.cov - model.q()).norm() < 1e-15);
    }

    #[test]
    fn scalar_proposal_by_hand() {
        let model = LinearGaussianModel::canonical(1);
        let p = enkf_proposal_params(&v1(0.0), &model, &s(2.0 / 3.0), &v1(1.5)).unwrap();
        assert_relative_eq!(p.mean[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.cov[(0, 0)], 5.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn full_gain_leaves_observation_noise() {
        let r = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.7]);
        let model = LinearGaussianModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]),
            r.clone(),
        )
        .unwrap();
        let p = enkf_proposal_params(&DVector::zeros(2), &model, &DMatrix::identity(2, 2), &DVector::zeros(2))
            .unwrap();
        assert!((p.cov - r).norm() < 1e-15);
    }

    #[test]
    fn gain_shape_checked() {
        let model = LinearGaussianModel::canonical(2);
        assert!(matches!(
            enkf_proposal_params(&DVector::zeros(2), &model, &DMatrix::zeros(1, 2), &DVector::zeros(2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn covariance_rebuilt_from_stored_gain() {
        let model = LinearGaussianModel::canonical(3);
        let k = DMatrix::from_fn(3, 3, |i, j| 0.1 * (i + 2 * j) as f64);
        let p = enkf_proposal_params(&DVector::zeros(3), &model, &k, &DVector::zeros(3)).unwrap();
        let a = DMatrix::identity(3, 3) - &p.gain * model.h();
        let rebuilt = &a * model.q() * a.transpose() + &p.gain * model.r() * p.gain.transpose();
        assert!((rebuilt - p.cov).amax() < 1e-12);
    }

    #[test]
    fn smoothing_weight_by_hand() {
        let model = LinearGaussianModel::canonical(1);
        let params = enkf_proposal_params(&v1(0.0), &model, &s(2.0 / 3.0), &v1(1.5)).unwrap();
        let lw = smoothing_log_weight(&v1(1.0), &v1(0.0), &v1(1.5), &model, &params, 0.0).unwrap();
        let expected = log_normal_pdf(1.0, 0.0, 1.0) + log_normal_pdf(1.5, 1.0, 1.0)
            - log_normal_pdf(1.0, 1.0, 5.0 / 9.0);
        assert_relative_eq!(lw, expected, epsilon = 1e-14);
        assert_relative_eq!(lw.exp(), 0.1592, epsilon = 1e-4);

        let shifted = smoothing_log_weight(&v1(1.0), &v1(0.0), &v1(1.5), &model, &params, 3.25).unwrap();
        assert_eq!(shifted - lw, 3.25);
    }

    #[test]
    fn matched_gain_reproduces_optimal_increment() {
        // In the scalar canonical case K = 1/2 gives Σ = 1/2 and μ = (x + y)/2.
        let model = LinearGaussianModel::canonical(1);
        let y = v1(0.8);
        let mut rng = seeded(11);
        for _ in 0..10 {
            let prev: f64 = StandardNormal.sample(&mut rng);
            let xk: f64 = StandardNormal.sample(&mut rng);
            let params = enkf_proposal_params(&v1(prev), &model, &s(0.5), &y).unwrap();
            let lw = smoothing_log_weight(&v1(xk), &v1(prev), &y, &model, &params, 0.0).unwrap();
            let opt = OptimalProposal::new(&model, &y).unwrap().log_increment(&v1(prev));
            assert_relative_eq!(lw, opt, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_gain_matches_standard_increment() {
        let model = LinearGaussianModel::canonical(2);
        let y = DVector::from_column_slice(&[0.3, -0.7]);
        let prev = DMatrix::from_column_slice(2, 3, &[0.0, 1.0, -1.0, 0.5, 2.0, 2.0]);
        let w = SmoothingWeigher::new(&model, &DMatrix::zeros(2, 2), &y).unwrap();
        let states = w.sample(&prev, &mut seeded(2));
        let inc = w.log_increment_columns(&states, &prev);
        let lik = GaussianDensity::new(DVector::zeros(2), model.r()).unwrap();
        for (j, got) in inc.iter().enumerate() {
            let expected = lik.log_pdf(&(&y - states.column(j)));
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_smoothing_agrees_with_single() {
        let model = LinearGaussianModel::canonical(3);
        let y = DVector::from_column_slice(&[0.3, -0.7, 1.2]);
        let k = DMatrix::identity(3, 3) * 0.45 + DMatrix::from_element(3, 3, 0.02);
        let prev = standard_normal_matrix(3, 5, &mut seeded(1));
        let w = SmoothingWeigher::new(&model, &k, &y).unwrap();
        let states = w.sample(&prev, &mut seeded(2));
        let batch = w.log_increment_columns(&states, &prev);
        for j in 0..5 {
            let xp = prev.column(j).clone_owned();
            let params = enkf_proposal_params(&xp, &model, &k, &y).unwrap();
            let single =
                smoothing_log_weight(&states.column(j).clone_owned(), &xp, &y, &model, &params, 0.0).unwrap();
            assert_relative_eq!(batch[j], single, epsilon = 1e-11);
        }
    }

    #[test]
    fn filtering_proposal_examples() {
        let model = LinearGaussianModel::scaled_identity(2, 0.9, 1.0, 0.5, 1.0).unwrap();
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let ones = make_taper(TaperKind::AllOnes, 2).unwrap();
        let out = enkf_filtering_proposal(&p, &model, &DMatrix::zeros(2, 2), &ones).unwrap();
        let expected = model.m() * &p * model.m().transpose() + model.q();
        assert!((out - expected).norm() < 1e-14);

        let canon = LinearGaussianModel::canonical(1);
        let one = make_taper(TaperKind::AllOnes, 1).unwrap();
        let out = enkf_filtering_proposal(&s(2.0 / 3.0), &canon, &s(2.0 / 3.0), &one).unwrap();
        assert_relative_eq!(out[(0, 0)], 0.62963, epsilon = 1e-5);
        assert_relative_eq!(out[(0, 0)], 17.0 / 27.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_gain_propagates_kalman_covariance() {
        let model = LinearGaussianModel::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.1, 0.4]),
            s(0.3),
        )
        .unwrap();
        let prev = Gaussian::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.8]),
        )
        .unwrap();
        let forecast = kf_predict(&KalmanState::new(prev.clone(), 0), &model).unwrap();
        let k = kalman_gain(forecast.cov(), &model).unwrap();
        let post = kf_update(&forecast, &model, &v1(0.0)).unwrap();
        let ones = make_taper(TaperKind::AllOnes, 2).unwrap();
        let out = enkf_filtering_proposal(prev.cov(), &model, &k, &ones).unwrap();
        assert!((out - post.cov()).norm() < 1e-10);
    }

    #[test]
    fn filtering_weight_examples() {
        let target = g1(0.0, 1.0);
        assert_relative_eq!(
            filtering_log_weight(&v1(1.0), &target, &g1(0.0, 2.0)).unwrap(),
            -0.25,
            epsilon = 1e-15
        );
        for x in [-3.0, 0.2, 5.0] {
            assert_eq!(filtering_log_weight(&v1(x), &target, &target).unwrap(), 0.0);
        }
        let a = g1(1.5, 0.3);
        let b = g1(1.5, 7.0);
        assert_eq!(filtering_log_weight(&v1(1.5), &a, &b).unwrap(), 0.0);
        assert!(matches!(
            filtering_log_weight(&v1(0.0), &g1(0.0, 0.0), &target),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn beta_weight_examples() {
        let zero = BetaPerturbation::new(0.0, g1(0.0, 1.0)).unwrap();
        assert_eq!(simplified_beta_log_weight(&v1(4.0), &zero).unwrap(), 0.0);
        let pert = BetaPerturbation::new(0.1, g1(0.0, 1.0)).unwrap();
        assert_relative_eq!(
            simplified_beta_log_weight(&v1(2.0), &pert).unwrap(),
            -0.5 * (0.1 / 1.1) * 4.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(simplified_beta_log_weight(&v1(2.0), &pert).unwrap(), -0.18182, epsilon = 1e-5);
        assert!(BetaPerturbation::new(-0.1, g1(0.0, 1.0)).is_err());
    }

    #[test]
    fn beta_weight_matches_filtering_weight_up_to_constant() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.0, 0.2, 0.1, 0.2, 0.6]);
        let mean = DVector::from_column_slice(&[0.5, -1.0, 2.0]);
        let reference = Gaussian::new(mean.clone(), cov.clone()).unwrap();
        let pert = BetaPerturbation::new(0.3, reference.clone()).unwrap();
        let proposal = pert.proposal().unwrap();
        let mut rng = seeded(5);
        let diffs: Vec<f64> = (0..100)
            .map(|_| {
                let x = &mean + standard_normal_matrix(3, 1, &mut rng).column(0) * 2.0;
                simplified_beta_log_weight(&x, &pert).unwrap()
                    - filtering_log_weight(&x, &reference, &proposal).unwrap()
            })
            .collect();
        let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 1e-10, "spread {}", hi - lo);
    }

    #[test]
    fn s_has_covariance_beta() {
        let beta = 0.25;
        let n = 2;
        let reference = Gaussian::new(DVector::zeros(n), DMatrix::identity(n, n) * 3.0).unwrap();
        let pert = BetaPerturbation::new(beta, reference).unwrap();
        let draws = pert.proposal().unwrap().sample(100_000, &mut seeded(9)).unwrap();
        let scale = (beta / (1.0 + beta)).sqrt() / 3f64.sqrt();
        let s = draws.members() * scale;
        let cov = &s * s.transpose() / s.ncols() as f64;
        // Sample variance of a N(0, β) variable has sd β·√(2/N).
        let band = 3.0 * beta * (2.0 / 100_000f64).sqrt();
        for i in 0..n {
            assert!((cov[(i, i)] - beta).abs() < band, "var {}", cov[(i, i)]);
        }
        assert!(cov[(0, 1)].abs() < 3.0 * beta / (100_000f64).sqrt());
    }

    #[test]
    fn pseudo_inverse_variant() {
        let full = BetaPerturbation::new(
            0.2,
            Gaussian::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap(),
        )
        .unwrap();
        let x = DVector::from_column_slice(&[1.0, -2.0]);
        assert_relative_eq!(
            simplified_beta_log_weight_pseudo(&x, &full, 0.0).unwrap(),
            simplified_beta_log_weight(&x, &full).unwrap(),
            epsilon = 1e-12
        );

        let rank_one = BetaPerturbation::new(
            0.2,
            Gaussian::new(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0])))
                .unwrap(),
        )
        .unwrap();
        let null = DVector::from_column_slice(&[0.0, 5.0]);
        assert_eq!(simplified_beta_log_weight_pseudo(&null, &rank_one, 0.0).unwrap(), 0.0);

        let tiny = BetaPerturbation::new(
            0.2,
            Gaussian::new(DVector::zeros(2), DMatrix::from_diagonal(&DVector::from_column_slice(&[4.0, 1e-16])))
                .unwrap(),
        )
        .unwrap();
        let x = DVector::from_column_slice(&[2.0, 3.0]);
        let expected = -0.5 * (0.2 / 1.2) * (4.0 / 4.0);
        assert_relative_eq!(
            simplified_beta_log_weight_pseudo(&x, &tiny, 1e-8).unwrap(),
            expected,
            epsilon = 1e-14
        );
    }

    #[test]
    fn single_member_mixture_is_smoothing_ratio() {
        let model = LinearGaussianModel::canonical(1);
        let y = v1(1.5);
        let k = s(2.0 / 3.0);
        let prev = Ensemble::new(DMatrix::from_element(1, 4, 0.3), 0).unwrap();
        let params = enkf_proposal_params(&v1(0.3), &model, &k, &y).unwrap();
        for x in [-1.0, 0.4, 2.2] {
            let marginal = marginal_approx_log_weight(&v1(x), &prev, &model, &y, &k).unwrap();
            let smoothing = smoothing_log_weight(&v1(x), &v1(0.3), &y, &model, &params, 0.0).unwrap();
            assert!((marginal - smoothing).abs() < 1e-12);
        }
    }

    #[test]
    fn two_member_mixture_by_direct_summation() {
        let model = LinearGaussianModel::canonical(1);
        let y = v1(0.5);
        let k = s(0.4);
        let prev = Ensemble::new(DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]), 0).unwrap();
        let got = marginal_approx_log_weight(&v1(0.0), &prev, &model, &y, &k).unwrap();
        let pdf = |x: f64, m: f64, v: f64| log_normal_pdf(x, m, v).exp();
        let sigma = 0.6 * 0.6 + 0.4 * 0.4;
        let num = 0.5 * (pdf(0.0, -1.0, 1.0) + pdf(0.0, 1.0, 1.0));
        let den = 0.5 * (pdf(0.0, 0.6 * -1.0 + 0.2, sigma) + pdf(0.0, 0.6 + 0.2, sigma));
        let expected = log_normal_pdf(0.5, 0.0, 1.0) + num.ln() - den.ln();
        assert_relative_eq!(got, expected, epsilon = 1e-13);
    }

    #[test]
    fn marginal_weight_ignores_member_order() {
        let model = LinearGaussianModel::canonical(2);
        let y = DVector::from_column_slice(&[0.1, 0.9]);
        let k = DMatrix::identity(2, 2) * 0.5;
        let a = standard_normal_matrix(2, 6, &mut seeded(3));
        let mut b = a.clone();
        b.swap_columns(0, 5);
        b.swap_columns(1, 3);
        let x = DVector::from_column_slice(&[0.4, -0.2]);
        let wa = marginal_approx_log_weight(&x, &Ensemble::new(a, 0).unwrap(), &model, &y, &k).unwrap();
        let wb = marginal_approx_log_weight(&x, &Ensemble::new(b, 0).unwrap(), &model, &y, &k).unwrap();
        assert_eq!(wa, wb);
    }

    #[test]
    fn beta_from_size() {
        assert_relative_eq!(beta_from_ensemble_size(50, 1.0), 1.0 / 50f64.sqrt());
        assert_eq!(beta_from_ensemble_size(4, 2.0), 1.0);
    }
}
