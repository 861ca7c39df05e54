//! Sequential importance sampling with the standard and optimal proposals.
//!
//! Weights live in log space from start to finish. Normalization uses
//! max-subtraction, and resampling is systematic and runs only when the
//! caller asks for it.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::enkf::{ensemble_mean_cov, enkf_gain, EnkfConfig};
use crate::error::{dim_mismatch, Error, Result};
use crate::model::linalg::{cholesky, standard_normal_matrix, symmetrize};
use crate::model::{Ensemble, GaussianDensity, LinearGaussianModel, WeightedEnsemble};
use crate::pf_enkf::SmoothingWeigher;

/// Choice of the one-step proposal `π_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    /// Transition density `p(x_k | x_{k-1})`.
    Standard,
    /// `p(x_k | x_{k-1}, y_k)`.
    Optimal,
    /// EnKF analysis draw `N(μʲ, Σ)` (see [`crate::pf_enkf`]).
    Enkf,
}

impl fmt::Display for ProposalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProposalKind::Standard => "standard",
            ProposalKind::Optimal => "optimal",
            ProposalKind::Enkf => "enkf",
        })
    }
}

impl FromStr for ProposalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "standard" => Ok(ProposalKind::Standard),
            "optimal" => Ok(ProposalKind::Optimal),
            "enkf" => Ok(ProposalKind::Enkf),
            other => Err(Error::Config(format!("unknown proposal `{other}`"))),
        }
    }
}

/// Normalized weights and `log Σ exp(log_w)`.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<(Vec<f64>, f64)> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::AllWeightsZero);
    }
    let mut weights: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok((weights, max + sum.ln()))
}

/// Systematic resampling: one uniform offset, `N_e` evenly spaced pointers
/// into the cumulative weights.
pub fn resample<R: Rng + ?Sized>(we: &WeightedEnsemble, rng: &mut R) -> Result<Ensemble> {
    let n = we.size();
    let indices = systematic_indices(&normalize_log_weights(we.log_weights())?.0, n, rng);
    let src = we.ensemble().members();
    let members = DMatrix::from_fn(src.nrows(), n, |i, j| src[(i, indices[j])]);
    Ensemble::new(members, we.ensemble().time_index())
}

/// Indices selected by systematic resampling of normalized `weights`.
pub fn systematic_indices<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let step = 1.0 / count as f64;
    let offset: f64 = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(count);
    let mut cumulative = weights[0];
    let mut j = 0;
    for i in 0..count {
        let pointer = offset + i as f64 * step;
        while pointer >= cumulative && j + 1 < weights.len() {
            j += 1;
            cumulative += weights[j];
        }
        out.push(j);
    }
    out
}

/// Weighted mean `Σ w̃ʲ xʲ`.
pub fn weighted_mean(we: &WeightedEnsemble) -> Result<DVector<f64>> {
    let (w, _) = normalize_log_weights(we.log_weights())?;
    Ok(we.ensemble().members() * DVector::from_vec(w))
}

fn check_prev(prev: &WeightedEnsemble, model: &LinearGaussianModel, y: &DVector<f64>) -> Result<()> {
    model.check_observation(y, "particle filter step")?;
    if prev.ensemble().dim() != model.n_x() {
        return Err(dim_mismatch("particle filter step", model.n_x(), prev.ensemble().dim()));
    }
    Ok(())
}

/// Log-likelihood `log N(y; H x, R)` evaluator.
#[derive(Debug, Clone)]
pub struct Likelihood {
    density: GaussianDensity,
    h: DMatrix<f64>,
    y: DVector<f64>,
}

impl Likelihood {
    pub fn new(model: &LinearGaussianModel, y: &DVector<f64>) -> Result<Self> {
        model.check_observation(y, "likelihood")?;
        let density = GaussianDensity::new(DVector::zeros(model.n_y()), model.r())
            .map_err(|_| Error::SingularR)?;
        Ok(Self {
            density,
            h: model.h().clone(),
            y: y.clone(),
        })
    }

    pub fn log_likelihood(&self, x: &DVector<f64>) -> f64 {
        self.density.log_normalizer() - 0.5 * self.density.mahalanobis_sq(&(&self.y - &self.h * x))
    }

    /// Column-wise log-likelihood of a block of states.
    pub fn log_likelihood_columns(&self, states: &DMatrix<f64>) -> Vec<f64> {
        let mut resid = -(&self.h * states);
        for mut col in resid.column_iter_mut() {
            col += &self.y;
        }
        self.density
            .mahalanobis_sq_columns(resid)
            .into_iter()
            .map(|m| self.density.log_normalizer() - 0.5 * m)
            .collect()
    }
}

/// `xʲ ~ N(M xʲ_{k-1}, Q)`, `log wʲ += log N(y; H xʲ, R)`.
pub fn standard_pf_step<R: Rng + ?Sized>(
    prev: &WeightedEnsemble,
    model: &LinearGaussianModel,
    y: &DVector<f64>,
    rng: &mut R,
) -> Result<WeightedEnsemble> {
    check_prev(prev, model, y)?;
    let lik = Likelihood::new(model, y)?;
    let noise = model.q_sqrt() * standard_normal_matrix(model.n_x(), prev.size(), rng);
    let states = model.m() * prev.ensemble().members() + noise;
    let log_w = prev
        .log_weights()
        .iter()
        .zip(lik.log_likelihood_columns(&states))
        .map(|(w, inc)| w + inc)
        .collect();
    WeightedEnsemble::new(
        Ensemble::new(states, prev.ensemble().time_index() + 1)?,
        log_w,
    )
}

/// The linear-Gaussian optimal proposal `p(x_k | x_{k-1}, y_k)`.
///
/// Proposal covariance `C = (Q⁻¹ + Hᵀ R⁻¹ H)⁻¹`, member mean
/// `C (Q⁻¹ M x_{k-1} + Hᵀ R⁻¹ y)`, and weight increment
/// `log N(y; H M x_{k-1}, R + H Q Hᵀ)`, which does not depend on the draw.
#[derive(Debug, Clone)]
pub struct OptimalProposal {
    cov: DMatrix<f64>,
    cov_sqrt: DMatrix<f64>,
    /// `C Q⁻¹ M`.
    prev_map: DMatrix<f64>,
    /// `C Hᵀ R⁻¹ y`.
    obs_shift: DVector<f64>,
    hm: DMatrix<f64>,
    marginal: GaussianDensity,
}

impl OptimalProposal {
    pub fn new(model: &LinearGaussianModel, y: &DVector<f64>) -> Result<Self> {
        model.check_observation(y, "optimal proposal")?;
        let n = model.n_x();
        let q_chol = cholesky(model.q()).ok_or(Error::SingularQ)?;
        let r_chol = cholesky(model.r()).ok_or(Error::SingularR)?;
        let q_inv = q_chol.inverse();
        let r_inv_h = r_chol.solve(model.h());
        let precision = symmetrize(&(&q_inv + model.h().transpose() * &r_inv_h));
        let cov = symmetrize(
            &cholesky(&precision)
                .ok_or(Error::SingularProposalCovariance)?
                .inverse(),
        );
        let cov_sqrt = cholesky(&cov)
            .ok_or(Error::SingularProposalCovariance)?
            .l();
        let prev_map = &cov * q_chol.solve(model.m());
        let obs_shift = &cov * (r_inv_h.transpose() * y);
        let hm = model.h() * model.m();
        let marg_cov = symmetrize(&(model.r() + model.h() * model.q() * model.h().transpose()));
        let marginal = GaussianDensity::new(y.clone(), &marg_cov).map_err(|_| Error::SingularR)?;
        debug_assert_eq!(cov.nrows(), n);
        Ok(Self {
            cov,
            cov_sqrt,
            prev_map,
            obs_shift,
            hm,
            marginal,
        })
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn mean(&self, prev: &DVector<f64>) -> DVector<f64> {
        &self.prev_map * prev + &self.obs_shift
    }

    /// `log N(y; H M x_{k-1}, R + H Q Hᵀ)`.
    pub fn log_increment(&self, prev: &DVector<f64>) -> f64 {
        // Symmetric in its argument, so evaluate the density centred at y.
        let hx = &self.hm * prev;
        self.marginal.log_pdf(&hx)
    }

    pub fn log_increment_columns(&self, prev: &DMatrix<f64>) -> Vec<f64> {
        self.marginal.log_pdf_columns(&(&self.hm * prev))
    }

    /// One draw per column of `prev`.
    pub fn sample<R: Rng + ?Sized>(&self, prev: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
        let mut out = &self.prev_map * prev
            + &self.cov_sqrt * standard_normal_matrix(self.cov.nrows(), prev.ncols(), rng);
        for mut col in out.column_iter_mut() {
            col += &self.obs_shift;
        }
        out
    }
}

pub fn optimal_pf_step<R: Rng + ?Sized>(
    prev: &WeightedEnsemble,
    model: &LinearGaussianModel,
    y: &DVector<f64>,
    rng: &mut R,
) -> Result<WeightedEnsemble> {
    check_prev(prev, model, y)?;
    let proposal = OptimalProposal::new(model, y)?;
    let prev_states = prev.ensemble().members();
    let states = proposal.sample(prev_states, rng);
    let log_w = prev
        .log_weights()
        .iter()
        .zip(proposal.log_increment_columns(prev_states))
        .map(|(w, inc)| w + inc)
        .collect();
    WeightedEnsemble::new(
        Ensemble::new(states, prev.ensemble().time_index() + 1)?,
        log_w,
    )
}

/// PF-EnKF step for the smoothing density: the gain comes from the localized
/// and inflated sample covariance of the forecast particles, each particle is
/// moved by the perturbed-observation update, and weights follow the ratio of
/// transition times likelihood to the EnKF proposal density.
pub fn enkf_pf_step<R: Rng + ?Sized>(
    prev: &WeightedEnsemble,
    model: &LinearGaussianModel,
    y: &DVector<f64>,
    config: &EnkfConfig,
    rng: &mut R,
) -> Result<WeightedEnsemble> {
    check_prev(prev, model, y)?;
    let forecast = crate::enkf::enkf_forecast(prev.ensemble(), model, rng)?;
    let (_, cov) = ensemble_mean_cov(&forecast)?;
    let (gain, _) = enkf_gain(&cov, model, config)?;
    let weigher = SmoothingWeigher::new(model, &gain, y)?;
    let prev_states = prev.ensemble().members();
    let states = weigher.sample(prev_states, rng);
    let log_w = prev
        .log_weights()
        .iter()
        .zip(weigher.log_increment_columns(&states, prev_states))
        .map(|(w, inc)| w + inc)
        .collect();
    WeightedEnsemble::new(
        Ensemble::new(states, prev.ensemble().time_index() + 1)?,
        log_w,
    )
}

/// Sequential importance sampler with a fixed proposal and optional
/// resampling after each step.
#[derive(Debug, Clone)]
pub struct ParticleFilter {
    model: LinearGaussianModel,
    kind: ProposalKind,
    enkf: Option<EnkfConfig>,
}

impl ParticleFilter {
    pub fn new(model: LinearGaussianModel, kind: ProposalKind) -> Result<Self> {
        if kind == ProposalKind::Enkf {
            return Err(Error::InvalidParameter(
                "the EnKF proposal needs an EnKF configuration; use ParticleFilter::enkf".into(),
            ));
        }
        Ok(Self {
            model,
            kind,
            enkf: None,
        })
    }

    pub fn enkf(model: LinearGaussianModel, config: EnkfConfig) -> Self {
        Self {
            model,
            kind: ProposalKind::Enkf,
            enkf: Some(config),
        }
    }

    pub fn kind(&self) -> ProposalKind {
        self.kind
    }

    pub fn model(&self) -> &LinearGaussianModel {
        &self.model
    }

    /// Propagates, reweights, and (if `resample` is set) resamples to uniform
    /// weights.
    pub fn assimilate<R: Rng + ?Sized>(
        &self,
        prev: &WeightedEnsemble,
        y: &DVector<f64>,
        resample_after: bool,
        rng: &mut R,
    ) -> Result<WeightedEnsemble> {
        let next = match (self.kind, &self.enkf) {
            (ProposalKind::Standard, _) => standard_pf_step(prev, &self.model, y, rng)?,
            (ProposalKind::Optimal, _) => optimal_pf_step(prev, &self.model, y, rng)?,
            (ProposalKind::Enkf, Some(cfg)) => enkf_pf_step(prev, &self.model, y, cfg, rng)?,
            (ProposalKind::Enkf, None) => unreachable!("constructor guarantees a config"),
        };
        if resample_after {
            Ok(WeightedEnsemble::uniform(resample(&next, rng)?))
        } else {
            Ok(next)
        }
    }
}
