use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Unweighted ensemble. Members are stored as the columns of an
/// `n_x × N_e` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
    time_index: usize,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>, time_index: usize) -> Result<Self> {
        if members.ncols() == 0 {
            return Err(Error::TooFewMembers {
                needed: 1,
                found: 0,
            });
        }
        Ok(Self {
            members,
            time_index,
        })
    }

    pub fn from_members(members: &[DVector<f64>], time_index: usize) -> Result<Self> {
        let first = members.first().ok_or(Error::TooFewMembers {
            needed: 1,
            found: 0,
        })?;
        let n = first.len();
        if let Some(bad) = members.iter().find(|m| m.len() != n) {
            return Err(Error::LengthMismatch {
                left: n,
                right: bad.len(),
            });
        }
        Self::new(DMatrix::from_columns(members), time_index)
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn into_members(self) -> DMatrix<f64> {
        self.members
    }

    pub fn member(&self, j: usize) -> DVector<f64> {
        self.members.column(j).into_owned()
    }

    /// Number of members `N_e`.
    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    /// State dimension `n_x`.
    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn with_time_index(mut self, k: usize) -> Self {
        self.time_index = k;
        self
    }

    pub fn mean(&self) -> DVector<f64> {
        self.members.column_mean()
    }
}

/// Ensemble with one unnormalized natural-log weight per member.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    ensemble: Ensemble,
    log_weights: Vec<f64>,
}

impl WeightedEnsemble {
    /// Log-weights must be finite or `-inf`; NaN is rejected.
    pub fn new(ensemble: Ensemble, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != ensemble.size() {
            return Err(Error::LengthMismatch {
                left: ensemble.size(),
                right: log_weights.len(),
            });
        }
        if log_weights
            .iter()
            .any(|w| w.is_nan() || *w == f64::INFINITY)
        {
            return Err(Error::InvalidParameter(
                "log-weights must be finite or -inf".into(),
            ));
        }
        Ok(Self {
            ensemble,
            log_weights,
        })
    }

    /// Equal weights `log(1/N_e)`.
    pub fn uniform(ensemble: Ensemble) -> Self {
        let lw = -(ensemble.size() as f64).ln();
        let log_weights = vec![lw; ensemble.size()];
        Self {
            ensemble,
            log_weights,
        }
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn size(&self) -> usize {
        self.ensemble.size()
    }

    pub fn into_parts(self) -> (Ensemble, Vec<f64>) {
        (self.ensemble, self.log_weights)
    }
}
