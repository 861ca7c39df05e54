use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use super::linalg::{ensure_shape, max_asymmetry, SYMMETRY_TOL};
use crate::error::{dim_mismatch, Error, Result};

/// Localization matrix `ρ`: symmetric, entries in `[0, 1]`, unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationTaper {
    rho: DMatrix<f64>,
}

impl LocalizationTaper {
    pub fn new(rho: DMatrix<f64>) -> Result<Self> {
        if rho.nrows() != rho.ncols() {
            return Err(dim_mismatch(
                "localization taper",
                "square matrix",
                format!("{}x{}", rho.nrows(), rho.ncols()),
            ));
        }
        if (0..rho.nrows()).any(|i| rho[(i, i)] != 1.0) {
            return Err(Error::InvalidParameter(
                "taper diagonal must be exactly one".into(),
            ));
        }
        if rho.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "taper entries must lie in [0, 1]".into(),
            ));
        }
        if max_asymmetry(&rho) > SYMMETRY_TOL {
            return Err(Error::NotSymmetric {
                max_asymmetry: max_asymmetry(&rho),
            });
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    /// True when every off-diagonal entry is zero.
    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| i == j || self.rho[(i, j)] == 0.0))
    }
}

/// Shape of a localization taper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaperKind {
    /// `ρ = I`: all cross covariances removed.
    Identity,
    /// `ρ = 11ᵀ`: no localization.
    AllOnes,
    /// Fifth-order piecewise-rational compactly supported correlation on the
    /// index line, vanishing beyond `2 · length_scale`.
    CompactSupport { length_scale: f64 },
}

impl fmt::Display for TaperKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaperKind::Identity => f.write_str("identity"),
            TaperKind::AllOnes => f.write_str("ones"),
            TaperKind::CompactSupport { length_scale } => write!(f, "compact:{length_scale}"),
        }
    }
}

impl FromStr for TaperKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "identity" => Ok(TaperKind::Identity),
            "ones" | "all-ones" => Ok(TaperKind::AllOnes),
            other => {
                let scale = other
                    .strip_prefix("compact:")
                    .ok_or_else(|| Error::Config(format!("unknown taper `{other}`")))?;
                let length_scale: f64 = scale
                    .parse()
                    .map_err(|_| Error::Config(format!("bad taper length scale `{scale}`")))?;
                if !(length_scale > 0.0 && length_scale.is_finite()) {
                    return Err(Error::InvalidLengthScale(length_scale));
                }
                Ok(TaperKind::CompactSupport { length_scale })
            }
        }
    }
}

/// Compactly supported fifth-order piecewise-rational correlation function of
/// `r = distance / length_scale`; equals 1 at 0 and 0 for `r ≥ 2`.
pub fn compact_support_correlation(r: f64) -> f64 {
    let r = r.abs();
    if r <= 1.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        -0.25 * r3 * r2 + 0.5 * r2 * r2 + 0.625 * r3 - 5.0 / 3.0 * r2 + 1.0
    } else if r < 2.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        r3 * r2 / 12.0 - 0.5 * r2 * r2 + 0.625 * r3 + 5.0 / 3.0 * r2 - 5.0 * r + 4.0
            - 2.0 / (3.0 * r)
    } else {
        0.0
    }
}

pub fn make_taper(kind: TaperKind, n: usize) -> Result<LocalizationTaper> {
    if n == 0 {
        return Err(Error::InvalidParameter("taper dimension must be positive".into()));
    }
    let rho = match kind {
        TaperKind::Identity => DMatrix::identity(n, n),
        TaperKind::AllOnes => DMatrix::from_element(n, n, 1.0),
        TaperKind::CompactSupport { length_scale } => {
            if !(length_scale > 0.0 && length_scale.is_finite()) {
                return Err(Error::InvalidLengthScale(length_scale));
            }
            DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    1.0
                } else {
                    let d = i.abs_diff(j) as f64;
                    compact_support_correlation(d / length_scale).clamp(0.0, 1.0)
                }
            })
        }
    };
    LocalizationTaper::new(rho)
}

/// Entry-wise product `ρ ∘ P`.
pub fn schur_localize(p: &DMatrix<f64>, taper: &LocalizationTaper) -> Result<DMatrix<f64>> {
    ensure_shape(p, taper.dim(), taper.dim(), "Schur localization")?;
    Ok(p.component_mul(taper.rho()))
}

/// `(1 + alpha) · P`.
pub fn inflate(p: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    if !(alpha >= 0.0) {
        return Err(Error::NegativeInflation(alpha));
    }
    Ok(p * (1.0 + alpha))
}
