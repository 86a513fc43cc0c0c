//! Squared 2-Wasserstein distance between Gaussians and the terminal-cost pieces
//! used by the soft-constrained solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Default relative eigenvalue floor for inverse square roots.
pub const DEFAULT_EIG_FLOOR: f64 = 1e-10;

fn clamp_round_off(value: f64, scale: f64) -> f64 {
    if value < 0.0 {
        debug_assert!(
            value >= -1e-9 * scale.max(1.0),
            "squared distance {value} is too negative for round-off"
        );
        0.0
    } else {
        value
    }
}

/// `‖μ₁−μ₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₂^{1/2} Σ₁ Σ₂^{1/2})^{1/2})`.
pub fn gaussian_w2(
    mu1: &DVector<f64>,
    sigma1: &DMatrix<f64>,
    mu2: &DVector<f64>,
    sigma2: &DMatrix<f64>,
) -> Result<f64> {
    let n = mu1.len();
    if mu2.len() != n || sigma1.shape() != (n, n) || sigma2.shape() != (n, n) {
        return Err(Error::Dimension("Gaussian parameters disagree in dimension".into()));
    }
    let root2 = linalg::psd_sqrt(sigma2)?;
    let cross = linalg::psd_sqrt(&(&root2 * sigma1 * &root2))?;
    let mean_term = (mu1 - mu2).norm_squared();
    let cov_term = sigma1.trace() + sigma2.trace() - 2.0 * cross.trace();
    let scale = sigma1.trace().abs() + sigma2.trace().abs();
    Ok(mean_term + clamp_round_off(cov_term, scale))
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry in nuclear norm argument".into()));
    }
    let sv = m.clone().try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    Ok(sv.singular_values.sum())
}

/// The four pieces of the soft terminal cost written in terms of `ζ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftObjectiveValue {
    pub total: f64,
    /// `‖μ_T − μ_d‖²`
    pub mean_term: f64,
    /// `‖ζ‖_F²`
    pub frob_term: f64,
    /// `tr Σ_d`
    pub const_term: f64,
    /// `2‖√Σ_d ζ‖_*`
    pub nuclear_term: f64,
}

/// Soft terminal cost `‖μ_T − μ_d‖² + ‖ζ‖_F² + tr Σ_d − 2‖√Σ_d ζ‖_*`.
pub fn sccs_objective(
    terminal_mean: &DVector<f64>,
    zeta: &DMatrix<f64>,
    mud: &DVector<f64>,
    sigmad: &DMatrix<f64>,
) -> Result<SoftObjectiveValue> {
    let n = mud.len();
    if terminal_mean.len() != n || zeta.nrows() != n || sigmad.shape() != (n, n) {
        return Err(Error::Dimension("soft objective inputs disagree in dimension".into()));
    }
    let root = linalg::psd_sqrt(sigmad)?;
    let mean_term = (terminal_mean - mud).norm_squared();
    let frob_term = zeta.norm_squared();
    let const_term = sigmad.trace();
    let nuclear_term = 2.0 * nuclear_norm(&(&root * zeta))?;
    let cov_part = clamp_round_off(frob_term + const_term - nuclear_term, frob_term + const_term);
    Ok(SoftObjectiveValue {
        total: mean_term + cov_part,
        mean_term,
        frob_term,
        const_term,
        nuclear_term,
    })
}

#[derive(Debug, Clone)]
pub struct NuclearGradient {
    pub gradient: DMatrix<f64>,
    /// Set when small eigenvalues were raised to the floor before inversion.
    pub floored: bool,
}

/// Gradient of `‖√Σ_d ζ‖_*` with respect to `ζ`:
/// `√Σ_d (√Σ_d ζζᵀ √Σ_d)^{−1/2} √Σ_d ζ`.
pub fn nuclear_term_gradient(zeta: &DMatrix<f64>, sigmad: &DMatrix<f64>, eig_floor: f64) -> Result<NuclearGradient> {
    let n = zeta.nrows();
    if sigmad.shape() != (n, n) {
        return Err(Error::Dimension("Sigma_d must match the rows of zeta".into()));
    }
    let root = linalg::psd_sqrt(sigmad)?;
    let rz = &root * zeta;
    let x = &rz * rz.transpose();
    let (inv_root, floored) = linalg::floored_inv_sqrt(&x, eig_floor)?;
    if floored {
        log::warn!("nuclear-norm gradient: ill-conditioned zeta, eigenvalue floor active");
    }
    Ok(NuclearGradient {
        gradient: &root * inv_root * rz,
        floored,
    })
}
