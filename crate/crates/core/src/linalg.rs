//! Dense symmetric-matrix helpers shared by the solver modules.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric part `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `true` when `‖M − Mᵀ‖_max ≤ rel_tol · max(1, ‖M‖_max)`.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

fn eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let s = symmetrize(m);
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry in symmetric matrix".into()));
    }
    SymmetricEigen::try_new(s, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("symmetric eigendecomposition did not converge".into()))
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = eigen(m)?.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(v)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(sym_eigenvalues(m)?[0])
}

/// Rebuilds `V f(Λ) Vᵀ` for a scalar map `f` over eigenvalues.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    let eig = eigen(m)?;
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    Ok(symmetrize(&(v * d * v.transpose())))
}

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_apply(m, |l| l.max(0.0).sqrt())
}

/// Zeroes negative eigenvalues.
pub fn clamp_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_apply(m, |l| l.max(0.0))
}

/// Inverse square root with eigenvalues raised to `floor_rel · λmax` first.
/// The flag reports whether the floor was active.
pub fn floored_inv_sqrt(m: &DMatrix<f64>, floor_rel: f64) -> Result<(DMatrix<f64>, bool)> {
    let eig = eigen(m)?;
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
    let floor = (floor_rel * lmax).max(f64::MIN_POSITIVE);
    let mut floored = false;
    let d = eig.eigenvalues.map(|l| {
        if l < floor {
            floored = true;
            1.0 / floor.sqrt()
        } else {
            1.0 / l.sqrt()
        }
    });
    let v = &eig.eigenvectors;
    Ok((symmetrize(&(v * DMatrix::from_diagonal(&d) * v.transpose())), floored))
}

/// Block-diagonal assembly.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Frobenius inner product `⟨A, B⟩ = tr(AᵀB)`.
pub fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
