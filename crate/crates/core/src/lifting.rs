//! Stacked finite-horizon representation `x = G_u u + G_w w + G_0 x(0)`.
//!
//! Block row `i` of every lifted matrix corresponds to state `x(i)`, `i ∈ [0, T]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::SystemModel;

/// Transition product `Φ(t, τ) = A(t−1) ⋯ A(τ)`, identity when `t = τ`.
pub fn state_transition(t: usize, tau: usize, system: &SystemModel) -> Result<DMatrix<f64>> {
    if tau > t || t > system.horizon {
        return Err(Error::Index(format!(
            "transition ({t}, {tau}) outside 0 <= tau <= t <= {}",
            system.horizon
        )));
    }
    let mut phi = DMatrix::identity(system.n, system.n);
    for k in tau..t {
        phi = &system.a[k] * phi;
    }
    Ok(phi)
}

#[derive(Debug, Clone)]
pub struct LiftedSystem {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    /// `(T+1)n × Tm`
    pub gu: DMatrix<f64>,
    /// `(T+1)n × Tn`
    pub gw: DMatrix<f64>,
    /// `(T+1)n × n`
    pub g0: DMatrix<f64>,
    /// `blockdiag(W, …, W)`, `Tn × Tn`.
    pub big_w: DMatrix<f64>,
    pub sigma0: DMatrix<f64>,
    pub mu0: DVector<f64>,
    /// Symmetric root of `blockdiag(Σ₀, 𝐖)`.
    pub r: DMatrix<f64>,
}

impl LiftedSystem {
    pub fn state_rows(&self) -> usize {
        (self.horizon + 1) * self.n
    }

    /// Square root of `Σ₀` (leading block of `R`).
    pub fn r0(&self) -> DMatrix<f64> {
        self.r.view((0, 0), (self.n, self.n)).into_owned()
    }

    /// Square root of `𝐖` (trailing block of `R`).
    pub fn rw(&self) -> DMatrix<f64> {
        let k = self.horizon * self.n;
        self.r.view((self.n, self.n), (k, k)).into_owned()
    }

    /// Terminal block row `P_{T+1} M` of a lifted matrix.
    pub fn terminal_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.rows(self.horizon * self.n, self.n).into_owned()
    }

    /// Stacked trajectory `G_u u + G_w w + G_0 x₀`.
    pub fn trajectory(&self, u: &DVector<f64>, w: &DVector<f64>, x0: &DVector<f64>) -> DVector<f64> {
        &self.gu * u + &self.gw * w + &self.g0 * x0
    }
}

/// Assembles the lifted matrices. Transition products are accumulated column by column.
pub fn build_lifted(system: &SystemModel) -> Result<LiftedSystem> {
    let (n, m, t) = (system.n, system.m, system.horizon);
    if system.a.len() != t || system.b.len() != t {
        return Err(Error::Dimension("system matrices do not cover the horizon".into()));
    }
    let rows = (t + 1) * n;
    let mut gu = DMatrix::zeros(rows, t * m);
    let mut gw = DMatrix::zeros(rows, t * n);
    let mut g0 = DMatrix::zeros(rows, n);

    // Φ(i, 0) for all i.
    let mut phi = DMatrix::identity(n, n);
    g0.view_mut((0, 0), (n, n)).copy_from(&phi);
    for i in 1..=t {
        phi = &system.a[i - 1] * phi;
        g0.view_mut((i * n, 0), (n, n)).copy_from(&phi);
    }

    // Column block j holds Φ(i, j+1) for i > j.
    for j in 0..t {
        let mut phi = DMatrix::identity(n, n);
        for i in (j + 1)..=t {
            if i > j + 1 {
                phi = &system.a[i - 1] * phi;
            }
            gw.view_mut((i * n, j * n), (n, n)).copy_from(&phi);
            gu.view_mut((i * n, j * m), (n, m)).copy_from(&(&phi * &system.b[j]));
        }
    }

    let blocks: Vec<&DMatrix<f64>> = vec![&system.noise_cov; t];
    let big_w = linalg::block_diag(&blocks);
    let r = joint_sqrt(&system.init.covariance, &big_w)?;
    Ok(LiftedSystem {
        n,
        m,
        horizon: t,
        gu,
        gw,
        g0,
        big_w,
        sigma0: system.init.covariance.clone(),
        mu0: system.init.mean.clone(),
        r,
    })
}

/// Symmetric PSD root `R` with `R Rᵀ = blockdiag(Σ₀, 𝐖)`.
pub fn joint_sqrt(sigma0: &DMatrix<f64>, big_w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = linalg::block_diag(&[sigma0, big_w]);
    linalg::psd_sqrt(&s)
}

/// Block row selector `P_{t+1}`: picks `x(t)` out of the stacked state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selector {
    pub t: usize,
    n: usize,
    horizon: usize,
}

impl Selector {
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.n, (self.horizon + 1) * self.n);
        p.view_mut((0, self.t * self.n), (self.n, self.n))
            .fill_with_identity();
        p
    }

    pub fn extract(&self, stacked: &DVector<f64>) -> DVector<f64> {
        stacked.rows(self.t * self.n, self.n).into_owned()
    }

    /// `P M Pᵀ` for a stacked `(T+1)n` square matrix.
    pub fn extract_block(&self, stacked: &DMatrix<f64>) -> DMatrix<f64> {
        let o = self.t * self.n;
        stacked.view((o, o), (self.n, self.n)).into_owned()
    }
}

pub fn selector(t: usize, lifted: &LiftedSystem) -> Result<Selector> {
    if t > lifted.horizon {
        return Err(Error::Index(format!("stage {t} beyond horizon {}", lifted.horizon)));
    }
    Ok(Selector {
        t,
        n: lifted.n,
        horizon: lifted.horizon,
    })
}
