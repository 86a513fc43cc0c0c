//! Affine disturbance-feedback policies and their exact moments.
//!
//! At stage `t` the policy applies
//! `u(t) = ū(t) + L_t (x(0) − μ₀) + Σ_τ K_{(t−1,τ)} w(τ)`,
//! where `τ` runs over the truncation window `[max(0, t−1−γ), t−1]`.
//! Disturbance gains are stored as a lower-triangular block array indexed
//! `(i, j)` with `i = t−1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::LiftedSystem;
use crate::linalg;

/// Which disturbance blocks `(i, j)` survive truncation at window `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncationMask {
    pub gamma: usize,
    /// Number of block rows/columns, `T − 1`.
    pub size: usize,
}

impl TruncationMask {
    pub fn keeps(&self, i: usize, j: usize) -> bool {
        i < self.size && j <= i && j + self.gamma >= i
    }

    /// Kept blocks in row-major order.
    pub fn kept_blocks(&self) -> Vec<(usize, usize)> {
        (0..self.size)
            .flat_map(|i| (i.saturating_sub(self.gamma)..=i).map(move |j| (i, j)))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.kept_blocks().len()
    }

    pub fn as_grid(&self) -> Vec<Vec<bool>> {
        (0..self.size)
            .map(|i| (0..self.size).map(|j| self.keeps(i, j)).collect())
            .collect()
    }
}

pub fn truncation_mask(gamma: usize, horizon: usize) -> Result<TruncationMask> {
    if gamma > horizon {
        return Err(Error::Range(format!("gamma {gamma} outside [0, {horizon}]")));
    }
    Ok(TruncationMask {
        gamma,
        size: horizon.saturating_sub(1),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n: usize,
    m: usize,
    horizon: usize,
    gamma: usize,
    /// Feedforward `ū(0..T−1)`, each of length `m`.
    pub ubar: Vec<DVector<f64>>,
    /// Initial-state gains `L_0..L_{T−1}`, each `m × n`.
    pub l_gains: Vec<DMatrix<f64>>,
    /// `k_gains[i][j]` for `j ≤ i < T−1`; masked blocks stay zero.
    k_gains: Vec<Vec<DMatrix<f64>>>,
}

impl Policy {
    pub fn zero(n: usize, m: usize, horizon: usize, gamma: usize) -> Result<Self> {
        truncation_mask(gamma, horizon)?;
        let size = horizon.saturating_sub(1);
        Ok(Self {
            n,
            m,
            horizon,
            gamma,
            ubar: vec![DVector::zeros(m); horizon],
            l_gains: vec![DMatrix::zeros(m, n); horizon],
            k_gains: (0..size).map(|i| vec![DMatrix::zeros(m, n); i + 1]).collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn mask(&self) -> TruncationMask {
        TruncationMask {
            gamma: self.gamma,
            size: self.horizon.saturating_sub(1),
        }
    }

    pub fn k(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        self.k_gains.get(i).and_then(|row| row.get(j))
    }

    /// Sets `K_{(i,j)}`; the block must lie inside the truncation window.
    pub fn set_k(&mut self, i: usize, j: usize, block: DMatrix<f64>) -> Result<()> {
        if !self.mask().keeps(i, j) {
            return Err(Error::Index(format!(
                "K({i},{j}) is outside the truncation window (gamma = {})",
                self.gamma
            )));
        }
        if block.shape() != (self.m, self.n) {
            return Err(Error::Dimension(format!(
                "K block must be {}x{}, got {}x{}",
                self.m,
                self.n,
                block.nrows(),
                block.ncols()
            )));
        }
        self.k_gains[i][j] = block;
        Ok(())
    }

    pub fn stacked_ubar(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.horizon * self.m);
        for (t, u) in self.ubar.iter().enumerate() {
            v.rows_mut(t * self.m, self.m).copy_from(u);
        }
        v
    }

    pub fn set_stacked_ubar(&mut self, v: &DVector<f64>) {
        for t in 0..self.horizon {
            self.ubar[t] = v.rows(t * self.m, self.m).into_owned();
        }
    }

    /// `𝓛 = [L_0; …; L_{T−1}]`, `Tm × n`.
    pub fn gain_l(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.horizon * self.m, self.n);
        for (t, l) in self.l_gains.iter().enumerate() {
            out.view_mut((t * self.m, 0), (self.m, self.n)).copy_from(l);
        }
        out
    }

    /// `𝓚 = [0 0; K 0]`, `Tm × Tn`, with truncated blocks zero.
    pub fn gain_k(&self) -> DMatrix<f64> {
        let (m, n) = (self.m, self.n);
        let mut out = DMatrix::zeros(self.horizon * m, self.horizon * n);
        for (i, j) in self.mask().kept_blocks() {
            out.view_mut(((i + 1) * m, j * n), (m, n))
                .copy_from(&self.k_gains[i][j]);
        }
        out
    }

    /// Scales every parameter; effort scales by `c²`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut p = self.clone();
        p.ubar.iter_mut().for_each(|u| *u *= c);
        p.l_gains.iter_mut().for_each(|l| *l *= c);
        p.k_gains.iter_mut().flatten().for_each(|k| *k *= c);
        p
    }

    fn check_lifted(&self, lifted: &LiftedSystem) -> Result<()> {
        if (self.n, self.m, self.horizon) != (lifted.n, lifted.m, lifted.horizon) {
            return Err(Error::Dimension(format!(
                "policy is (n={}, m={}, T={}) but system is (n={}, m={}, T={})",
                self.n, self.m, self.horizon, lifted.n, lifted.m, lifted.horizon
            )));
        }
        Ok(())
    }
}

pub fn assemble_k(policy: &Policy, lifted: &LiftedSystem) -> Result<DMatrix<f64>> {
    policy.check_lifted(lifted)?;
    Ok(policy.gain_k())
}

pub fn assemble_l(policy: &Policy) -> DMatrix<f64> {
    policy.gain_l()
}

/// `𝔣(ū) = G_u ū + G_0 μ₀`.
pub fn mean_trajectory(policy: &Policy, lifted: &LiftedSystem) -> Result<DVector<f64>> {
    policy.check_lifted(lifted)?;
    Ok(&lifted.gu * policy.stacked_ubar() + &lifted.g0 * &lifted.mu0)
}

/// `𝔥(𝓛, 𝓚) = (G_0 + G_u 𝓛) Σ₀ (·)ᵀ + (G_w + G_u 𝓚) 𝐖 (·)ᵀ`.
pub fn covariance_stacked(policy: &Policy, lifted: &LiftedSystem) -> Result<DMatrix<f64>> {
    policy.check_lifted(lifted)?;
    let a = &lifted.g0 + &lifted.gu * policy.gain_l();
    let b = &lifted.gw + &lifted.gu * policy.gain_k();
    let h = &a * &lifted.sigma0 * a.transpose() + &b * &lifted.big_w * b.transpose();
    Ok(linalg::symmetrize(&h))
}

/// Mean and covariance of every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

impl MomentTrajectory {
    pub fn stages(&self) -> usize {
        self.means.len()
    }

    pub fn terminal(&self) -> (&DVector<f64>, &DMatrix<f64>) {
        (
            self.means.last().expect("nonempty trajectory"),
            self.covariances.last().expect("nonempty trajectory"),
        )
    }
}

pub fn moment_trajectory(policy: &Policy, lifted: &LiftedSystem) -> Result<MomentTrajectory> {
    let mean = mean_trajectory(policy, lifted)?;
    let cov = covariance_stacked(policy, lifted)?;
    let n = lifted.n;
    let stages = lifted.horizon + 1;
    Ok(MomentTrajectory {
        means: (0..stages).map(|t| mean.rows(t * n, n).into_owned()).collect(),
        covariances: (0..stages)
            .map(|t| cov.view((t * n, t * n), (n, n)).into_owned())
            .collect(),
    })
}

/// Terminal mean and covariance `(P_{T+1} 𝔣, P_{T+1} 𝔥 P_{T+1}ᵀ)`, computed on the terminal rows only.
pub fn terminal_moments(policy: &Policy, lifted: &LiftedSystem) -> Result<(DVector<f64>, DMatrix<f64>)> {
    policy.check_lifted(lifted)?;
    let gu_t = lifted.terminal_rows(&lifted.gu);
    let mean = &gu_t * policy.stacked_ubar() + lifted.terminal_rows(&lifted.g0) * &lifted.mu0;
    let z = zeta(policy, lifted)?;
    Ok((mean, linalg::symmetrize(&(&z * z.transpose()))))
}

/// `ζ(𝓛, 𝓚) = P_{T+1} [G_0 + G_u 𝓛, G_w + G_u 𝓚] R`, an `n × (n + Tn)` matrix with `ζζᵀ = var x(T)`.
pub fn zeta(policy: &Policy, lifted: &LiftedSystem) -> Result<DMatrix<f64>> {
    policy.check_lifted(lifted)?;
    let n = lifted.n;
    let k = lifted.horizon * n;
    let gu_t = lifted.terminal_rows(&lifted.gu);
    let left = lifted.terminal_rows(&lifted.g0) + &gu_t * policy.gain_l();
    let right = lifted.terminal_rows(&lifted.gw) + &gu_t * policy.gain_k();
    let mut joined = DMatrix::zeros(n, n + k);
    joined.view_mut((0, 0), (n, n)).copy_from(&left);
    joined.view_mut((0, n), (n, k)).copy_from(&right);
    Ok(joined * &lifted.r)
}

/// `𝒥₁ = ūᵀū + tr(𝓚𝐖𝓚ᵀ) + tr(𝓛Σ₀𝓛ᵀ)`, the expected total control effort.
pub fn expected_effort(policy: &Policy, sigma0: &DMatrix<f64>, big_w: &DMatrix<f64>) -> Result<f64> {
    let (n, t) = (policy.n, policy.horizon);
    if sigma0.shape() != (n, n) || big_w.shape() != (t * n, t * n) {
        return Err(Error::Dimension("effort covariances do not match the policy".into()));
    }
    let u = policy.stacked_ubar();
    let k = policy.gain_k();
    let l = policy.gain_l();
    let tr_k = (&k * big_w * k.transpose()).trace();
    let tr_l = (&l * sigma0 * l.transpose()).trace();
    Ok((u.dot(&u) + tr_k + tr_l).max(0.0))
}

/// `𝒞 = 𝒥₁ − ρ²`; feasible policies have `𝒞 ≤ 0`.
pub fn effort_constraint(policy: &Policy, rho: f64, sigma0: &DMatrix<f64>, big_w: &DMatrix<f64>) -> Result<f64> {
    if rho < 0.0 {
        return Err(Error::Range(format!("rho must be nonnegative, got {rho}")));
    }
    Ok(expected_effort(policy, sigma0, big_w)? - rho * rho)
}

/// Control at stage `t` given the initial state and the disturbances `w(0..t−1)`.
pub fn control_input(
    policy: &Policy,
    t: usize,
    x0: &DVector<f64>,
    mu0: &DVector<f64>,
    w_history: &[DVector<f64>],
) -> Result<DVector<f64>> {
    if t >= policy.horizon {
        return Err(Error::Index(format!("stage {t} outside [0, {})", policy.horizon)));
    }
    if w_history.len() < t {
        return Err(Error::Dimension(format!(
            "stage {t} needs {t} past disturbances, got {}",
            w_history.len()
        )));
    }
    let mut u = &policy.ubar[t] + &policy.l_gains[t] * (x0 - mu0);
    if t > 0 {
        let i = t - 1;
        for tau in i.saturating_sub(policy.gamma)..=i {
            u += &policy.k_gains[i][tau] * &w_history[tau];
        }
    }
    Ok(u)
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KBlockDoc {
    pub i: usize,
    pub j: usize,
    pub block: Vec<Vec<f64>>,
}

/// Machine-readable policy document; only blocks inside the truncation window are listed.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicyDoc {
    pub ubar: Vec<Vec<f64>>,
    pub L: Vec<Vec<Vec<f64>>>,
    pub K: Vec<KBlockDoc>,
    pub gamma: usize,
}

impl From<&Policy> for PolicyDoc {
    fn from(p: &Policy) -> Self {
        Self {
            ubar: p.ubar.iter().map(|u| u.iter().copied().collect()).collect(),
            L: p.l_gains.iter().map(linalg::to_rows).collect(),
            K: p
                .mask()
                .kept_blocks()
                .into_iter()
                .map(|(i, j)| KBlockDoc {
                    i,
                    j,
                    block: linalg::to_rows(&p.k_gains[i][j]),
                })
                .collect(),
            gamma: p.gamma,
        }
    }
}

impl PolicyDoc {
    pub fn into_policy(self) -> Result<Policy> {
        let horizon = self.ubar.len();
        let m = self.ubar.first().map_or(0, Vec::len);
        if horizon == 0 || self.L.len() != horizon {
            return Err(Error::Schema("policy needs T feedforward vectors and T L gains".into()));
        }
        let l_gains: Vec<DMatrix<f64>> = self
            .L
            .iter()
            .map(|r| linalg::from_rows(r, "L"))
            .collect::<Result<_>>()?;
        let n = l_gains[0].ncols();
        let mut policy = Policy::zero(n, m, horizon, self.gamma)?;
        for (t, u) in self.ubar.into_iter().enumerate() {
            if u.len() != m {
                return Err(Error::Dimension(format!("ubar[{t}] has length {}", u.len())));
            }
            policy.ubar[t] = DVector::from_vec(u);
        }
        for (t, l) in l_gains.into_iter().enumerate() {
            if l.shape() != (m, n) {
                return Err(Error::Dimension(format!("L[{t}] must be {m}x{n}")));
            }
            policy.l_gains[t] = l;
        }
        for kb in self.K {
            let block = linalg::from_rows(&kb.block, "K")?;
            policy.set_k(kb.i, kb.j, block)?;
        }
        Ok(policy)
    }
}
