//! Policy parameters as conic decision variables, and the affine maps shared by the
//! hard program and the convexified soft subproblems.

use std::collections::HashMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::conic::{AffineExpr, ConicProgram};
use crate::error::{Error, Result};
use crate::lifting::LiftedSystem;
use crate::linalg;
use crate::policy::{truncation_mask, Policy};

/// Relative size below which a column of a covariance root counts as zero.
const ZERO_COLUMN_TOL: f64 = 1e-14;

/// Symmetric roots of `Σ₀` and `W` with the columns that survive pruning.
#[derive(Debug, Clone)]
pub(crate) struct Roots {
    pub r0: DMatrix<f64>,
    pub rw: DMatrix<f64>,
    /// Nonzero columns of `rw`.
    pub rw_cols: Vec<usize>,
}

impl Roots {
    pub fn new(lifted: &LiftedSystem, prune: bool) -> Result<Self> {
        let n = lifted.n;
        let r0 = linalg::psd_sqrt(&lifted.sigma0)?;
        let w = if lifted.horizon > 0 {
            lifted.big_w.view((0, 0), (n, n)).into_owned()
        } else {
            DMatrix::zeros(n, n)
        };
        let rw = linalg::psd_sqrt(&w)?;
        let scale = rw.amax().max(1.0);
        let rw_cols = (0..n)
            .filter(|&q| !prune || rw.column(q).amax() > ZERO_COLUMN_TOL * scale)
            .collect();
        Ok(Self { r0, rw, rw_cols })
    }

    /// Global column indices of `ζ` that are kept, in order.
    pub fn zeta_columns(&self, n: usize, horizon: usize) -> Vec<usize> {
        let mut cols: Vec<usize> = (0..n).collect();
        for j in 0..horizon {
            cols.extend(self.rw_cols.iter().map(|&q| n + j * n + q));
        }
        cols
    }
}

/// Minimum-norm `ū` with `P_{T+1}(G_u ū + G_0 μ₀) = target` (least squares if unreachable).
pub(crate) fn min_norm_feedforward(lifted: &LiftedSystem, target: &DVector<f64>) -> Result<DVector<f64>> {
    let gu_t = lifted.terminal_rows(&lifted.gu);
    let rhs = target - lifted.terminal_rows(&lifted.g0) * &lifted.mu0;
    if gu_t.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    let eps = 1e-12 * gu_t.amax().max(f64::MIN_POSITIVE);
    let pinv = gu_t
        .pseudo_inverse(eps)
        .map_err(|e| Error::Numeric(format!("pseudo-inverse failed: {e}")))?;
    Ok(pinv * rhs)
}

/// Epigraph scale `√(2t)` for an expected magnitude `t` of a squared norm.
pub(crate) fn epigraph_scale(t_estimate: f64) -> f64 {
    (2.0 * t_estimate.max(1.0)).sqrt()
}

/// Index layout of `ū`, `𝓛` and the unmasked `𝓚` blocks inside a program.
#[derive(Debug, Clone)]
pub(crate) struct PolicyVars {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub gamma: usize,
    pub ubar: Range<usize>,
    pub l: Range<usize>,
    pub k: Range<usize>,
    k_index: HashMap<(usize, usize), usize>,
    k_blocks: Vec<(usize, usize)>,
}

impl PolicyVars {
    pub fn allocate(program: &mut ConicProgram, lifted: &LiftedSystem, gamma: usize) -> Result<Self> {
        let (n, m, t) = (lifted.n, lifted.m, lifted.horizon);
        let mask = truncation_mask(gamma, t)?;
        let k_blocks = mask.kept_blocks();
        let ubar = program.add_variables("ubar", t * m);
        let l = program.add_variables("L", t * m * n);
        let k = program.add_variables("K", k_blocks.len() * m * n);
        let k_index = k_blocks
            .iter()
            .enumerate()
            .map(|(idx, &ij)| (ij, k.start + idx * m * n))
            .collect();
        Ok(Self {
            n,
            m,
            horizon: t,
            gamma,
            ubar,
            l,
            k,
            k_index,
            k_blocks,
        })
    }

    pub fn num_k_blocks(&self) -> usize {
        self.k_blocks.len()
    }

    pub fn ubar_var(&self, t: usize, a: usize) -> usize {
        self.ubar.start + t * self.m + a
    }

    pub fn l_var(&self, t: usize, a: usize, b: usize) -> usize {
        self.l.start + (t * self.m + a) * self.n + b
    }

    pub fn k_var(&self, i: usize, j: usize, a: usize, b: usize) -> Option<usize> {
        self.k_index.get(&(i, j)).map(|base| base + a * self.n + b)
    }

    fn gu_terminal(&self, lifted: &LiftedSystem, t: usize) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        lifted.gu.view((self.horizon * n, t * m), (n, m)).into_owned()
    }

    /// Rows of `P_{T+1} 𝔣(ū) − target`.
    pub fn terminal_mean(&self, lifted: &LiftedSystem, target: &DVector<f64>) -> Vec<AffineExpr> {
        let (n, m, tt) = (self.n, self.m, self.horizon);
        let base = lifted.terminal_rows(&lifted.g0) * &lifted.mu0 - target;
        let gu_t = lifted.terminal_rows(&lifted.gu);
        (0..n)
            .map(|r| {
                let mut e = AffineExpr::constant(base[r]);
                for t in 0..tt {
                    for a in 0..m {
                        e.add_term(self.ubar_var(t, a), gu_t[(r, t * m + a)]);
                    }
                }
                e
            })
            .collect()
    }

    /// `ζ(𝓛, 𝓚)` restricted to the kept columns, as `n` rows of affine entries.
    pub fn zeta(&self, lifted: &LiftedSystem, roots: &Roots) -> Vec<Vec<AffineExpr>> {
        let (n, m, tt) = (self.n, self.m, self.horizon);
        let mut rows: Vec<Vec<AffineExpr>> = vec![Vec::new(); n];
        let gus: Vec<DMatrix<f64>> = (0..tt).map(|t| self.gu_terminal(lifted, t)).collect();

        // Initial-state columns: (G₀ + G_u 𝓛) R₀ on the terminal rows.
        let c0 = lifted.terminal_rows(&lifted.g0) * &roots.r0;
        for q in 0..n {
            for (r, row) in rows.iter_mut().enumerate() {
                let mut e = AffineExpr::constant(c0[(r, q)]);
                for (t, g) in gus.iter().enumerate() {
                    for a in 0..m {
                        for b in 0..n {
                            e.add_term(self.l_var(t, a, b), g[(r, a)] * roots.r0[(b, q)]);
                        }
                    }
                }
                row.push(e);
            }
        }

        // Disturbance column block j: (Φ(T, j+1) + Σ_i G_u,(i+1) K(i,j)) R_W.
        let gw_t = lifted.terminal_rows(&lifted.gw);
        for j in 0..tt {
            let cj = gw_t.view((0, j * n), (n, n)) * &roots.rw;
            let feeders: Vec<usize> = (j..tt.saturating_sub(1))
                .filter(|&i| self.k_index.contains_key(&(i, j)))
                .collect();
            for &q in &roots.rw_cols {
                for (r, row) in rows.iter_mut().enumerate() {
                    let mut e = AffineExpr::constant(cj[(r, q)]);
                    for &i in &feeders {
                        let g = &gus[i + 1];
                        for a in 0..m {
                            for b in 0..n {
                                let v = self.k_var(i, j, a, b).expect("kept block");
                                e.add_term(v, g[(r, a)] * roots.rw[(b, q)]);
                            }
                        }
                    }
                    row.push(e);
                }
            }
        }
        rows
    }

    /// Entries of `ū`, `K(i,j) R_W` and `L_t R₀`, whose squared norms sum to `𝒥₁`.
    pub fn effort_parts(&self, roots: &Roots) -> [Vec<AffineExpr>; 3] {
        let (n, m, tt) = (self.n, self.m, self.horizon);
        let u: Vec<AffineExpr> = self.ubar.clone().map(AffineExpr::var).collect();
        let mut k = Vec::new();
        for &(i, j) in &self.k_blocks {
            for a in 0..m {
                for &q in &roots.rw_cols {
                    let mut e = AffineExpr::constant(0.0);
                    for b in 0..n {
                        e.add_term(self.k_var(i, j, a, b).expect("kept block"), roots.rw[(b, q)]);
                    }
                    k.push(e);
                }
            }
        }
        let mut l = Vec::new();
        for t in 0..tt {
            for a in 0..m {
                for q in 0..n {
                    let mut e = AffineExpr::constant(0.0);
                    for b in 0..n {
                        e.add_term(self.l_var(t, a, b), roots.r0[(b, q)]);
                    }
                    l.push(e);
                }
            }
        }
        [u, k, l]
    }

    /// Rebuilds the policy from a primal vector.
    pub fn extract(&self, x: &[f64]) -> Result<Policy> {
        if x.len() < self.k.end {
            return Err(Error::Dimension("primal vector shorter than the policy layout".into()));
        }
        let (n, m) = (self.n, self.m);
        let mut policy = Policy::zero(n, m, self.horizon, self.gamma)?;
        for t in 0..self.horizon {
            policy.ubar[t] = DVector::from_fn(m, |a, _| x[self.ubar_var(t, a)]);
            policy.l_gains[t] = DMatrix::from_fn(m, n, |a, b| x[self.l_var(t, a, b)]);
        }
        for &(i, j) in &self.k_blocks {
            let block = DMatrix::from_fn(m, n, |a, b| x[self.k_var(i, j, a, b).expect("kept block")]);
            policy.set_k(i, j, block)?;
        }
        Ok(policy)
    }

    /// Primal values reproducing `policy` on this layout (zeros elsewhere).
    #[cfg(test)]
    pub fn encode(&self, policy: &Policy, num_vars: usize) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let mut x = vec![0.0; num_vars];
        for t in 0..self.horizon {
            for a in 0..m {
                x[self.ubar_var(t, a)] = policy.ubar[t][a];
                for b in 0..n {
                    x[self.l_var(t, a, b)] = policy.l_gains[t][(a, b)];
                }
            }
        }
        for &(i, j) in &self.k_blocks {
            if let Some(block) = policy.k(i, j) {
                for a in 0..m {
                    for b in 0..n {
                        x[self.k_var(i, j, a, b).expect("kept block")] = block[(a, b)];
                    }
                }
            }
        }
        x
    }
}
