#![allow(dead_code)]

use covsteer::model::{GaussianSpec, SteeringProblem, SystemModel, Variant};
use covsteer::policy::Policy;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// `M Mᵀ + shift·I`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> DMatrix<f64> {
    let m = gaussian_matrix(rng, n, n, 1.0);
    &m * m.transpose() + DMatrix::identity(n, n) * shift
}

/// Time-varying system with entries of moderate size.
pub fn random_system<R: Rng>(rng: &mut R, n: usize, m: usize, horizon: usize) -> SystemModel {
    let a = (0..horizon)
        .map(|_| DMatrix::identity(n, n) * 0.6 + gaussian_matrix(rng, n, n, 0.3))
        .collect();
    let b = (0..horizon).map(|_| gaussian_matrix(rng, n, m, 1.0)).collect();
    SystemModel {
        n,
        m,
        horizon,
        a,
        b,
        noise_cov: random_spd(rng, n, 0.05) * 0.2,
        init: GaussianSpec::new(gaussian_vector(rng, n, 1.0), random_spd(rng, n, 0.1)),
    }
}

pub fn random_policy<R: Rng>(rng: &mut R, n: usize, m: usize, horizon: usize, gamma: usize, scale: f64) -> Policy {
    let mut p = Policy::zero(n, m, horizon, gamma).unwrap();
    for t in 0..horizon {
        p.ubar[t] = gaussian_vector(rng, m, scale);
        p.l_gains[t] = gaussian_matrix(rng, m, n, scale);
    }
    for (i, j) in p.mask().kept_blocks() {
        p.set_k(i, j, gaussian_matrix(rng, m, n, scale)).unwrap();
    }
    p
}

pub fn problem_for(system: SystemModel, variant: Variant, gamma: usize, rho: f64) -> SteeringProblem {
    let n = system.n;
    SteeringProblem {
        system,
        target: GaussianSpec::new(DVector::zeros(n), DMatrix::identity(n, n)),
        rho,
        gamma,
        variant,
    }
}

/// Exact moments by stepwise recursion on the augmented input `z = (x₀, w(0), …, w(T−1))`.
///
/// Each state and input is tracked as `c + M z`; nothing here uses the lifted matrices.
pub struct StepwiseMoments {
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub effort: f64,
}

pub fn stepwise_moments(system: &SystemModel, policy: &Policy) -> StepwiseMoments {
    let (n, m, horizon) = (system.n, system.m, system.horizon);
    let dim = n * (horizon + 1);
    let mut z_mean = DVector::zeros(dim);
    z_mean.rows_mut(0, n).copy_from(&system.init.mean);
    let mut z_cov = DMatrix::zeros(dim, dim);
    z_cov.view_mut((0, 0), (n, n)).copy_from(&system.init.covariance);
    for t in 0..horizon {
        let o = n * (t + 1);
        z_cov.view_mut((o, o), (n, n)).copy_from(&system.noise_cov);
    }

    let mut c = DVector::<f64>::zeros(n);
    let mut mm = DMatrix::<f64>::zeros(n, dim);
    mm.view_mut((0, 0), (n, n)).fill_with_identity();

    let moments = |c: &DVector<f64>, mm: &DMatrix<f64>| {
        (c + mm * &z_mean, mm * &z_cov * mm.transpose())
    };
    let (m0, s0) = moments(&c, &mm);
    let mut means = vec![m0];
    let mut covariances = vec![s0];
    let mut effort = 0.0;

    for t in 0..horizon {
        // u(t) = ū(t) + L_t (x₀ − μ₀) + Σ K(t−1, τ) w(τ)
        let mut uc = policy.ubar[t].clone() - &policy.l_gains[t] * &system.init.mean;
        let mut um = DMatrix::<f64>::zeros(m, dim);
        um.view_mut((0, 0), (m, n)).copy_from(&policy.l_gains[t]);
        if t > 0 {
            for tau in 0..t {
                if let Some(k) = policy.k(t - 1, tau) {
                    let o = n * (tau + 1);
                    let mut block = um.view_mut((0, o), (m, n));
                    block += k;
                }
            }
        }
        let (u_mean, u_cov) = moments(&uc, &um);
        effort += u_mean.norm_squared() + u_cov.trace();

        let mut next_m = &system.a[t] * &mm + &system.b[t] * &um;
        let o = n * (t + 1);
        let mut wblock = next_m.view_mut((0, o), (n, n));
        wblock += DMatrix::<f64>::identity(n, n);
        uc = &system.a[t] * &c + &system.b[t] * &uc;
        c = uc;
        mm = next_m;
        let (mt, st) = moments(&c, &mm);
        means.push(mt);
        covariances.push(st);
    }
    StepwiseMoments {
        means,
        covariances,
        effort,
    }
}

/// Stepwise iteration of `x(t+1) = A x + B u + w` for fixed sequences.
pub fn stepwise_trajectory(system: &SystemModel, u: &[DVector<f64>], w: &[DVector<f64>], x0: &DVector<f64>) -> Vec<DVector<f64>> {
    let mut xs = vec![x0.clone()];
    for t in 0..system.horizon {
        let next = &system.a[t] * &xs[t] + &system.b[t] * &u[t] + &w[t];
        xs.push(next);
    }
    xs
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err_v(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Central finite difference of `f` along `dir`.
pub fn central_difference(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Short version of the random two-state system.
pub fn short_random_system(variant: Variant, gamma: usize, rho: f64, horizon: usize) -> SteeringProblem {
    let mut p = covsteer::random_system_problem(variant, gamma, rho);
    p.system.horizon = horizon;
    p.system.a.truncate(horizon);
    p.system.b.truncate(horizon);
    p
}
