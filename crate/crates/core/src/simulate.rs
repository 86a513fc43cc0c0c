//! Closed-loop Monte-Carlo simulation of a policy.
//!
//! Every rollout owns a ChaCha stream keyed by its seed, so results do not depend on
//! how rollouts are scheduled across threads. Aggregation runs over fixed-size chunks
//! merged in index order.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::SystemModel;
use crate::policy::{self, MomentTrajectory, Policy};

/// Rollouts per aggregation chunk. Fixed so the reduction order never changes.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    pub seed: u64,
}

impl Rollout {
    /// Largest deviation from `x(t+1) = A x(t) + B u(t) + w(t)` along the trace.
    pub fn replay_error(&self, system: &SystemModel) -> f64 {
        (0..self.inputs.len())
            .map(|t| {
                let x = &system.a[t] * &self.states[t] + &system.b[t] * &self.inputs[t] + &self.disturbances[t];
                (x - &self.states[t + 1]).amax()
            })
            .fold(0.0, f64::max)
    }

    pub fn effort(&self) -> f64 {
        self.inputs.iter().map(|u| u.norm_squared()).sum()
    }

    /// CSV trace: `t, x…, u…, w…`; the terminal row leaves `u` and `w` empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend((0..n).map(|i| format!("w{i}")));
        writeln!(out, "{}", header.join(","))?;
        for (t, x) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| format!("{v:e}")));
            match (self.inputs.get(t), self.disturbances.get(t)) {
                (Some(u), Some(w)) => {
                    row.extend(u.iter().map(|v| format!("{v:e}")));
                    row.extend(w.iter().map(|v| format!("{v:e}")));
                }
                _ => row.extend(std::iter::repeat_n(String::new(), m + n)),
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn check_dims(system: &SystemModel, policy: &Policy) -> Result<()> {
    if (system.n, system.m, system.horizon) != (policy.n(), policy.m(), policy.horizon()) {
        return Err(Error::Dimension(format!(
            "policy is (n={}, m={}, T={}) but system is (n={}, m={}, T={})",
            policy.n(),
            policy.m(),
            policy.horizon(),
            system.n,
            system.m,
            system.horizon
        )));
    }
    Ok(())
}

struct Sampler {
    r0: DMatrix<f64>,
    rw: DMatrix<f64>,
}

impl Sampler {
    fn new(system: &SystemModel) -> Result<Self> {
        Ok(Self {
            r0: linalg::psd_sqrt(&system.init.covariance)?,
            rw: linalg::psd_sqrt(&system.noise_cov)?,
        })
    }

    fn normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
    }

    /// Draws `x₀` then `w(0..T−1)` from the stream.
    fn draw(&self, system: &SystemModel, seed: u64) -> (DVector<f64>, Vec<DVector<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = system.n;
        let x0 = &system.init.mean + &self.r0 * Self::normals(&mut rng, n);
        let w = (0..system.horizon)
            .map(|_| &self.rw * Self::normals(&mut rng, n))
            .collect();
        (x0, w)
    }
}

/// Simulates the closed loop once, applying the policy stage by stage.
pub fn rollout(system: &SystemModel, policy: &Policy, seed: u64) -> Result<Rollout> {
    check_dims(system, policy)?;
    let sampler = Sampler::new(system)?;
    let (x0, w) = sampler.draw(system, seed);
    let mut states = Vec::with_capacity(system.horizon + 1);
    let mut inputs = Vec::with_capacity(system.horizon);
    states.push(x0.clone());
    for t in 0..system.horizon {
        let u = policy::control_input(policy, t, &x0, &system.init.mean, &w[..t])?;
        let next = &system.a[t] * &states[t] + &system.b[t] * &u + &w[t];
        inputs.push(u);
        states.push(next);
    }
    Ok(Rollout {
        states,
        inputs,
        disturbances: w,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStats {
    pub n_samples: usize,
    pub mean_t: Vec<DVector<f64>>,
    /// Unbiased (`1/(N−1)`) sample covariances.
    pub cov_t: Vec<DMatrix<f64>>,
    pub effort_mean: f64,
    /// Standard error of `effort_mean`.
    pub effort_se: f64,
}

impl SampleStats {
    /// Componentwise standard error of the stage-`t` mean.
    pub fn mean_se(&self, t: usize) -> DVector<f64> {
        let n = self.n_samples as f64;
        self.cov_t[t].diagonal().map(|v| (v.max(0.0) / n).sqrt())
    }
}

/// Running count, mean and centered second moments (pairwise-mergeable).
#[derive(Debug, Clone)]
struct Moments {
    count: usize,
    mean: Vec<DVector<f64>>,
    m2: Vec<DMatrix<f64>>,
    effort_mean: f64,
    effort_m2: f64,
}

impl Moments {
    fn new(stages: usize, n: usize) -> Self {
        Self {
            count: 0,
            mean: vec![DVector::zeros(n); stages],
            m2: vec![DMatrix::zeros(n, n); stages],
            effort_mean: 0.0,
            effort_m2: 0.0,
        }
    }

    fn push(&mut self, states: &[DVector<f64>], effort: f64) {
        self.count += 1;
        let c = self.count as f64;
        for (t, x) in states.iter().enumerate() {
            let d = x - &self.mean[t];
            self.mean[t] += &d / c;
            let d2 = x - &self.mean[t];
            self.m2[t].ger(1.0, &d, &d2, 1.0);
        }
        let d = effort - self.effort_mean;
        self.effort_mean += d / c;
        self.effort_m2 += d * (effort - self.effort_mean);
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for t in 0..self.mean.len() {
            let d = &other.mean[t] - &self.mean[t];
            self.m2[t] += &other.m2[t] + (&d * d.transpose()) * (na * nb / n);
            self.mean[t] += &d * (nb / n);
        }
        let d = other.effort_mean - self.effort_mean;
        self.effort_m2 += other.effort_m2 + d * d * na * nb / n;
        self.effort_mean += d * nb / n;
        self.count += other.count;
    }
}

/// Stacked-form closed loop used for bulk sampling; agrees with [`rollout`].
struct FastLoop<'a> {
    system: &'a SystemModel,
    ubar: DVector<f64>,
    gain_l: DMatrix<f64>,
    gain_k: DMatrix<f64>,
    sampler: Sampler,
}

impl<'a> FastLoop<'a> {
    fn new(system: &'a SystemModel, policy: &Policy) -> Result<Self> {
        Ok(Self {
            system,
            ubar: policy.stacked_ubar(),
            gain_l: policy.gain_l(),
            gain_k: policy.gain_k(),
            sampler: Sampler::new(system)?,
        })
    }

    fn run(&self, seed: u64, states: &mut Vec<DVector<f64>>) -> f64 {
        let s = self.system;
        let (n, m, t_max) = (s.n, s.m, s.horizon);
        let (x0, w) = self.sampler.draw(s, seed);
        let mut w_stack = DVector::zeros(t_max * n);
        for (t, wt) in w.iter().enumerate() {
            w_stack.rows_mut(t * n, n).copy_from(wt);
        }
        let mut u = self.ubar.clone();
        u.gemv(1.0, &self.gain_l, &(&x0 - &s.init.mean), 1.0);
        u.gemv(1.0, &self.gain_k, &w_stack, 1.0);
        states.clear();
        states.push(x0);
        for t in 0..t_max {
            let ut = u.rows(t * m, m);
            let next = &s.a[t] * &states[t] + &s.b[t] * ut + &w[t];
            states.push(next);
        }
        u.norm_squared()
    }
}

/// `N` independent rollouts on seeds `base_seed, …, base_seed + N − 1`.
pub fn monte_carlo(system: &SystemModel, policy: &Policy, n_samples: usize, base_seed: u64) -> Result<SampleStats> {
    if n_samples < 2 {
        return Err(Error::Range(format!("need at least 2 samples, got {n_samples}")));
    }
    check_dims(system, policy)?;
    let fast = FastLoop::new(system, policy)?;
    let stages = system.horizon + 1;
    let n = system.n;
    let chunks: Vec<Moments> = (0..n_samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = Moments::new(stages, n);
            let mut states = Vec::with_capacity(stages);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_samples) {
                let effort = fast.run(base_seed.wrapping_add(i as u64), &mut states);
                acc.push(&states, effort);
            }
            acc
        })
        .collect();
    let mut total = Moments::new(stages, n);
    for c in &chunks {
        total.merge(c);
    }
    let denom = (total.count - 1) as f64;
    let effort_var = total.effort_m2 / denom;
    Ok(SampleStats {
        n_samples,
        mean_t: total.mean,
        cov_t: total.m2.iter().map(|m| linalg::symmetrize(&(m / denom))).collect(),
        effort_mean: total.effort_mean,
        effort_se: (effort_var.max(0.0) / n_samples as f64).sqrt(),
    })
}

pub const MEAN_SE_THRESHOLD: f64 = 4.0;
pub const COV_REL_THRESHOLD: f64 = 0.05;
/// Below this sample count the bands are reported as unreliable.
pub const SMALL_SAMPLE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct StageComparison {
    pub t: usize,
    /// `|sample − analytic| / SE` per component.
    pub mean_dev_se: Vec<f64>,
    /// `‖sample − analytic‖_F / ‖analytic‖_F`.
    pub cov_rel_err: f64,
    pub flagged: bool,
}

impl StageComparison {
    pub fn max_mean_dev_se(&self) -> f64 {
        self.mean_dev_se.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub n_samples: usize,
    pub stages: Vec<StageComparison>,
    pub warnings: Vec<String>,
}

impl MomentReport {
    pub fn flagged_stages(&self) -> Vec<usize> {
        self.stages.iter().filter(|s| s.flagged).map(|s| s.t).collect()
    }

    pub fn passed(&self) -> bool {
        self.stages.iter().all(|s| !s.flagged)
    }
}

fn deviation(diff: f64, se: f64, scale: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= 1e-12 * scale.max(1.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn compare_moments(analytic: &MomentTrajectory, sample: &SampleStats) -> Result<MomentReport> {
    if analytic.stages() != sample.mean_t.len() {
        return Err(Error::Dimension(format!(
            "analytic trajectory has {} stages, sample has {}",
            analytic.stages(),
            sample.mean_t.len()
        )));
    }
    let mut warnings = Vec::new();
    if sample.n_samples < SMALL_SAMPLE {
        warnings.push(format!(
            "only {} samples; confidence bands are wide",
            sample.n_samples
        ));
    }
    let stages = (0..analytic.stages())
        .map(|t| {
            let se = sample.mean_se(t);
            let mu = &analytic.means[t];
            let mean_dev_se: Vec<f64> = (0..mu.len())
                .map(|i| deviation(sample.mean_t[t][i] - mu[i], se[i], mu[i].abs()))
                .collect();
            let cov = &analytic.covariances[t];
            let err = (&sample.cov_t[t] - cov).norm();
            let cov_rel_err = if cov.norm() > 0.0 {
                err / cov.norm()
            } else if err == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            let flagged = mean_dev_se.iter().any(|&d| d > MEAN_SE_THRESHOLD) || cov_rel_err > COV_REL_THRESHOLD;
            StageComparison {
                t,
                mean_dev_se,
                cov_rel_err,
                flagged,
            }
        })
        .collect();
    Ok(MomentReport {
        n_samples: sample.n_samples,
        stages,
        warnings,
    })
}
