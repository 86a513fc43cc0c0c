//! Soft-constrained steering: minimize the squared Wasserstein distance between the
//! terminal law and the target under an effort budget `𝒥₁ ≤ ρ²`.
//!
//! The objective is convex minus `2‖√Σ_d ζ‖_*`. Each convex–concave iteration
//! linearizes the nuclear term at the current `ζ` and solves the resulting SOCP.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{self, AffineExpr, ConicProgram, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::hccs::{self, check_pairing, check_policy_terminal};
use crate::lifting::LiftedSystem;
use crate::linalg;
use crate::model::{SteeringProblem, Variant};
use crate::policy::{self, Policy};
use crate::reduction::{epigraph_scale, min_norm_feedforward, PolicyVars, Roots};
use crate::solution::{CcpRecord, Diagnostics, SteeringSolution};
use crate::wasserstein::{self, NuclearGradient, SoftObjectiveValue, DEFAULT_EIG_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    Zero,
    #[default]
    MeanFeedforward,
    HardWarmStart,
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitStrategy::Zero => "zero",
            InitStrategy::MeanFeedforward => "mean-feedforward",
            InitStrategy::HardWarmStart => "hard-warm-start",
        })
    }
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "zero" => Ok(InitStrategy::Zero),
            "mean-feedforward" => Ok(InitStrategy::MeanFeedforward),
            "hard-warm-start" => Ok(InitStrategy::HardWarmStart),
            other => Err(Error::Schema(format!("unknown initialization strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SccsSettings {
    /// Stop when successive true objectives differ by at most this.
    pub epsilon: f64,
    pub max_ccp_iters: usize,
    pub init: InitStrategy,
    pub conic: SolverSettings,
    /// Relative eigenvalue floor of the nuclear-norm gradient.
    pub eig_floor: f64,
}

impl Default for SccsSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_ccp_iters: 200,
            init: InitStrategy::default(),
            conic: SolverSettings::default(),
            eig_floor: DEFAULT_EIG_FLOOR,
        }
    }
}

/// One point of the convex–concave sequence.
#[derive(Debug, Clone)]
pub struct CcpState {
    pub k: usize,
    pub policy: Policy,
    pub zeta: DMatrix<f64>,
    /// True soft objective at `policy`.
    pub objective: f64,
    pub history: Vec<CcpRecord>,
}

fn require_soft(problem: &SteeringProblem) -> Result<()> {
    if problem.variant != Variant::Soft {
        return Err(Error::Build(format!(
            "soft-constrained solver called on a {} problem",
            problem.variant
        )));
    }
    Ok(())
}

/// True soft objective `𝒥̃₃` of a policy.
pub fn soft_objective(policy: &Policy, problem: &SteeringProblem, lifted: &LiftedSystem) -> Result<SoftObjectiveValue> {
    let (mean, _) = policy::terminal_moments(policy, lifted)?;
    let z = policy::zeta(policy, lifted)?;
    wasserstein::sccs_objective(&mean, &z, &problem.target.mean, &problem.target.covariance)
}

/// Shrinks a policy uniformly until it meets the budget.
fn fit_budget(policy: Policy, rho: f64, lifted: &LiftedSystem) -> Result<Policy> {
    let effort = policy::expected_effort(&policy, &lifted.sigma0, &lifted.big_w)?;
    if effort <= rho * rho || effort == 0.0 {
        return Ok(policy);
    }
    let c = rho / effort.sqrt();
    log::debug!("initial policy scaled by {c:.3e} to meet the effort budget");
    Ok(policy.scaled(c))
}

pub fn initialize_ccp(
    problem: &SteeringProblem,
    lifted: &LiftedSystem,
    strategy: InitStrategy,
    conic_settings: &SolverSettings,
) -> Result<Policy> {
    require_soft(problem)?;
    check_pairing(problem, lifted)?;
    let (n, m, t) = (lifted.n, lifted.m, lifted.horizon);
    let mut policy = Policy::zero(n, m, t, problem.gamma)?;
    match strategy {
        InitStrategy::Zero => Ok(policy),
        InitStrategy::MeanFeedforward => {
            policy.set_stacked_ubar(&min_norm_feedforward(lifted, &problem.target.mean)?);
            fit_budget(policy, problem.rho, lifted)
        }
        InitStrategy::HardWarmStart => {
            let mut hard = problem.clone();
            hard.variant = Variant::Hard;
            match hccs::solve_hccs(&hard, lifted, conic_settings) {
                Ok(sol) if sol.is_optimal() => fit_budget(sol.policy, problem.rho, lifted),
                Ok(sol) => {
                    log::warn!(
                        "hard warm start unavailable ({}), using mean feedforward",
                        sol.diagnostics.status
                    );
                    initialize_ccp(problem, lifted, InitStrategy::MeanFeedforward, conic_settings)
                }
                Err(e) => {
                    log::warn!("hard warm start failed ({e}), using mean feedforward");
                    initialize_ccp(problem, lifted, InitStrategy::MeanFeedforward, conic_settings)
                }
            }
        }
    }
}

/// Linearization of the nuclear term at `zeta_k`.
pub fn convexify(zeta_k: &DMatrix<f64>, sigmad: &DMatrix<f64>) -> Result<NuclearGradient> {
    convexify_with_floor(zeta_k, sigmad, DEFAULT_EIG_FLOOR)
}

pub fn convexify_with_floor(zeta_k: &DMatrix<f64>, sigmad: &DMatrix<f64>, eig_floor: f64) -> Result<NuclearGradient> {
    wasserstein::nuclear_term_gradient(zeta_k, sigmad, eig_floor)
}

/// Value of the convex surrogate at a policy, including the constant dropped from
/// the subproblem, so that it touches `𝒥̃₃` at the linearization point.
pub fn surrogate_value(
    policy: &Policy,
    problem: &SteeringProblem,
    lifted: &LiftedSystem,
    zeta_k: &DMatrix<f64>,
    gradient: &DMatrix<f64>,
) -> Result<f64> {
    let (mean, _) = policy::terminal_moments(policy, lifted)?;
    let z = policy::zeta(policy, lifted)?;
    let sd = &problem.target.covariance;
    let root = linalg::psd_sqrt(sd)?;
    let offset = 2.0 * linalg::frob_inner(gradient, zeta_k) - 2.0 * wasserstein::nuclear_norm(&(&root * zeta_k))?;
    Ok((mean - &problem.target.mean).norm_squared() + z.norm_squared() + sd.trace()
        - 2.0 * linalg::frob_inner(gradient, &z)
        + offset)
}

pub(crate) struct SoftProgram {
    pub program: ConicProgram,
    pub vars: PolicyVars,
}

fn build_soft_program(
    problem: &SteeringProblem,
    lifted: &LiftedSystem,
    gradient: &DMatrix<f64>,
    scale_hint: Option<&Policy>,
) -> Result<SoftProgram> {
    require_soft(problem)?;
    check_pairing(problem, lifted)?;
    let n = lifted.n;
    let full_cols = n * (lifted.horizon + 1);
    if gradient.shape() != (n, full_cols) {
        return Err(Error::Dimension(format!(
            "gradient must be {n}x{full_cols}, got {}x{}",
            gradient.nrows(),
            gradient.ncols()
        )));
    }
    let mut program = ConicProgram::new();
    let vars = PolicyVars::allocate(&mut program, lifted, problem.gamma)?;
    let roots = Roots::new(lifted, true)?;
    let cols = roots.zeta_columns(n, lifted.horizon);
    let xi = program.add_variables("xi", n * cols.len());
    let eps = program.add_variables("epigraph", 2);
    let xi_var = |r: usize, c: usize| xi.start + r * cols.len() + c;

    // ξ = ζ(𝓛, 𝓚)
    let zeta = vars.zeta(lifted, &roots);
    let mut eqs = Vec::with_capacity(n * cols.len());
    for (r, row) in zeta.iter().enumerate() {
        for (c, e) in row.iter().enumerate() {
            let mut d = e.clone();
            d.add_term(xi_var(r, c), -1.0);
            eqs.push(d);
        }
    }
    program.add_equalities(eqs)?;

    let (mean_scale, xi_scale) = match scale_hint {
        Some(p) => {
            let v = soft_objective(p, problem, lifted)?;
            (epigraph_scale(v.mean_term), epigraph_scale(v.frob_term))
        }
        None => (1.0, 1.0),
    };
    let mean_rows = vars.terminal_mean(lifted, &problem.target.mean);
    program.add_quad_epigraph_scaled(&mean_rows, AffineExpr::var(eps.start), mean_scale)?;
    let xi_rows: Vec<AffineExpr> = (0..n)
        .flat_map(|r| (0..cols.len()).map(move |c| (r, c)))
        .map(|(r, c)| AffineExpr::var(xi_var(r, c)))
        .collect();
    program.add_quad_epigraph_scaled(&xi_rows, AffineExpr::var(eps.start + 1), xi_scale)?;

    // 𝒥₁ ≤ ρ² as a single stack; the scale √2·ρ makes it the plain cone ρ ≥ ‖x‖.
    let rho = problem.rho;
    let effort: Vec<AffineExpr> = vars.effort_parts(&roots).into_iter().flatten().collect();
    let budget_scale = if rho > 0.0 { std::f64::consts::SQRT_2 * rho } else { 1.0 };
    program.add_quad_epigraph_scaled(&effort, AffineExpr::constant(rho * rho), budget_scale)?;

    let mut obj = AffineExpr::constant(problem.target.covariance.trace());
    obj.add_term(eps.start, 1.0);
    obj.add_term(eps.start + 1, 1.0);
    for r in 0..n {
        for (c, &gc) in cols.iter().enumerate() {
            obj.add_term(xi_var(r, c), -2.0 * gradient[(r, gc)]);
        }
    }
    program.objective = obj;
    Ok(SoftProgram { program, vars })
}

/// Convex subproblem for the linearization `G_k`.
pub fn build_ccp_subproblem(problem: &SteeringProblem, lifted: &LiftedSystem, gradient: &DMatrix<f64>) -> Result<ConicProgram> {
    Ok(build_soft_program(problem, lifted, gradient, None)?.program)
}

fn record_terminal(diag: &mut Diagnostics, policy: &Policy, problem: &SteeringProblem, lifted: &LiftedSystem) -> Result<()> {
    let check = check_policy_terminal(policy, problem, lifted)?;
    diag.terminal_mean_residual = check.mean_residual;
    diag.terminal_lmi_margin = check.lmi_margin;
    Ok(())
}

/// One convex–concave step from `state`.
pub fn ccp_step(
    state: &CcpState,
    problem: &SteeringProblem,
    lifted: &LiftedSystem,
    settings: &SccsSettings,
) -> Result<(std::result::Result<CcpState, SolveStatus>, conic::ConicSolution)> {
    let g = convexify_with_floor(&state.zeta, &problem.target.covariance, settings.eig_floor)?;
    let soft = build_soft_program(problem, lifted, &g.gradient, Some(&state.policy))?;
    let sol = conic::solve(&soft.program, &settings.conic)?;
    let Some(x) = sol.primal.as_deref() else {
        return Ok((Err(sol.status), sol));
    };
    let policy = soft.vars.extract(x)?;
    let objective = soft_objective(&policy, problem, lifted)?.total;
    let mut history = state.history.clone();
    history.push(CcpRecord {
        k: state.k + 1,
        objective,
        solve_time: sol.solve_time,
    });
    let next = CcpState {
        k: state.k + 1,
        zeta: policy::zeta(&policy, lifted)?,
        policy,
        objective,
        history,
    };
    Ok((Ok(next), sol))
}

pub fn solve_sccs(problem: &SteeringProblem, lifted: &LiftedSystem, settings: &SccsSettings) -> Result<SteeringSolution> {
    require_soft(problem)?;
    check_pairing(problem, lifted)?;
    let mut diagnostics = Diagnostics {
        status: SolveStatus::Optimal,
        solve_time: 0.0,
        iterations: 0,
        ccp_iterations: Some(0),
        terminal_mean_residual: f64::NAN,
        terminal_lmi_margin: f64::NAN,
        solver_objective: None,
        history: Vec::new(),
        degraded: false,
    };

    // With no budget the zero policy is the only feasible point.
    let init = if problem.rho == 0.0 {
        Policy::zero(lifted.n, lifted.m, lifted.horizon, problem.gamma)?
    } else {
        initialize_ccp(problem, lifted, settings.init, &settings.conic)?
    };
    let f0 = soft_objective(&init, problem, lifted)?.total;
    let mut state = CcpState {
        k: 0,
        zeta: policy::zeta(&init, lifted)?,
        policy: init,
        objective: f0,
        history: vec![CcpRecord {
            k: 0,
            objective: f0,
            solve_time: 0.0,
        }],
    };
    let mut best = (state.policy.clone(), state.objective);

    if problem.rho > 0.0 {
        let mut converged = false;
        while state.k < settings.max_ccp_iters {
            let (next, sol) = ccp_step(&state, problem, lifted, settings)?;
            diagnostics.solve_time += sol.solve_time;
            diagnostics.iterations += sol.iterations as u64;
            let next = match next {
                Ok(s) => s,
                Err(status) => {
                    log::warn!("subproblem {} ended with {status}; keeping the last good iterate", state.k + 1);
                    diagnostics.status = status;
                    diagnostics.degraded = true;
                    break;
                }
            };
            diagnostics.solver_objective = Some(sol.objective_value);
            let step = (next.objective - state.objective).abs();
            if next.objective > state.objective + 10.0 * settings.conic.gap_tol {
                log::debug!(
                    "objective rose from {:.9e} to {:.9e} at iterate {}",
                    state.objective,
                    next.objective,
                    next.k
                );
            }
            state = next;
            if state.objective < best.1 {
                best = (state.policy.clone(), state.objective);
            }
            if step <= settings.epsilon {
                converged = true;
                break;
            }
        }
        if !converged && !diagnostics.degraded {
            log::warn!("convex-concave loop stopped at the iteration cap {}", settings.max_ccp_iters);
        }
    }

    diagnostics.ccp_iterations = Some(state.k);
    diagnostics.history = state.history;
    let (policy, objective) = best;
    record_terminal(&mut diagnostics, &policy, problem, lifted)?;
    Ok(SteeringSolution {
        policy,
        objective,
        variant: Variant::Soft,
        diagnostics,
    })
}

/// Terminal mean that the mean-feedforward initializer aims for.
pub fn open_loop_terminal_mean(lifted: &LiftedSystem) -> DVector<f64> {
    lifted.terminal_rows(&lifted.g0) * &lifted.mu0
}
