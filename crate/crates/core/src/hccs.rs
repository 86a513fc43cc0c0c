//! Hard-constrained steering: minimum expected effort subject to an exact terminal
//! mean and the terminal covariance bound `var x(T) ⪯ Σ_d`, posed as one SDP.

use nalgebra::DMatrix;

use crate::conic::{self, AffineExpr, ConicProgram, SolverSettings};
use crate::error::{Error, Result};
use crate::lifting::LiftedSystem;
use crate::linalg;
use crate::model::{SteeringProblem, Variant};
use crate::policy::{self, Policy};
use crate::reduction::{epigraph_scale, min_norm_feedforward, PolicyVars, Roots};
use crate::solution::{Diagnostics, SteeringSolution};

pub(crate) fn check_pairing(problem: &SteeringProblem, lifted: &LiftedSystem) -> Result<()> {
    let s = &problem.system;
    if (s.n, s.m, s.horizon) != (lifted.n, lifted.m, lifted.horizon) {
        return Err(Error::Dimension("lifted system was built for a different problem".into()));
    }
    Ok(())
}

/// Hard program with the layout needed to read the policy back.
pub(crate) struct HardProgram {
    pub program: ConicProgram,
    pub vars: PolicyVars,
    pub lmi_dim: usize,
    /// Engine objective times this factor is `𝒥₁`.
    pub objective_scale: f64,
}

pub(crate) fn build_hard_program(
    problem: &SteeringProblem,
    lifted: &LiftedSystem,
    prune: bool,
) -> Result<HardProgram> {
    if problem.variant != Variant::Hard {
        return Err(Error::Build(format!(
            "hard-constrained builder called on a {} problem",
            problem.variant
        )));
    }
    check_pairing(problem, lifted)?;
    let mut program = ConicProgram::new();
    let vars = PolicyVars::allocate(&mut program, lifted, problem.gamma)?;
    let roots = Roots::new(lifted, prune)?;
    let eps = program.add_variables("epigraph", 3);

    let [u, k, l] = vars.effort_parts(&roots);
    // The minimum-norm feedforward bounds the effort from below; it sets the epigraph
    // and objective scales so the engine works with O(1) quantities.
    let effort_estimate = min_norm_feedforward(lifted, &problem.target.mean)?
        .norm_squared()
        .max(1.0);
    let sc = epigraph_scale(effort_estimate);
    program.add_quad_epigraph_scaled(&u, AffineExpr::var(eps.start), sc)?;
    program.add_quad_epigraph_scaled(&k, AffineExpr::var(eps.start + 1), sc)?;
    program.add_quad_epigraph_scaled(&l, AffineExpr::var(eps.start + 2), sc)?;
    let mut obj = AffineExpr::constant(0.0);
    for i in eps.clone() {
        obj.add_term(i, 1.0 / effort_estimate);
    }
    program.objective = obj;

    program.add_equalities(vars.terminal_mean(lifted, &problem.target.mean))?;

    // [[Σ_d, ζ], [ζᵀ, I]] ⪰ 0
    let zeta = vars.zeta(lifted, &roots);
    let n = lifted.n;
    let cols = zeta[0].len();
    let d = n + cols;
    let sd = &problem.target.covariance;
    let mut entries = vec![AffineExpr::constant(0.0); d * d];
    for i in 0..n {
        for j in 0..n {
            entries[i * d + j] = AffineExpr::constant(sd[(i, j)]);
        }
        for c in 0..cols {
            entries[i * d + n + c] = zeta[i][c].clone();
            entries[(n + c) * d + i] = zeta[i][c].clone();
        }
    }
    for c in 0..cols {
        entries[(n + c) * d + n + c] = AffineExpr::constant(1.0);
    }
    program.add_psd_block(&entries, d)?;

    Ok(HardProgram {
        program,
        vars,
        lmi_dim: d,
        objective_scale: effort_estimate,
    })
}

/// Builds the hard-constrained SDP; masked disturbance gains are not variables at all.
pub fn build_hccs(problem: &SteeringProblem, lifted: &LiftedSystem) -> Result<ConicProgram> {
    Ok(build_hard_program(problem, lifted, true)?.program)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalCheck {
    pub mean_residual: f64,
    pub lmi_margin: f64,
}

impl TerminalCheck {
    /// Acceptance bands for a hard solve.
    pub fn within_tolerance(&self, problem: &SteeringProblem) -> bool {
        let mean_scale = 1.0 + problem.target.mean.norm();
        self.mean_residual <= 1e-6 * mean_scale
            && self.lmi_margin >= -1e-6 * problem.target.covariance.trace()
    }
}

/// Terminal residuals of an arbitrary policy, from the analytic moments.
pub fn check_policy_terminal(
    policy: &Policy,
    problem: &SteeringProblem,
    lifted: &LiftedSystem,
) -> Result<TerminalCheck> {
    let (mean, cov) = policy::terminal_moments(policy, lifted)?;
    Ok(TerminalCheck {
        mean_residual: (mean - &problem.target.mean).norm(),
        lmi_margin: linalg::min_eigenvalue(&(&problem.target.covariance - cov))?,
    })
}

pub fn check_terminal(
    solution: &SteeringSolution,
    problem: &SteeringProblem,
    lifted: &LiftedSystem,
) -> Result<TerminalCheck> {
    check_policy_terminal(&solution.policy, problem, lifted)
}

pub fn solve_hccs(
    problem: &SteeringProblem,
    lifted: &LiftedSystem,
    settings: &SolverSettings,
) -> Result<SteeringSolution> {
    let hard = build_hard_program(problem, lifted, true)?;
    log::debug!(
        "hard program: {} variables, LMI of size {}, {} K blocks",
        hard.program.num_vars(),
        hard.lmi_dim,
        hard.vars.num_k_blocks()
    );
    let sol = conic::solve(&hard.program, settings)?;
    let mut diagnostics = Diagnostics {
        status: sol.status,
        solve_time: sol.solve_time,
        iterations: sol.iterations as u64,
        ccp_iterations: None,
        terminal_mean_residual: f64::NAN,
        terminal_lmi_margin: f64::NAN,
        solver_objective: None,
        history: Vec::new(),
        degraded: false,
    };
    let Some(x) = sol.primal.as_deref() else {
        log::info!("hard problem not solved: {}", sol.status);
        return Ok(SteeringSolution {
            policy: Policy::zero(lifted.n, lifted.m, lifted.horizon, problem.gamma)?,
            objective: f64::NAN,
            variant: Variant::Hard,
            diagnostics,
        });
    };
    let policy = hard.vars.extract(x)?;
    let check = check_policy_terminal(&policy, problem, lifted)?;
    diagnostics.terminal_mean_residual = check.mean_residual;
    diagnostics.terminal_lmi_margin = check.lmi_margin;
    diagnostics.solver_objective = Some(sol.objective_value * hard.objective_scale);
    let objective = policy::expected_effort(&policy, &lifted.sigma0, &lifted.big_w)?;
    Ok(SteeringSolution {
        policy,
        objective,
        variant: Variant::Hard,
        diagnostics,
    })
}

/// The `[[Σ_d, ζ], [ζᵀ, I]]` block evaluated at a concrete `ζ`.
pub fn lmi_matrix(sigmad: &DMatrix<f64>, zeta: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sigmad.nrows();
    let k = zeta.ncols();
    let mut m = DMatrix::identity(n + k, n + k);
    m.view_mut((0, 0), (n, n)).copy_from(sigmad);
    m.view_mut((0, n), (n, k)).copy_from(zeta);
    m.view_mut((n, 0), (k, n)).copy_from(&zeta.transpose());
    m
}
