//! Solver output shared by both variants, and its document form.

use serde::{Deserialize, Serialize};

use crate::conic::SolveStatus;
use crate::error::Result;
use crate::model::Variant;
use crate::policy::{Policy, PolicyDoc};

/// One convex–concave iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcpRecord {
    pub k: usize,
    /// True soft objective at iterate `k`.
    pub objective: f64,
    pub solve_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub status: SolveStatus,
    /// Wall time of all conic solves, seconds.
    pub solve_time: f64,
    /// Interior-point iterations summed over all conic solves.
    pub iterations: u64,
    /// Soft variant only.
    pub ccp_iterations: Option<usize>,
    /// `‖μ_{x(T)} − μ_d‖` from the analytic moments.
    pub terminal_mean_residual: f64,
    /// `λmin(Σ_d − var x(T))` from the analytic moments.
    pub terminal_lmi_margin: f64,
    /// Objective reported by the conic engine (hard variant) or the last surrogate.
    pub solver_objective: Option<f64>,
    /// Soft variant: `f_k` for every iterate, starting at the initial policy.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<CcpRecord>,
    /// Set when a subproblem failed and the last good iterate was returned.
    #[serde(default)]
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSolution {
    pub policy: Policy,
    /// `𝒥₁` for the hard variant, `𝒥̃₃` for the soft one; NaN without an optimal solve.
    pub objective: f64,
    pub variant: Variant,
    pub diagnostics: Diagnostics,
}

impl SteeringSolution {
    pub fn is_optimal(&self) -> bool {
        self.diagnostics.status == SolveStatus::Optimal
    }

    pub fn to_doc(&self, problem_digest: Option<String>) -> SolutionDoc {
        SolutionDoc {
            variant: self.variant,
            objective: self.objective.is_finite().then_some(self.objective),
            problem_digest,
            policy: PolicyDoc::from(&self.policy),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// Machine-readable solution: policy plus diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDoc {
    pub variant: Variant,
    pub objective: Option<f64>,
    /// Content digest of the problem the policy was computed for.
    #[serde(default)]
    pub problem_digest: Option<String>,
    pub policy: PolicyDoc,
    pub diagnostics: Diagnostics,
}

impl SolutionDoc {
    pub fn into_solution(self) -> Result<SteeringSolution> {
        Ok(SteeringSolution {
            policy: self.policy.into_policy()?,
            objective: self.objective.unwrap_or(f64::NAN),
            variant: self.variant,
            diagnostics: self.diagnostics,
        })
    }
}
