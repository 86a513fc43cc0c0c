//! Finite-horizon covariance steering for discrete-time linear Gaussian systems
//! under truncated affine disturbance-feedback policies.
//!
//! Two problem variants are supported:
//!
//! * **hard** ([`hccs`]): minimize expected control effort subject to an exact
//!   terminal mean and `var x(T) ⪯ Σ_d`, solved as a single SDP;
//! * **soft** ([`sccs`]): minimize the squared 2-Wasserstein distance between the
//!   terminal Gaussian law and the target under an effort budget, solved with a
//!   convex–concave procedure over SOCP subproblems.
//!
//! ```no_run
//! use covsteer::{build_lifted, random_system_problem, solve_hccs, SolverSettings, Variant};
//!
//! let problem = random_system_problem(Variant::Hard, 50, 0.0);
//! let lifted = build_lifted(&problem.system)?;
//! let solution = solve_hccs(&problem, &lifted, &SolverSettings::default())?;
//! println!("effort = {:.2}", solution.objective);
//! # Ok::<(), covsteer::Error>(())
//! ```

pub mod conic;
pub mod error;
pub mod hccs;
pub mod lifting;
pub mod linalg;
pub mod model;
pub mod policy;
mod reduction;
pub mod sccs;
pub mod simulate;
pub mod solution;
pub mod wasserstein;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use conic::{ConicProgram, ConicSolution, SolveStatus, SolverSettings};
pub use error::{Error, Result};
pub use hccs::{build_hccs, check_terminal, solve_hccs, TerminalCheck};
pub use lifting::{build_lifted, LiftedSystem};
pub use model::{
    load_problem, parse_problem, prepare, random_system_problem, validate, FileFormat, GaussianSpec,
    SteeringProblem, SystemModel, Variant,
};
pub use policy::{MomentTrajectory, Policy};
pub use sccs::{solve_sccs, InitStrategy, SccsSettings};
pub use simulate::{compare_moments, monte_carlo, rollout, MomentReport, SampleStats};
pub use solution::{Diagnostics, SolutionDoc, SteeringSolution};
