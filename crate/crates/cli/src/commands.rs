use std::fs;
use std::path::Path;
use std::time::Instant;

use covsteer::model::canonical_json;
use covsteer::policy::{expected_effort, moment_trajectory};
use covsteer::sccs::{solve_sccs, SccsSettings};
use covsteer::simulate::{compare_moments, monte_carlo};
use covsteer::solution::SolutionDoc;
use covsteer::{
    build_lifted, parse_problem, prepare, solve_hccs, Error, FileFormat, LiftedSystem, SolveStatus, SteeringProblem,
    SteeringSolution, Variant,
};
use rayon::prelude::*;

use crate::artifacts::{sha256_hex, Artifacts};
use crate::output::{self, SweepCell};
use crate::{ProblemFlags, SimulateArgs, SolveArgs, SolverFlags, SweepArgs};

pub const EXIT_OUTPUT: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;
pub const EXIT_THRESHOLD: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn output(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_OUTPUT,
            message: format!("writing outputs: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parse(_)
            | Error::Schema(_)
            | Error::Dimension(_)
            | Error::Validation(_)
            | Error::Index(_)
            | Error::Range(_)
            | Error::Io(_) => EXIT_INPUT,
            Error::Numeric(_) | Error::Build(_) | Error::Asymmetric(..) | Error::Transport(_) => EXIT_SOLVER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn status_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Optimal => 0,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        SolveStatus::Unbounded | SolveStatus::NumericLimit => EXIT_SOLVER,
    }
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> CliResult<(SteeringProblem, Vec<u8>)> {
    let bytes = read_input(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let problem = parse_problem(text, FileFormat::from_path(path))
        .map_err(|e| CliError::from(e).with_context(path))?;
    Ok((problem, bytes))
}

impl CliError {
    fn with_context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn checked_gamma(g: i64) -> CliResult<usize> {
    usize::try_from(g).map_err(|_| Error::Range(format!("gamma must be non-negative, got {g}")).into())
}

fn apply(mut problem: SteeringProblem, flags: &ProblemFlags, artifacts: &mut Artifacts) -> CliResult<SteeringProblem> {
    if let Some(v) = flags.variant {
        problem.variant = v;
        artifacts.setting("variant", v);
    }
    if let Some(g) = flags.gamma {
        problem.gamma = checked_gamma(g)?;
        artifacts.setting("gamma", g);
    }
    if let Some(r) = flags.rho {
        problem.rho = r;
        artifacts.setting("rho", r);
    }
    Ok(prepare(problem)?)
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Range(format!("{name} must be positive, got {v}")).into())
    }
}

fn settings(flags: &SolverFlags, artifacts: &mut Artifacts) -> CliResult<SccsSettings> {
    let mut s = SccsSettings::default();
    if let Some(e) = flags.epsilon {
        s.epsilon = positive("epsilon", e)?;
        artifacts.setting("epsilon", e);
    }
    if let Some(t) = flags.feas_tol {
        s.conic.feas_tol = positive("feas-tol", t)?;
        artifacts.setting("feas_tol", t);
    }
    if let Some(t) = flags.gap_tol {
        s.conic.gap_tol = positive("gap-tol", t)?;
        artifacts.setting("gap_tol", t);
    }
    if let Some(init) = flags.init {
        s.init = init;
        artifacts.setting("init", init);
    }
    Ok(s)
}

/// Digest of the dynamics and boundary distributions; solver parameters are excluded.
pub fn problem_digest(problem: &SteeringProblem) -> String {
    let mut p = problem.clone();
    p.gamma = 0;
    p.rho = 0.0;
    p.variant = Variant::Hard;
    sha256_hex(canonical_json(&p).as_bytes())
}

fn run_solver(problem: &SteeringProblem, lifted: &LiftedSystem, settings: &SccsSettings) -> covsteer::Result<SteeringSolution> {
    match problem.variant {
        Variant::Hard => solve_hccs(problem, lifted, &settings.conic),
        Variant::Soft => solve_sccs(problem, lifted, settings),
    }
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("document serializes");
    text.push('\n');
    text.into_bytes()
}

pub fn solve(args: &SolveArgs) -> CliResult<u8> {
    let mut artifacts = Artifacts::new(&args.out, "solve");
    let (problem, bytes) = load(&args.problem)?;
    artifacts.input(&args.problem, &bytes);
    let problem = apply(problem, &args.problem_flags, &mut artifacts)?;
    let settings = settings(&args.solver, &mut artifacts)?;

    let start = Instant::now();
    let lifted = build_lifted(&problem.system)?;
    let build_time = start.elapsed().as_secs_f64();
    let solution = run_solver(&problem, &lifted, &settings)?;
    let total = start.elapsed().as_secs_f64();

    let doc = solution.to_doc(Some(problem_digest(&problem)));
    artifacts.add("solution.json", json_bytes(&doc));
    if solution.is_optimal() {
        let traj = moment_trajectory(&solution.policy, &lifted)?;
        artifacts.add("moments.csv", output::moments_csv(&traj).map_err(CliError::output)?);
        if let Some(csv) = output::ellipse_csv(&traj).map_err(CliError::output)? {
            artifacts.add("ellipses.csv", csv);
        }
        if !solution.diagnostics.history.is_empty() {
            artifacts.add("ccp_history.csv", output::history_csv(&solution.diagnostics.history).map_err(CliError::output)?);
        }
    }
    artifacts.commit().map_err(CliError::output)?;

    let d = &solution.diagnostics;
    println!("variant: {}", problem.variant);
    println!("gamma: {}", problem.gamma);
    println!("status: {}", d.status);
    println!("objective: {}", solution.objective);
    if let Some(k) = d.ccp_iterations {
        println!("ccp iterations: {k}");
    }
    println!("terminal mean residual: {:.3e}", d.terminal_mean_residual);
    println!("terminal covariance margin: {:.3e}", d.terminal_lmi_margin);
    println!("lifting time: {build_time:.3} s");
    println!("solver time: {:.3} s", d.solve_time);
    println!("total time: {total:.3} s");
    Ok(status_code(d.status))
}

struct SweepTask {
    row: usize,
    variant: Variant,
    problem: SteeringProblem,
}

pub fn sweep(args: &SweepArgs) -> CliResult<u8> {
    let mut artifacts = Artifacts::new(&args.out, "sweep");
    let (base, bytes) = load(&args.problem)?;
    artifacts.input(&args.problem, &bytes);
    let settings = settings(&args.solver, &mut artifacts)?;
    let variants = match (args.both, args.variant) {
        (true, _) => vec![Variant::Hard, Variant::Soft],
        (false, Some(v)) => vec![v],
        (false, None) => vec![base.variant],
    };
    artifacts.setting("gammas", args.gammas.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(","));
    artifacts.setting("variants", variants.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    if let Some(r) = args.rho {
        artifacts.setting("rho", r);
    }
    let jobs = match args.jobs {
        Some(0) => return Err(Error::Range("jobs must be at least 1".into()).into()),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };

    let gammas: Vec<usize> = args.gammas.iter().map(|&g| checked_gamma(g)).collect::<CliResult<_>>()?;
    let mut tasks = Vec::new();
    for (row, &gamma) in gammas.iter().enumerate() {
        for &variant in &variants {
            let mut p = base.clone();
            p.gamma = gamma;
            p.variant = variant;
            if let Some(r) = args.rho {
                p.rho = r;
            }
            tasks.push(SweepTask {
                row,
                variant,
                problem: prepare(p)?,
            });
        }
    }
    let lifted = build_lifted(&base.system)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError {
            code: EXIT_SOLVER,
            message: e.to_string(),
        })?;
    let results: Vec<(usize, Variant, SweepCell, u8)> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let start = Instant::now();
                let outcome = run_solver(&task.problem, &lifted, &settings);
                let seconds = start.elapsed().as_secs_f64();
                let (cell, code) = match outcome {
                    Ok(sol) if sol.is_optimal() => (
                        SweepCell::Solved {
                            objective: sol.objective,
                            seconds,
                        },
                        0,
                    ),
                    Ok(sol) => (
                        SweepCell::Failed {
                            status: sol.diagnostics.status.to_string(),
                            seconds,
                        },
                        status_code(sol.diagnostics.status),
                    ),
                    Err(e) => {
                        log::error!("gamma {} ({}): {e}", task.problem.gamma, task.variant);
                        (
                            SweepCell::Failed {
                                status: "error".into(),
                                seconds,
                            },
                            CliError::from(e).code,
                        )
                    }
                };
                (task.row, task.variant, cell, code)
            })
            .collect()
    });

    let mut rows: Vec<(usize, SweepCell, SweepCell)> =
        gammas.iter().map(|&g| (g, SweepCell::Skipped, SweepCell::Skipped)).collect();
    let mut code = 0;
    for (row, variant, cell, c) in results {
        match variant {
            Variant::Hard => rows[row].1 = cell,
            Variant::Soft => rows[row].2 = cell,
        }
        // a solver failure outranks an infeasible point
        code = code.max(c);
    }

    if !args.no_assert && variants.contains(&Variant::Hard) {
        let mut by_gamma: Vec<(usize, f64)> = rows
            .iter()
            .map(|(g, hard, _)| match hard {
                SweepCell::Solved { objective, .. } => (*g, *objective),
                _ => (*g, f64::INFINITY),
            })
            .collect();
        by_gamma.sort_by_key(|x| x.0);
        let bad: Vec<usize> = by_gamma
            .windows(2)
            .filter(|w| w[1].1 > w[0].1 + 1e-6 * w[0].1.abs().max(1.0))
            .map(|w| w[1].0)
            .collect();
        if !bad.is_empty() {
            eprintln!("hard objective increases with gamma at {bad:?}");
            if code == 0 {
                code = EXIT_THRESHOLD;
            }
        }
    }

    let table = output::sweep_csv(&rows).map_err(CliError::output)?;
    print!("{}", String::from_utf8_lossy(&table));
    artifacts.add("sweep.csv", table);
    artifacts.commit().map_err(CliError::output)?;
    Ok(code)
}

pub fn simulate(args: &SimulateArgs) -> CliResult<u8> {
    let mut artifacts = Artifacts::new(&args.out, "simulate");
    let (problem, bytes) = load(&args.problem)?;
    artifacts.input(&args.problem, &bytes);
    let problem = prepare(problem)?;
    let doc_bytes = read_input(&args.solution)?;
    artifacts.input(&args.solution, &doc_bytes);
    let doc: SolutionDoc = serde_json::from_slice(&doc_bytes)
        .map_err(|e| CliError::input(format!("{}: {e}", args.solution.display())))?;
    if let Some(d) = &doc.problem_digest {
        if *d != problem_digest(&problem) {
            return Err(CliError::input("solution was computed for a different problem"));
        }
    }
    let solution = doc.into_solution()?;
    let pol = &solution.policy;
    let sys = &problem.system;
    if (pol.n(), pol.m(), pol.horizon()) != (sys.n, sys.m, sys.horizon) {
        return Err(Error::Dimension(format!(
            "policy is for (n, m, T) = ({}, {}, {}), problem has ({}, {}, {})",
            pol.n(),
            pol.m(),
            pol.horizon(),
            sys.n,
            sys.m,
            sys.horizon
        ))
        .into());
    }
    if args.samples < 2 {
        return Err(Error::Range(format!("need at least 2 samples, got {}", args.samples)).into());
    }
    artifacts.setting("samples", args.samples);
    artifacts.setting("seed", args.seed);

    let lifted = build_lifted(sys)?;
    let analytic = moment_trajectory(pol, &lifted)?;
    let start = Instant::now();
    let stats = monte_carlo(sys, pol, args.samples, args.seed)?;
    let seconds = start.elapsed().as_secs_f64();
    let report = compare_moments(&analytic, &stats)?;
    let effort = expected_effort(pol, &lifted.sigma0, &lifted.big_w)?;

    let summary = output::summary_text(&report, effort, &stats);
    artifacts.add("mc_stats.csv", output::stats_csv(&analytic, &stats, &report).map_err(CliError::output)?);
    artifacts.add("mc_summary.txt", summary.clone().into_bytes());
    artifacts.commit().map_err(CliError::output)?;

    print!("{summary}");
    println!("simulation time: {seconds:.3} s");
    Ok(if report.passed() { 0 } else { EXIT_THRESHOLD })
}
