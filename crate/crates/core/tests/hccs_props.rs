mod common;

use common::*;
use covsteer::hccs::{build_hccs, check_terminal, lmi_matrix, solve_hccs};
use covsteer::lifting::build_lifted;
use covsteer::{linalg, policy, SolveStatus, SolverSettings, Variant};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn schur_complement_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut disagreements = 0;
    let mut negatives = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=2);
        let horizon = rng.gen_range(1..=5);
        let gamma = rng.gen_range(0..=horizon);
        let sys = random_system(&mut rng, n, m, horizon);
        let lifted = build_lifted(&sys).unwrap();
        let pol = random_policy(&mut rng, n, m, horizon, gamma, 0.5);
        let z = policy::zeta(&pol, &lifted).unwrap();
        let zz = &z * z.transpose();
        let c = rng.gen_range(0.8..1.25);
        let sd = &zz * c + random_spd(&mut rng, n, 0.0) * 0.01;
        let scale = sd.norm().max(1.0);
        let tol = 1e-9 * scale;
        let a = linalg::min_eigenvalue(&(&sd - &zz)).unwrap();
        let b = linalg::min_eigenvalue(&lmi_matrix(&sd, &z)).unwrap();
        if a < -tol {
            negatives += 1;
        }
        let in_band = a.abs() <= tol || b.abs() <= tol;
        if (a >= -tol) != (b >= -tol) && !in_band {
            disagreements += 1;
        }
    }
    assert_eq!(disagreements, 0);
    assert!(negatives > 20 && negatives < 180, "{negatives} negative instances");
}

fn feasible_problem(horizon: usize, gamma: usize) -> covsteer::SteeringProblem {
    let mut p = short_random_system(Variant::Hard, gamma, 0.0, horizon);
    p.target.covariance = DMatrix::from_row_slice(2, 2, &[40.0, -1.5, -1.5, 40.0]);
    p.target.mean = nalgebra::DVector::from_vec(vec![2.0, 0.0]);
    p
}

#[test]
fn objective_is_nonincreasing_in_gamma() {
    let horizon = 12;
    let settings = SolverSettings::default();
    let mut prev = f64::INFINITY;
    for gamma in 0..=horizon {
        let p = feasible_problem(horizon, gamma);
        let lifted = build_lifted(&p.system).unwrap();
        let sol = solve_hccs(&p, &lifted, &settings).unwrap();
        assert_eq!(sol.diagnostics.status, SolveStatus::Optimal, "gamma {gamma}");
        let slack = 10.0 * settings.gap_tol * prev.min(sol.objective).max(1.0);
        assert!(sol.objective <= prev + slack, "gamma {gamma}: {} after {prev}", sol.objective);
        prev = sol.objective;
    }
}

#[test]
fn solver_and_analytic_effort_agree() {
    for gamma in [0, 3, 8] {
        let p = feasible_problem(8, gamma);
        let lifted = build_lifted(&p.system).unwrap();
        let sol = solve_hccs(&p, &lifted, &SolverSettings::default()).unwrap();
        let reported = sol.diagnostics.solver_objective.unwrap();
        let analytic = policy::expected_effort(&sol.policy, &lifted.sigma0, &lifted.big_w).unwrap();
        assert!((reported - analytic).abs() <= 1e-6 * analytic, "{reported} vs {analytic}");
        let check = check_terminal(&sol, &p, &lifted).unwrap();
        assert!(check.within_tolerance(&p), "{check:?}");
        assert_eq!(check.mean_residual, sol.diagnostics.terminal_mean_residual);
    }
}

#[test]
fn masked_gains_stay_zero() {
    let p = feasible_problem(8, 2);
    let lifted = build_lifted(&p.system).unwrap();
    let sol = solve_hccs(&p, &lifted, &SolverSettings::default()).unwrap();
    let k = sol.policy.gain_k();
    let mask = sol.policy.mask();
    for i in 0..7 {
        for j in 0..7 {
            if !mask.keeps(i, j) {
                assert!(k.view(((i + 1), j * 2), (1, 2)).iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn singular_noise_is_supported() {
    let mut p = feasible_problem(8, 8);
    p.system.noise_cov = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.3]);
    let lifted = build_lifted(&p.system).unwrap();
    let program = build_hccs(&p, &lifted).unwrap();
    // pruned LMI: n + n (x₀ columns) + T·1 disturbance columns
    assert!(program.listing().contains(&format!("psd({})", 2 + 2 + 8)));
    let sol = solve_hccs(&p, &lifted, &SolverSettings::default()).unwrap();
    assert!(sol.is_optimal());
    assert!(check_terminal(&sol, &p, &lifted).unwrap().within_tolerance(&p));
}
