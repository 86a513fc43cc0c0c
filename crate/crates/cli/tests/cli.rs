use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use covsteer::lifting::build_lifted;
use covsteer::sccs::soft_objective;
use covsteer::{random_system_problem, Policy, Variant};
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_covsteer"))
}

fn problems() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Short two-state problem so solves stay fast.
fn write_short_problem(dir: &Path, variant: &str, rho: f64) -> PathBuf {
    let text = fs::read_to_string(problems().join("random_system_hard.toml"))
        .unwrap()
        .replace("T = 50", "T = 12")
        .replace("gamma = 50", "gamma = 12")
        .replace("Sigmad = [[4.0, -1.5], [-1.5, 4.0]]", "Sigmad = [[40.0, -1.5], [-1.5, 40.0]]")
        .replace("mud = [10.0, 0.0]", "mud = [2.0, 0.0]")
        .replace("rho = 0.0", &format!("rho = {rho}"))
        .replace("\"hard\"", &format!("\"{variant}\""));
    let path = dir.join(format!("short_{variant}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn assert_manifest_complete(dir: &Path) {
    let m = manifest(dir);
    let listed: Vec<String> = m["files"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap().to_string()).collect();
    for entry in fs::read_dir(dir).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name != "manifest.json" {
            assert!(listed.contains(&name), "{name} missing from manifest");
        }
    }
    for f in m["files"].as_array().unwrap() {
        let bytes = fs::read(dir.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), format!("{:x}", Sha256::digest(&bytes)));
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
}

#[test]
fn solve_hard_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let problem = write_short_problem(tmp.path(), "hard", 0.0);
    let out = tmp.path().join("out");
    let o = run(&["solve", s(&problem), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("status: optimal") && stdout.contains("objective:"));
    for name in ["solution.json", "moments.csv", "ellipses.csv", "manifest.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    assert!(!out.join("ccp_history.csv").exists());
    assert_manifest_complete(&out);

    let moments = fs::read_to_string(out.join("moments.csv")).unwrap();
    let lines: Vec<&str> = moments.lines().collect();
    assert_eq!(lines[0], "t,mu_0,mu_1,sigma_0_0,sigma_0_1,sigma_1_0,sigma_1_1");
    assert_eq!(lines.len(), 1 + 13);

    // ellipse axes are 2√λ of the covariance on the same row
    let ellipses = fs::read_to_string(out.join("ellipses.csv")).unwrap();
    for (m, e) in lines[1..].iter().zip(ellipses.lines().skip(1)) {
        let m: Vec<f64> = m.split(',').map(|v| v.parse().unwrap()).collect();
        let e: Vec<f64> = e.split(',').map(|v| v.parse().unwrap()).collect();
        let (a, b, c) = (m[3], m[4], m[6]);
        let mid = 0.5 * (a + c);
        let rad = (0.25 * (a - c).powi(2) + b * b).sqrt();
        assert!((e[3] - 2.0 * (mid + rad).sqrt()).abs() <= 1e-9 * e[3].max(1.0));
        assert!((e[4] - 2.0 * (mid - rad).max(0.0).sqrt()).abs() <= 1e-7 * e[3].max(1.0));
        assert_eq!((e[1], e[2]), (m[1], m[2]));
    }

    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    assert_eq!(doc["variant"], "hard");
    assert_eq!(doc["diagnostics"]["status"], "optimal");
    assert_eq!(doc["problem_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn invalid_file_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "n = 2\nm = 1\n").unwrap();
    let out = tmp.path().join("out");
    let o = run(&["solve", s(&bad), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());

    let missing = tmp.path().join("missing.toml");
    assert_eq!(code(&run(&["solve", s(&missing), "--out", s(&out)])), 2);
    assert!(!out.exists());
}

#[test]
fn out_of_range_overrides_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let problem = write_short_problem(tmp.path(), "hard", 0.0);
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&["sweep", s(&problem), "--gammas", "-1", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["solve", s(&problem), "--gamma", "13", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["solve", s(&problem), "--variant", "soft", "--rho", "-1", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["solve", s(&problem), "--gap-tol", "0", "--out", s(&out)])), 2);
    assert!(!out.exists());
}

#[test]
fn infeasible_hard_problem_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let problem = problems().join("random_system_hard.toml");
    let out = tmp.path().join("out");
    let o = run(&["solve", s(&problem), "--gamma", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    let doc = fs::read_to_string(out.join("solution.json")).unwrap();
    assert!(doc.contains("\"infeasible\""));
    assert!(!out.join("moments.csv").exists());
    assert_manifest_complete(&out);
}

#[test]
fn soft_with_zero_budget_returns_zero_policy_objective() {
    let tmp = tempfile::tempdir().unwrap();
    let problem = write_short_problem(tmp.path(), "soft", 0.0);
    let out = tmp.path().join("out");
    let o = run(&["solve", s(&problem), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    let reported = doc["objective"].as_f64().unwrap();

    let mut p = covsteer::load_problem(&problem).unwrap();
    p.rho = 0.0;
    let lifted = build_lifted(&p.system).unwrap();
    let zero = Policy::zero(2, 1, 12, 12).unwrap();
    let expected = soft_objective(&zero, &p, &lifted).unwrap().total;
    assert!((reported - expected).abs() <= 1e-9 * expected);
}

#[test]
fn soft_solve_writes_history() {
    let tmp = tempfile::tempdir().unwrap();
    let problem = write_short_problem(tmp.path(), "soft", 30.0);
    let out = tmp.path().join("out");
    let o = run(&["solve", s(&problem), "--init", "zero", "--epsilon", "1e-4", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let hist = fs::read_to_string(out.join("ccp_history.csv")).unwrap();
    let f: Vec<f64> = hist.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(f.len() >= 2);
    assert!(f.windows(2).all(|w| w[1] <= w[0] + 1e-7));
    assert!((f[f.len() - 1] - f[f.len() - 2]).abs() <= 1e-4);
    let m = manifest(&out);
    assert_eq!(m["settings"]["init"], "zero");
    assert_eq!(m["settings"]["epsilon"], "0.0001");
}

#[test]
fn sweep_single_gamma_is_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let problem = write_short_problem(tmp.path(), "hard", 0.0);
    let out = tmp.path().join("out");
    let o = run(&["sweep", s(&problem), "--gammas", "4", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "gamma,hard_objective,hard_time,soft_objective,soft_time");
    assert!(lines[1].starts_with("4,") && lines[1].ends_with(",,"));
}

fn objectives(table: &str) -> Vec<String> {
    // objective columns only; times vary between runs
    table
        .lines()
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            format!("{},{},{}", c[0], c[1], c[3])
        })
        .collect()
}

#[test]
fn sweep_is_monotone_and_independent_of_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let problem = write_short_problem(tmp.path(), "hard", 25.0);
    let (o1, o4) = (tmp.path().join("j1"), tmp.path().join("j4"));
    let gammas = "0,2,4,6,8,12";
    let a = run(&["sweep", s(&problem), "--gammas", gammas, "--both", "--jobs", "1", "--out", s(&o1)]);
    let b = run(&["sweep", s(&problem), "--gammas", gammas, "--both", "--jobs", "4", "--out", s(&o4)]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(code(&b), 0);
    let ta = fs::read_to_string(o1.join("sweep.csv")).unwrap();
    let tb = fs::read_to_string(o4.join("sweep.csv")).unwrap();
    assert_eq!(objectives(&ta), objectives(&tb));
    let hard: Vec<f64> = ta.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(hard.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6)));
    assert_manifest_complete(&o1);
}

#[test]
fn sweep_records_infeasible_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let problem = problems().join("random_system_hard.toml");
    let out = tmp.path().join("out");
    let o = run(&["sweep", s(&problem), "--gammas", "0,50", "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("0,infeasible,"));
    assert!(table.lines().nth(2).unwrap().starts_with("50,76220."));
}

fn solve_short_hard(dir: &Path) -> (PathBuf, PathBuf) {
    let problem = write_short_problem(dir, "hard", 0.0);
    let out = dir.join("solved");
    let o = run(&["solve", s(&problem), "--gamma", "6", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    (problem, out.join("solution.json"))
}

#[test]
fn simulate_passes_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (problem, solution) = solve_short_hard(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let oa = run(&["simulate", s(&problem), s(&solution), "-N", "20000", "--seed", "9", "--out", s(&a)]);
    let ob = run(&["simulate", s(&problem), s(&solution), "-N", "20000", "--seed", "9", "--out", s(&b)]);
    assert_eq!(code(&oa), 0, "{}", String::from_utf8_lossy(&oa.stdout));
    assert_eq!(code(&ob), 0);
    assert_eq!(fs::read(a.join("mc_stats.csv")).unwrap(), fs::read(b.join("mc_stats.csv")).unwrap());
    assert!(fs::read_to_string(a.join("mc_summary.txt")).unwrap().starts_with("result: pass"));
    assert_manifest_complete(&a);
}

#[test]
fn simulate_small_sample_warns() {
    let tmp = tempfile::tempdir().unwrap();
    let (problem, solution) = solve_short_hard(tmp.path());
    let out = tmp.path().join("sim");
    let o = run(&["simulate", s(&problem), s(&solution), "-N", "10", "--out", s(&out)]);
    let summary = fs::read_to_string(out.join("mc_summary.txt")).unwrap();
    assert!(summary.contains("warning:"), "{summary}");
    assert!([0, 5].contains(&code(&o)));
    assert_eq!(code(&run(&["simulate", s(&problem), s(&solution), "-N", "1", "--out", s(&tmp.path().join("n1"))])), 2);
    assert!(!tmp.path().join("n1").exists());
}

#[test]
fn simulate_rejects_solution_of_another_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, solution) = solve_short_hard(tmp.path());
    let other = tmp.path().join("other.toml");
    let text = fs::read_to_string(write_short_problem(tmp.path(), "hard", 0.0))
        .unwrap()
        .replace("mud = [2.0, 0.0]", "mud = [2.5, 0.0]");
    fs::write(&other, text).unwrap();
    let out = tmp.path().join("sim");
    assert_eq!(code(&run(&["simulate", s(&other), s(&solution), "-N", "100", "--out", s(&out)])), 2);
    assert_eq!(code(&run(&["simulate", s(&problems().join("random_system_hard.toml")), s(&solution), "--out", s(&out)])), 2);
    assert!(!out.exists());
}

#[test]
fn solve_outputs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let problem = write_short_problem(tmp.path(), "soft", 20.0);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&["solve", s(&problem), "--out", s(&a)])), 0);
    assert_eq!(code(&run(&["solve", s(&problem), "--out", s(&b)])), 0);
    for name in ["moments.csv", "ellipses.csv", "ccp_history.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn bundled_problem_files_match_the_builtin_system() {
    let hard = covsteer::load_problem(problems().join("random_system_hard.toml")).unwrap();
    assert_eq!(hard, random_system_problem(Variant::Hard, 50, 0.0));
    let soft = covsteer::load_problem(problems().join("random_system_soft.toml")).unwrap();
    assert_eq!(soft.variant, Variant::Soft);
    assert_eq!(soft.system, hard.system);
}
