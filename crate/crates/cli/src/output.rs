//! Plot-ready CSV tables.

use covsteer::simulate::MomentReport;
use covsteer::solution::CcpRecord;
use covsteer::{MomentTrajectory, SampleStats};
use nalgebra::{DMatrix, SymmetricEigen};

fn writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory writer")
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// `t, mu_0.., sigma_0_0, sigma_0_1, ..` with the covariance row-major.
pub fn moments_csv(traj: &MomentTrajectory) -> csv::Result<Vec<u8>> {
    let n = traj.means[0].len();
    let mut w = writer();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("mu_{i}")));
    for i in 0..n {
        header.extend((0..n).map(|j| format!("sigma_{i}_{j}")));
    }
    w.write_record(&header)?;
    for (t, (mu, cov)) in traj.means.iter().zip(&traj.covariances).enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(mu.iter().map(|&v| num(v)));
        for i in 0..n {
            row.extend((0..n).map(|j| num(cov[(i, j)])));
        }
        w.write_record(&row)?;
    }
    Ok(finish(w))
}

/// Semi-axes `2√λ` and major-axis angle of the 2σ ellipse of a 2×2 covariance.
pub fn two_sigma_ellipse(cov: &DMatrix<f64>) -> (f64, f64, f64) {
    let eig = SymmetricEigen::new(cov.clone());
    let (major, minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let v = eig.eigenvectors.column(major);
    let mut angle = v[1].atan2(v[0]);
    if angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    } else if angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    }
    let axis = |l: f64| 2.0 * l.max(0.0).sqrt();
    (axis(eig.eigenvalues[major]), axis(eig.eigenvalues[minor]), angle)
}

/// `t, center_x, center_y, semi_major, semi_minor, angle`; only for two-state systems.
pub fn ellipse_csv(traj: &MomentTrajectory) -> csv::Result<Option<Vec<u8>>> {
    if traj.means[0].len() != 2 {
        return Ok(None);
    }
    let mut w = writer();
    w.write_record(["t", "center_x", "center_y", "semi_major", "semi_minor", "angle"])?;
    for (t, (mu, cov)) in traj.means.iter().zip(&traj.covariances).enumerate() {
        let (a, b, th) = two_sigma_ellipse(cov);
        w.write_record([t.to_string(), num(mu[0]), num(mu[1]), num(a), num(b), num(th)])?;
    }
    Ok(Some(finish(w)))
}

pub fn history_csv(history: &[CcpRecord]) -> csv::Result<Vec<u8>> {
    let mut w = writer();
    w.write_record(["k", "objective"])?;
    for r in history {
        w.write_record([r.k.to_string(), num(r.objective)])?;
    }
    Ok(finish(w))
}

/// One cell pair of the sweep table: objective (or status) and seconds.
#[derive(Debug, Clone)]
pub enum SweepCell {
    Skipped,
    Solved { objective: f64, seconds: f64 },
    Failed { status: String, seconds: f64 },
}

impl SweepCell {
    fn fields(&self) -> [String; 2] {
        match self {
            SweepCell::Skipped => [String::new(), String::new()],
            SweepCell::Solved { objective, seconds } => [num(*objective), format!("{seconds:.4}")],
            SweepCell::Failed { status, seconds } => [status.clone(), format!("{seconds:.4}")],
        }
    }
}

pub fn sweep_csv(rows: &[(usize, SweepCell, SweepCell)]) -> csv::Result<Vec<u8>> {
    let mut w = writer();
    w.write_record(["gamma", "hard_objective", "hard_time", "soft_objective", "soft_time"])?;
    for (g, hard, soft) in rows {
        let [ho, ht] = hard.fields();
        let [so, st] = soft.fields();
        w.write_record([g.to_string(), ho, ht, so, st])?;
    }
    Ok(finish(w))
}

/// Per-stage sample moments next to the analytic ones.
pub fn stats_csv(analytic: &MomentTrajectory, sample: &SampleStats, report: &MomentReport) -> csv::Result<Vec<u8>> {
    let n = analytic.means[0].len();
    let mut w = writer();
    let mut header = vec!["t".to_string()];
    for prefix in ["sample_mu", "analytic_mu", "se_mu"] {
        header.extend((0..n).map(|i| format!("{prefix}_{i}")));
    }
    for i in 0..n {
        header.extend((0..n).map(|j| format!("sample_sigma_{i}_{j}")));
    }
    header.extend(["max_mean_dev_se", "cov_rel_err", "flagged"].map(String::from));
    w.write_record(&header)?;
    for stage in &report.stages {
        let t = stage.t;
        let se = sample.mean_se(t);
        let mut row = vec![t.to_string()];
        row.extend(sample.mean_t[t].iter().map(|&v| num(v)));
        row.extend(analytic.means[t].iter().map(|&v| num(v)));
        row.extend(se.iter().map(|&v| num(v)));
        for i in 0..n {
            row.extend((0..n).map(|j| num(sample.cov_t[t][(i, j)])));
        }
        row.push(num(stage.max_mean_dev_se()));
        row.push(num(stage.cov_rel_err));
        row.push(stage.flagged.to_string());
        w.write_record(&row)?;
    }
    Ok(finish(w))
}

pub fn summary_text(report: &MomentReport, effort_expected: f64, sample: &SampleStats) -> String {
    let flagged = report.flagged_stages();
    let mut s = String::new();
    s.push_str(&format!("result: {}\n", if report.passed() { "pass" } else { "fail" }));
    s.push_str(&format!("samples: {}\n", report.n_samples));
    s.push_str(&format!(
        "thresholds: mean {} SE, covariance {}% relative\n",
        covsteer::simulate::MEAN_SE_THRESHOLD,
        covsteer::simulate::COV_REL_THRESHOLD * 100.0
    ));
    let worst_mean = report.stages.iter().map(|s| s.max_mean_dev_se()).fold(0.0, f64::max);
    let worst_cov = report.stages.iter().map(|s| s.cov_rel_err).fold(0.0, f64::max);
    s.push_str(&format!("worst mean deviation: {worst_mean:.3} SE\n"));
    s.push_str(&format!("worst covariance error: {:.3}%\n", worst_cov * 100.0));
    s.push_str(&format!(
        "effort: expected {effort_expected}, sample {} (SE {})\n",
        sample.effort_mean, sample.effort_se
    ));
    if !flagged.is_empty() {
        s.push_str(&format!("flagged stages: {flagged:?}\n"));
    }
    for warning in &report.warnings {
        s.push_str(&format!("warning: {warning}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipse_of_diagonal_covariance() {
        let c = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let (a, b, th) = two_sigma_ellipse(&c);
        assert!((a - 4.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
        assert!(th.abs() < 1e-12);
    }

    #[test]
    fn ellipse_of_rotated_covariance() {
        let c = DMatrix::from_row_slice(2, 2, &[4.0, -1.5, -1.5, 4.0]);
        let (a, b, th) = two_sigma_ellipse(&c);
        assert!((a - 2.0 * 5.5f64.sqrt()).abs() < 1e-12);
        assert!((b - 2.0 * 2.5f64.sqrt()).abs() < 1e-12);
        assert!((th + std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn sweep_status_rows() {
        let rows = vec![
            (0, SweepCell::Failed { status: "infeasible".into(), seconds: 0.5 }, SweepCell::Skipped),
            (5, SweepCell::Solved { objective: 2.5, seconds: 1.0 }, SweepCell::Skipped),
        ];
        let text = String::from_utf8(sweep_csv(&rows).unwrap()).unwrap();
        assert_eq!(
            text,
            "gamma,hard_objective,hard_time,soft_objective,soft_time\n0,infeasible,0.5000,,\n5,2.5,1.0000,,\n"
        );
    }
}
