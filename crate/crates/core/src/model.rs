//! Problem data model, validation and problem-file I/O.
//!
//! Problem files are TOML (human-readable) or JSON with the same field names.
//! `A` and `B` may each be a single matrix, replicated across the horizon, or
//! a list of `T` matrices.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianSpec {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self { mean, covariance }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Discrete-time linear system `x(t+1) = A(t) x(t) + B(t) u(t) + w(t)` over `T` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    /// Per-step disturbance covariance `W`.
    pub noise_cov: DMatrix<f64>,
    pub init: GaussianSpec,
}

impl SystemModel {
    /// Time-invariant model with `A`, `B` replicated across the horizon.
    pub fn time_invariant(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
        init: GaussianSpec,
        horizon: usize,
    ) -> Self {
        Self {
            n: a.nrows(),
            m: b.ncols(),
            horizon,
            a: vec![a; horizon],
            b: vec![b; horizon],
            noise_cov,
            init,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Hard,
    Soft,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Hard => "hard",
            Variant::Soft => "soft",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Variant::Hard),
            "soft" => Ok(Variant::Soft),
            other => Err(Error::Schema(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringProblem {
    pub system: SystemModel,
    pub target: GaussianSpec,
    /// Effort budget, only used by the soft variant.
    pub rho: f64,
    /// Disturbance-history truncation window.
    pub gamma: usize,
    pub variant: Variant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Inconsistent dimensions or counts.
    Shape,
    /// Entry values break an invariant (symmetry, definiteness, range).
    Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Result of [`validate`]. Notes are informational and do not make a problem invalid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub notes: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_violation(&self, field: &str) -> bool {
        self.violations.iter().any(|v| v.field == field)
    }

    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.push_kind(field, ViolationKind::Value, message);
    }

    fn push_shape(&mut self, field: &str, message: impl Into<String>) {
        self.push_kind(field, ViolationKind::Shape, message);
    }

    fn push_kind(&mut self, field: &str, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.to_string(),
            kind,
            message: message.into(),
        });
    }

    fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let msg: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
            Err(Error::Validation(msg.join("; ")))
        }
    }
}

fn check_finite(report: &mut ValidationReport, field: &str, values: &[f64]) -> bool {
    if values.iter().all(|v| v.is_finite()) {
        true
    } else {
        report.push(field, "contains non-finite entries");
        false
    }
}

fn check_shape(report: &mut ValidationReport, field: &str, m: &DMatrix<f64>, r: usize, c: usize) -> bool {
    if m.shape() == (r, c) {
        true
    } else {
        report.push_shape(field, format!("expected {r}x{c}, got {}x{}", m.nrows(), m.ncols()));
        false
    }
}

fn check_symmetric(report: &mut ValidationReport, field: &str, m: &DMatrix<f64>) -> bool {
    if linalg::is_symmetric(m, SYMMETRY_TOL) {
        true
    } else {
        report.push(field, "not symmetric");
        false
    }
}

fn check_pd(report: &mut ValidationReport, field: &str, m: &DMatrix<f64>) {
    match linalg::min_eigenvalue(m) {
        Ok(l) if l > 0.0 => {}
        Ok(l) => report.push(field, format!("not positive definite (min eigenvalue {l:e})")),
        Err(e) => report.push(field, e.to_string()),
    }
}

/// Lists every violated invariant of the problem; never fails.
pub fn validate(problem: &SteeringProblem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let sys = &problem.system;
    let (n, m, t) = (sys.n, sys.m, sys.horizon);

    if n == 0 {
        report.push("n", "state dimension must be at least 1");
    }
    if m == 0 {
        report.push("m", "input dimension must be at least 1");
    }
    if t == 0 {
        report.push("T", "horizon must be at least 1");
    }
    if sys.a.len() != t {
        report.push_shape("A", format!("expected {t} matrices, got {}", sys.a.len()));
    }
    if sys.b.len() != t {
        report.push_shape("B", format!("expected {t} matrices, got {}", sys.b.len()));
    }
    for (k, a) in sys.a.iter().enumerate() {
        let f = format!("A[{k}]");
        if check_shape(&mut report, &f, a, n, n) {
            check_finite(&mut report, &f, a.as_slice());
        }
    }
    for (k, b) in sys.b.iter().enumerate() {
        let f = format!("B[{k}]");
        if check_shape(&mut report, &f, b, n, m) {
            check_finite(&mut report, &f, b.as_slice());
        }
    }

    let w = &sys.noise_cov;
    if check_shape(&mut report, "W", w, n, n)
        && check_finite(&mut report, "W", w.as_slice())
        && check_symmetric(&mut report, "W", w)
    {
        match linalg::min_eigenvalue(w) {
            Ok(l) if l >= -PSD_TOL * w.norm() => {}
            Ok(l) => report.push("W", format!("not positive semidefinite (min eigenvalue {l:e})")),
            Err(e) => report.push("W", e.to_string()),
        }
    }

    for (prefix, spec) in [("mu0", &sys.init), ("mud", &problem.target)] {
        let cov_field = if prefix == "mu0" { "Sigma0" } else { "Sigmad" };
        if spec.mean.len() != n {
            report.push_shape(prefix, format!("expected length {n}, got {}", spec.mean.len()));
        } else {
            check_finite(&mut report, prefix, spec.mean.as_slice());
        }
        let c = &spec.covariance;
        if check_shape(&mut report, cov_field, c, n, n)
            && check_finite(&mut report, cov_field, c.as_slice())
            && check_symmetric(&mut report, cov_field, c)
        {
            check_pd(&mut report, cov_field, c);
        }
    }

    if problem.gamma > t {
        report.push("gamma", format!("must lie in [0, {t}], got {}", problem.gamma));
    }
    if !(problem.rho.is_finite() && problem.rho >= 0.0) {
        report.push("rho", format!("must be a nonnegative real, got {}", problem.rho));
    }
    if problem.variant == Variant::Hard && problem.rho != 0.0 {
        report.notes.push(Violation {
            field: "rho".into(),
            kind: ViolationKind::Value,
            message: "effort budget is ignored by the hard variant".into(),
        });
    }
    report
}

/// Validates and conditions the problem: the noise covariance is clamped to exact PSD.
pub fn prepare(mut problem: SteeringProblem) -> Result<SteeringProblem> {
    validate(&problem).into_result()?;
    let w = &problem.system.noise_cov;
    if linalg::min_eigenvalue(w)? < 0.0 {
        problem.system.noise_cov = linalg::clamp_psd(w)?;
    }
    Ok(problem)
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixSeq {
    Single(Vec<Vec<f64>>),
    PerStage(Vec<Vec<Vec<f64>>>),
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    n: usize,
    m: usize,
    T: usize,
    A: MatrixSeq,
    B: MatrixSeq,
    W: Vec<Vec<f64>>,
    mu0: Vec<f64>,
    Sigma0: Vec<Vec<f64>>,
    mud: Vec<f64>,
    Sigmad: Vec<Vec<f64>>,
    rho: f64,
    gamma: i64,
    variant: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Toml,
    Json,
}

impl FileFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => FileFormat::Json,
            _ => FileFormat::Toml,
        }
    }
}

fn classify(msg: String) -> Error {
    if msg.contains("missing field") || msg.contains("unknown field") {
        Error::Schema(msg)
    } else {
        Error::Parse(msg)
    }
}

fn expand(seq: MatrixSeq, horizon: usize, what: &str) -> Result<Vec<DMatrix<f64>>> {
    match seq {
        MatrixSeq::Single(rows) => Ok(vec![linalg::from_rows(&rows, what)?; horizon]),
        MatrixSeq::PerStage(list) => {
            if list.len() != horizon {
                return Err(Error::Dimension(format!(
                    "{what}: expected {horizon} matrices, got {}",
                    list.len()
                )));
            }
            list.iter().map(|r| linalg::from_rows(r, what)).collect()
        }
    }
}

fn collapse(mats: &[DMatrix<f64>]) -> MatrixSeq {
    match mats.first() {
        Some(first) if mats.iter().all(|m| m == first) => MatrixSeq::Single(linalg::to_rows(first)),
        _ => MatrixSeq::PerStage(mats.iter().map(linalg::to_rows).collect()),
    }
}

impl ProblemFile {
    fn into_problem(self) -> Result<SteeringProblem> {
        let gamma = usize::try_from(self.gamma)
            .map_err(|_| Error::Range(format!("gamma must be nonnegative, got {}", self.gamma)))?;
        let variant: Variant = self.variant.parse()?;
        let a = expand(self.A, self.T, "A")?;
        let b = expand(self.B, self.T, "B")?;
        let problem = SteeringProblem {
            system: SystemModel {
                n: self.n,
                m: self.m,
                horizon: self.T,
                a,
                b,
                noise_cov: linalg::from_rows(&self.W, "W")?,
                init: GaussianSpec::new(
                    DVector::from_vec(self.mu0),
                    linalg::from_rows(&self.Sigma0, "Sigma0")?,
                ),
            },
            target: GaussianSpec::new(
                DVector::from_vec(self.mud),
                linalg::from_rows(&self.Sigmad, "Sigmad")?,
            ),
            rho: self.rho,
            gamma,
            variant,
        };
        // Shape problems are reported as dimension errors rather than validation failures.
        let report = validate(&problem);
        let shape_msgs: Vec<String> = report
            .violations
            .iter()
            .filter(|v| v.kind == ViolationKind::Shape)
            .map(ToString::to_string)
            .collect();
        if !shape_msgs.is_empty() {
            return Err(Error::Dimension(shape_msgs.join("; ")));
        }
        prepare(problem)
    }

    fn from_problem(p: &SteeringProblem) -> Self {
        let s = &p.system;
        Self {
            n: s.n,
            m: s.m,
            T: s.horizon,
            A: collapse(&s.a),
            B: collapse(&s.b),
            W: linalg::to_rows(&s.noise_cov),
            mu0: s.init.mean.iter().copied().collect(),
            Sigma0: linalg::to_rows(&s.init.covariance),
            mud: p.target.mean.iter().copied().collect(),
            Sigmad: linalg::to_rows(&p.target.covariance),
            rho: p.rho,
            gamma: p.gamma as i64,
            variant: p.variant.to_string(),
        }
    }
}

pub fn parse_problem(text: &str, format: FileFormat) -> Result<SteeringProblem> {
    let file: ProblemFile = match format {
        FileFormat::Toml => toml::from_str(text).map_err(|e| classify(e.to_string()))?,
        FileFormat::Json => serde_json::from_str(text).map_err(|e| classify(e.to_string()))?,
    };
    file.into_problem()
}

/// Reads, validates and conditions a problem file. The format follows the extension.
pub fn load_problem(path: impl AsRef<Path>) -> Result<SteeringProblem> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_problem(&text, FileFormat::from_path(path))
}

pub fn emit_problem(problem: &SteeringProblem, format: FileFormat) -> Result<String> {
    let file = ProblemFile::from_problem(problem);
    match format {
        FileFormat::Toml => toml::to_string(&file).map_err(|e| Error::Parse(e.to_string())),
        FileFormat::Json => serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string())),
    }
}

/// Stable digest input: the canonical JSON rendering of the problem.
pub fn canonical_json(problem: &SteeringProblem) -> String {
    serde_json::to_string(&ProblemFile::from_problem(problem)).expect("problem serializes")
}

/// The random two-state system used in the numerical experiments, with `T = 50`.
pub fn random_system_problem(variant: Variant, gamma: usize, rho: f64) -> SteeringProblem {
    let a = DMatrix::from_row_slice(2, 2, &[1.1, -0.07, 0.23, -0.87]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
    let w = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.3]);
    let init = GaussianSpec::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::identity(2, 2));
    SteeringProblem {
        system: SystemModel::time_invariant(a, b, w, init, 50),
        target: GaussianSpec::new(
            DVector::from_vec(vec![10.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[4.0, -1.5, -1.5, 4.0]),
        ),
        rho,
        gamma,
        variant,
    }
}
