//! Solver-agnostic cone programs.
//!
//! A [`ConicProgram`] minimizes a linear objective over scalar variables subject to
//! affine expressions lying in standard cones. PSD blocks are vectorized as the
//! lower triangle, row by row, with off-diagonal entries scaled by `√2` so that
//! inner products are preserved. [`solve`] is the single entry point to the engine.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

// Link the system OpenBLAS used by the PSD cone kernels.
extern crate openblas_src;

/// Sparse affine functional `Σ cᵢ xᵢ + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        Self::term(i, 1.0)
    }

    pub fn term(i: usize, c: f64) -> Self {
        Self { terms: vec![(i, c)], constant: 0.0 }
    }

    pub fn add_term(&mut self, i: usize, c: f64) {
        if c != 0.0 {
            self.terms.push((i, c));
        }
    }

    pub fn add_expr(&mut self, other: &AffineExpr, scale: f64) {
        self.constant += scale * other.constant;
        for &(i, c) in &other.terms {
            self.add_term(i, scale * c);
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut e = AffineExpr::constant(0.0);
        e.add_expr(self, s);
        e
    }

    /// Merges repeated variables, sorts by index and drops exact zeros.
    pub fn canonical(&self) -> Self {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for &(i, c) in &self.terms {
            *map.entry(i).or_default() += c;
        }
        Self {
            terms: map.into_iter().filter(|&(_, c)| c != 0.0).collect(),
            constant: self.constant,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|&(i, _)| i).max()
    }

    fn approx_eq(&self, other: &AffineExpr) -> bool {
        let a = self.canonical();
        let b = other.canonical();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()));
        close(a.constant, b.constant)
            && a.terms.len() == b.terms.len()
            && a.terms.iter().zip(&b.terms).all(|(p, q)| p.0 == q.0 && close(p.1, q.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// All rows equal zero.
    Zero,
    Nonnegative,
    /// `(t, x)` with `t ≥ ‖x‖`.
    SecondOrder,
    /// `(u, v, x)` with `2uv ≥ ‖x‖²`, `u, v ≥ 0`.
    RotatedSecondOrder,
    /// Scaled lower-triangular vectorization of a `dim × dim` symmetric matrix.
    Psd { dim: usize },
}

impl Cone {
    fn tag(&self) -> String {
        match self {
            Cone::Zero => "zero".into(),
            Cone::Nonnegative => "nonneg".into(),
            Cone::SecondOrder => "soc".into(),
            Cone::RotatedSecondOrder => "rsoc".into(),
            Cone::Psd { dim } => format!("psd({dim})"),
        }
    }

    fn accepts_len(&self, len: usize) -> bool {
        match self {
            Cone::Zero | Cone::Nonnegative => len >= 1,
            Cone::SecondOrder => len >= 1,
            Cone::RotatedSecondOrder => len >= 2,
            Cone::Psd { dim } => len == dim * (dim + 1) / 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub rows: Vec<AffineExpr>,
    pub cone: Cone,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarBlock {
    pub name: String,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    num_vars: usize,
    pub objective: AffineExpr,
    pub constraints: Vec<Constraint>,
    names: Vec<VarBlock>,
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Scaled lower-triangular vectorization.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in 0..=i {
            out.push(if i == j { m[(i, i)] } else { SQRT_2 * m[(i, j)] });
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`svec`].
pub fn smat(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let len = v.len();
    let d = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if d * (d + 1) / 2 != len {
        return Err(Error::Dimension(format!("{len} is not a triangular number")));
    }
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            let x = if i == j { v[k] } else { v[k] / SQRT_2 };
            m[(i, j)] = x;
            m[(j, i)] = x;
            k += 1;
        }
    }
    Ok(m)
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn var_blocks(&self) -> &[VarBlock] {
        &self.names
    }

    /// Allocates a named block of `count` fresh variables.
    pub fn add_variables(&mut self, name: &str, count: usize) -> Range<usize> {
        let range = self.num_vars..self.num_vars + count;
        self.num_vars += count;
        self.names.push(VarBlock {
            name: name.to_string(),
            range: range.clone(),
        });
        range
    }

    pub fn block(&self, name: &str) -> Option<Range<usize>> {
        self.names.iter().find(|b| b.name == name).map(|b| b.range.clone())
    }

    fn check_expr(&self, e: &AffineExpr) -> Result<()> {
        match e.max_index() {
            Some(i) if i >= self.num_vars => Err(Error::Index(format!(
                "variable {i} out of range ({} variables)",
                self.num_vars
            ))),
            _ => Ok(()),
        }
    }

    pub fn add_constraint(&mut self, rows: Vec<AffineExpr>, cone: Cone) -> Result<()> {
        if !cone.accepts_len(rows.len()) {
            return Err(Error::Dimension(format!(
                "cone {} cannot hold {} rows",
                cone.tag(),
                rows.len()
            )));
        }
        for r in &rows {
            self.check_expr(r)?;
        }
        self.constraints.push(Constraint {
            rows: rows.into_iter().map(|r| r.canonical()).collect(),
            cone,
        });
        Ok(())
    }

    pub fn add_equalities(&mut self, rows: Vec<AffineExpr>) -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        self.add_constraint(rows, Cone::Zero)
    }

    /// Adds `t ≥ ‖x‖²` as a rotated second-order cone.
    pub fn add_quad_epigraph(&mut self, x: &[AffineExpr], t: AffineExpr) -> Result<()> {
        self.add_quad_epigraph_scaled(x, t, 1.0)
    }

    /// Same set as [`Self::add_quad_epigraph`], written as `(t/s, s/2, x)`.
    /// A scale near `√(2t)` at the optimum keeps the cone well conditioned.
    pub fn add_quad_epigraph_scaled(&mut self, x: &[AffineExpr], t: AffineExpr, scale: f64) -> Result<()> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Range(format!("epigraph scale must be positive, got {scale}")));
        }
        let mut rows = Vec::with_capacity(x.len() + 2);
        rows.push(t.scaled(1.0 / scale));
        rows.push(AffineExpr::constant(0.5 * scale));
        rows.extend(x.iter().cloned());
        self.add_constraint(rows, Cone::RotatedSecondOrder)
    }

    /// Variable-index form of [`Self::add_quad_epigraph`].
    pub fn add_quad_epigraph_vars(&mut self, x_indices: &[usize], t_index: usize) -> Result<()> {
        let x: Vec<AffineExpr> = x_indices.iter().map(|&i| AffineExpr::var(i)).collect();
        self.add_quad_epigraph(&x, AffineExpr::var(t_index))
    }

    /// Adds PSD membership of the affine symmetric `d × d` matrix given row-major in `entries`.
    pub fn add_psd_block(&mut self, entries: &[AffineExpr], d: usize) -> Result<()> {
        if entries.len() != d * d {
            return Err(Error::Dimension(format!(
                "PSD block of size {d} needs {} entries, got {}",
                d * d,
                entries.len()
            )));
        }
        for i in 0..d {
            for j in 0..i {
                if !entries[i * d + j].approx_eq(&entries[j * d + i]) {
                    return Err(Error::Asymmetric(i, j));
                }
            }
        }
        let mut rows = Vec::with_capacity(d * (d + 1) / 2);
        for i in 0..d {
            for j in 0..=i {
                let e = &entries[i * d + j];
                rows.push(if i == j { e.clone() } else { e.scaled(SQRT_2) });
            }
        }
        self.add_constraint(rows, Cone::Psd { dim: d })
    }

    /// Checks the structural invariants of the program.
    pub fn validate(&self) -> Result<()> {
        self.check_expr(&self.objective)?;
        for c in &self.constraints {
            if !c.cone.accepts_len(c.rows.len()) {
                return Err(Error::Dimension(format!("cone {} has {} rows", c.cone.tag(), c.rows.len())));
            }
            for r in &c.rows {
                self.check_expr(r)?;
            }
        }
        let mut ranges: Vec<&Range<usize>> = self.names.iter().map(|b| &b.range).collect();
        ranges.sort_by_key(|r| r.start);
        let mut next = 0;
        for r in ranges {
            if r.start != next {
                return Err(Error::Build("variable name table has gaps or overlaps".into()));
            }
            next = r.end;
        }
        if next != self.num_vars {
            return Err(Error::Build("variable name table does not cover all variables".into()));
        }
        Ok(())
    }

    /// Plain-text standard-form listing: the objective, then one constraint per line.
    pub fn listing(&self) -> String {
        self.to_string()
    }
}

fn fmt_expr(e: &AffineExpr) -> String {
    let mut s = format!("{:e}", e.constant);
    for &(i, c) in &e.terms {
        s.push_str(&format!(" {:+e}*x{}", c, i));
    }
    s
}

impl fmt::Display for ConicProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vars {}", self.num_vars)?;
        for b in &self.names {
            writeln!(f, "block {} {}..{}", b.name, b.range.start, b.range.end)?;
        }
        writeln!(f, "minimize {}", fmt_expr(&self.objective))?;
        for c in &self.constraints {
            let rows: Vec<String> = c.rows.iter().map(fmt_expr).collect();
            writeln!(f, "{} [{}]", c.cone.tag(), rows.join("; "))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Solving

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 100_000,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericLimit,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericLimit => "numeric-limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub objective_value: f64,
    /// Present iff `status` is optimal.
    pub primal: Option<Vec<f64>>,
    /// Largest absolute violation of the equality rows at `primal`.
    pub equality_residual: f64,
    pub solve_time: f64,
    pub iterations: u32,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

fn push_row(
    e: &AffineExpr,
    row: usize,
    scale: f64,
    ii: &mut Vec<usize>,
    jj: &mut Vec<usize>,
    vv: &mut Vec<f64>,
) {
    for &(j, c) in &e.terms {
        ii.push(row);
        jj.push(j);
        vv.push(-scale * c);
    }
}

/// Solves the program with the interior-point engine.
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> Result<ConicSolution> {
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{
        DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
    };

    program.validate()?;
    let started = Instant::now();
    let nvars = program.num_vars;

    let mut ii = Vec::new();
    let mut jj = Vec::new();
    let mut vv = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::with_capacity(program.constraints.len());

    // Engine convention: s = b − A x ∈ K. Each expression a·x + c becomes A = −a, b = c.
    for c in &program.constraints {
        match c.cone {
            Cone::RotatedSecondOrder => {
                // 2uv ≥ ‖x‖²  ⇔  ((u+v)/√2, (u−v)/√2, x) ∈ SOC.
                let (u, v) = (&c.rows[0], &c.rows[1]);
                let mut plus = u.clone();
                plus.add_expr(v, 1.0);
                let mut minus = u.clone();
                minus.add_expr(v, -1.0);
                let h = 1.0 / SQRT_2;
                for e in [plus, minus].iter() {
                    let row = b.len();
                    push_row(e, row, h, &mut ii, &mut jj, &mut vv);
                    b.push(h * e.constant);
                }
                for e in &c.rows[2..] {
                    let row = b.len();
                    push_row(e, row, 1.0, &mut ii, &mut jj, &mut vv);
                    b.push(e.constant);
                }
                cones.push(SupportedConeT::SecondOrderConeT(c.rows.len()));
            }
            cone => {
                for e in &c.rows {
                    let row = b.len();
                    push_row(e, row, 1.0, &mut ii, &mut jj, &mut vv);
                    b.push(e.constant);
                }
                cones.push(match cone {
                    Cone::Zero => SupportedConeT::ZeroConeT(c.rows.len()),
                    Cone::Nonnegative => SupportedConeT::NonnegativeConeT(c.rows.len()),
                    Cone::SecondOrder => SupportedConeT::SecondOrderConeT(c.rows.len()),
                    Cone::Psd { dim } => SupportedConeT::PSDTriangleConeT(dim),
                    Cone::RotatedSecondOrder => unreachable!(),
                });
            }
        }
    }

    let a = CscMatrix::new_from_triplets(b.len(), nvars, ii, jj, vv);
    let p = CscMatrix::<f64>::zeros((nvars, nvars));
    let mut q = vec![0.0; nvars];
    for &(i, c) in &program.objective.canonical().terms {
        q[i] += c;
    }
    let engine_settings = DefaultSettingsBuilder::default()
        .verbose(settings.verbose)
        .max_iter(settings.max_iter)
        .tol_feas(settings.feas_tol)
        .tol_gap_abs(settings.gap_tol)
        .tol_gap_rel(settings.gap_tol)
        .build()
        .map_err(|e| Error::Transport(format!("{e:?}")))?;
    let mut engine = DefaultSolver::new(&p, &q, &a, &b, &cones, engine_settings)
        .map_err(|e| Error::Transport(format!("{e:?}")))?;
    engine.solve();
    let sol = &engine.solution;

    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => {
            log::warn!("conic engine reached reduced accuracy only");
            SolveStatus::Optimal
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        SolverStatus::Unsolved => return Err(Error::Transport("engine did not run".into())),
        _ => SolveStatus::NumericLimit,
    };

    let (primal, objective_value, equality_residual) = if status == SolveStatus::Optimal {
        let x = sol.x.clone();
        let obj = program.objective.eval(&x);
        let resid = program
            .constraints
            .iter()
            .filter(|c| c.cone == Cone::Zero)
            .flat_map(|c| c.rows.iter())
            .map(|e| e.eval(&x).abs())
            .fold(0.0, f64::max);
        (Some(x), obj, resid)
    } else {
        (None, f64::NAN, f64::NAN)
    };

    Ok(ConicSolution {
        status,
        objective_value,
        primal,
        equality_residual,
        solve_time: started.elapsed().as_secs_f64(),
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn minimize_over_halfline() {
        let mut p = ConicProgram::new();
        let x = p.add_variables("x", 1).start;
        p.objective = AffineExpr::var(x);
        let mut row = AffineExpr::var(x);
        row.constant = -1.0;
        p.add_constraint(vec![row], Cone::Nonnegative).unwrap();
        let s = solve(&p, &settings()).unwrap();
        assert!(s.is_optimal());
        assert!((s.objective_value - 1.0).abs() < 1e-7);
    }

    #[test]
    fn epigraph_of_fixed_vector() {
        let mut p = ConicProgram::new();
        let x = p.add_variables("x", 2);
        let t = p.add_variables("t", 1).start;
        p.objective = AffineExpr::var(t);
        let mut e0 = AffineExpr::var(x.start);
        e0.constant = -3.0;
        let mut e1 = AffineExpr::var(x.start + 1);
        e1.constant = -4.0;
        p.add_equalities(vec![e0, e1]).unwrap();
        p.add_quad_epigraph_vars(&[x.start, x.start + 1], t).unwrap();
        let s = solve(&p, &settings()).unwrap();
        assert!((s.objective_value - 25.0).abs() < 1e-6, "{s:?}");
        assert!(s.equality_residual < 1e-7);
    }

    #[test]
    fn empty_epigraph_is_nonnegativity() {
        let mut p = ConicProgram::new();
        let t = p.add_variables("t", 1).start;
        p.objective = AffineExpr::var(t);
        p.add_quad_epigraph_vars(&[], t).unwrap();
        let s = solve(&p, &settings()).unwrap();
        assert!(s.is_optimal());
        assert!(s.objective_value.abs() < 1e-6);
    }

    #[test]
    fn trace_above_identity() {
        let mut p = ConicProgram::new();
        let v = p.add_variables("X", 3).start; // X00, X10, X11
        p.objective = {
            let mut e = AffineExpr::var(v);
            e.add_term(v + 2, 1.0);
            e
        };
        let mut x00 = AffineExpr::var(v);
        x00.constant = -1.0;
        let x10 = AffineExpr::var(v + 1);
        let mut x11 = AffineExpr::var(v + 2);
        x11.constant = -1.0;
        p.add_psd_block(&[x00, x10.clone(), x10, x11], 2).unwrap();
        let s = solve(&p, &settings()).unwrap();
        assert!((s.objective_value - 2.0).abs() < 1e-6);
    }

    #[test]
    fn constant_psd_blocks() {
        let mk = |c: f64| {
            let mut p = ConicProgram::new();
            let x = p.add_variables("x", 1).start;
            p.objective = AffineExpr::var(x);
            p.add_constraint(vec![AffineExpr::var(x)], Cone::Nonnegative).unwrap();
            let z = AffineExpr::constant(0.0);
            p.add_psd_block(&[AffineExpr::constant(c), z.clone(), z, AffineExpr::constant(c)], 2)
                .unwrap();
            solve(&p, &settings()).unwrap()
        };
        assert_eq!(mk(1.0).status, SolveStatus::Optimal);
        assert_eq!(mk(-1.0).status, SolveStatus::Infeasible);
    }

    #[test]
    fn determinant_boundary() {
        let mut p = ConicProgram::new();
        let y = p.add_variables("y", 1).start;
        p.objective = AffineExpr::term(y, -1.0);
        let one = AffineExpr::constant(1.0);
        let yy = AffineExpr::var(y);
        p.add_psd_block(&[one.clone(), yy.clone(), yy, one], 2).unwrap();
        let s = solve(&p, &settings()).unwrap();
        let x = s.primal.unwrap();
        assert!((x[y] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn asymmetric_block_rejected() {
        let mut p = ConicProgram::new();
        let y = p.add_variables("y", 1).start;
        let one = AffineExpr::constant(1.0);
        let err = p
            .add_psd_block(&[one.clone(), AffineExpr::var(y), AffineExpr::constant(0.0), one], 2)
            .unwrap_err();
        assert!(matches!(err, Error::Asymmetric(1, 0)));
    }

    #[test]
    fn index_errors() {
        let mut p = ConicProgram::new();
        p.add_variables("x", 1);
        assert!(matches!(p.add_quad_epigraph_vars(&[3], 0), Err(Error::Index(_))));
        assert!(matches!(
            p.add_constraint(vec![AffineExpr::var(0)], Cone::Psd { dim: 2 }),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn name_table_covers_variables() {
        let mut p = ConicProgram::new();
        p.add_variables("a", 3);
        p.add_variables("b", 0);
        p.add_variables("c", 2);
        p.validate().unwrap();
        assert_eq!(p.block("c"), Some(3..5));
    }

    #[test]
    fn listing_mentions_every_constraint() {
        let mut p = ConicProgram::new();
        let x = p.add_variables("x", 2);
        p.add_quad_epigraph_vars(&[x.start], x.start + 1).unwrap();
        p.add_equalities(vec![AffineExpr::var(x.start)]).unwrap();
        let text = p.listing();
        assert!(text.contains("rsoc ["));
        assert!(text.contains("zero ["));
        assert!(text.starts_with("vars 2"));
    }

    #[test]
    fn svec_round_trip() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let v = svec(&m);
        assert_eq!(v.len(), 6);
        let back = smat(&v).unwrap();
        assert!((back - &m).amax() <= 1e-15);
        // inner products are preserved
        assert!((v.dot(&v) - m.norm_squared()).abs() < 1e-12);
    }
}
