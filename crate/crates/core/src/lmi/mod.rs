//! Affine matrix inequalities over matrix decision variables.
//!
//! A problem collects variables, constraints `F(x) ⪰ ε I`, equalities
//! `E(x) = 0` and an optional linear objective. [`solve`] hands it to a
//! conic interior-point solver and then re-checks every constraint on the
//! returned values; only that re-check decides feasibility.
//!
//! ```
//! use ddctl::lmi::{AffineExpr, LmiProblem, LmiStatus, solve};
//! use ddctl::config::SolverConfig;
//!
//! let mut prob = LmiProblem::new();
//! let p = prob.sym_var("p", 1);
//! prob.psd("lower bound", p.expr().shift(-1.0), 0.0).unwrap();
//! prob.minimize(&p.expr()).unwrap();
//! let sol = solve(&prob, &SolverConfig::default());
//! assert_eq!(sol.status, LmiStatus::Feasible);
//! assert!((sol.value(&p)[(0, 0)] - 1.0).abs() < 1e-8);
//! ```

mod expr;
mod solver;

use std::fmt;

use nalgebra::DMatrix;
use serde::Serialize;

pub use expr::{AffineExpr, MatrixVar, VarId};
pub use solver::{check_solution, solve};

use crate::error::{Error, Result};
use crate::linalg::min_sym_eigenvalue;

#[derive(Debug, Clone)]
pub struct PsdConstraint {
    pub name: String,
    pub expr: AffineExpr,
    /// Imposed as `expr ⪰ margin · I`.
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct EqConstraint {
    pub name: String,
    /// Imposed as `expr = 0`.
    pub expr: AffineExpr,
}

#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    vars: Vec<MatrixVar>,
    psd: Vec<PsdConstraint>,
    eqs: Vec<EqConstraint>,
    objective: Option<AffineExpr>,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn push_var(&mut self, name: &str, rows: usize, cols: usize, symmetric: bool) -> MatrixVar {
        let v = MatrixVar {
            id: VarId(self.vars.len()),
            name: name.to_string(),
            rows,
            cols,
            symmetric,
        };
        self.vars.push(v.clone());
        v
    }

    pub fn var(&mut self, name: &str, rows: usize, cols: usize) -> MatrixVar {
        self.push_var(name, rows, cols, false)
    }

    pub fn sym_var(&mut self, name: &str, n: usize) -> MatrixVar {
        self.push_var(name, n, n, true)
    }

    pub fn scalar_var(&mut self, name: &str) -> MatrixVar {
        self.push_var(name, 1, 1, false)
    }

    pub fn variables(&self) -> &[MatrixVar] {
        &self.vars
    }

    pub fn psd_constraints(&self) -> &[PsdConstraint] {
        &self.psd
    }

    pub fn eq_constraints(&self) -> &[EqConstraint] {
        &self.eqs
    }

    pub fn objective(&self) -> Option<&AffineExpr> {
        self.objective.as_ref()
    }

    pub(crate) fn offsets(&self) -> (Vec<usize>, usize) {
        let mut offsets = Vec::with_capacity(self.vars.len());
        let mut total = 0;
        for v in &self.vars {
            offsets.push(total);
            total += v.scalars();
        }
        (offsets, total)
    }

    fn check_vars(&self, e: &AffineExpr, what: &str) -> Result<()> {
        for id in e.variables() {
            if id.0 >= self.vars.len() {
                return Err(Error::InvalidArgument(format!("{what} uses an undeclared variable")));
            }
        }
        for t in &e.terms {
            let v = &self.vars[t.var.0];
            if let expr::TermKind::Product {
                left,
                transposed,
                right,
            } = &t.kind
            {
                let (r, c) = if *transposed {
                    (v.cols, v.rows)
                } else {
                    (v.rows, v.cols)
                };
                if left.ncols() != r || right.nrows() != c {
                    return Err(Error::InvalidArgument(format!(
                        "{what}: variable `{}` does not fit its coefficients",
                        v.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Add `expr ⪰ margin · I`. The expression must be symmetric for every
    /// value of the variables.
    pub fn psd(&mut self, name: &str, expr: AffineExpr, margin: f64) -> Result<()> {
        if !expr.is_square() {
            return Err(Error::InvalidArgument(format!("constraint `{name}` is not square")));
        }
        if !(margin >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "constraint `{name}` has a negative margin"
            )));
        }
        self.check_vars(&expr, name)?;
        let (offsets, _) = self.offsets();
        let lin = expr.linearize(&self.vars, &offsets);
        let asym = |m: &DMatrix<f64>| (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0);
        if asym(&lin.constant) || lin.coeffs.values().any(asym) {
            return Err(Error::InvalidArgument(format!("constraint `{name}` is not symmetric")));
        }
        self.psd.push(PsdConstraint {
            name: name.to_string(),
            expr,
            margin,
        });
        Ok(())
    }

    /// Add `expr = 0` entrywise.
    pub fn eq(&mut self, name: &str, expr: AffineExpr) -> Result<()> {
        self.check_vars(&expr, name)?;
        self.eqs.push(EqConstraint {
            name: name.to_string(),
            expr,
        });
        Ok(())
    }

    /// Minimize `trace(expr)`.
    pub fn minimize(&mut self, expr: &AffineExpr) -> Result<()> {
        if !expr.is_square() {
            return Err(Error::InvalidArgument("objective must be square".into()));
        }
        self.check_vars(expr, "objective")?;
        self.objective = Some(expr.trace());
        Ok(())
    }

    /// Maximize `trace(expr)`.
    pub fn maximize(&mut self, expr: &AffineExpr) -> Result<()> {
        self.minimize(&expr.scale(-1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LmiStatus {
    /// Feasible (optimal when an objective is present) and certified by re-evaluation.
    Feasible,
    Infeasible,
    NumericalFailure,
}

impl fmt::Display for LmiStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LmiStatus::Feasible => "feasible",
            LmiStatus::Infeasible => "infeasible",
            LmiStatus::NumericalFailure => "numerical_failure",
        })
    }
}

/// Re-evaluation of every constraint at given variable values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionCheck {
    /// `λ_min(F(x)) − margin` per PSD constraint.
    pub psd_slack: Vec<f64>,
    /// Size of each PSD constraint value, used to scale the tolerance.
    pub psd_scale: Vec<f64>,
    /// Largest absolute entry of `E(x)` per equality.
    pub eq_residual: Vec<f64>,
    pub eq_scale: Vec<f64>,
}

impl SolutionCheck {
    /// Largest violation, each measured relative to its constraint's size.
    pub fn worst_violation(&self) -> f64 {
        let psd = self
            .psd_slack
            .iter()
            .zip(&self.psd_scale)
            .map(|(s, sc)| (-s / sc).max(0.0));
        let eq = self.eq_residual.iter().zip(&self.eq_scale).map(|(r, sc)| r / sc);
        psd.chain(eq).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst_violation() <= tol
    }
}

pub(crate) fn evaluate_checks(problem: &LmiProblem, values: &[DMatrix<f64>]) -> SolutionCheck {
    let mut check = SolutionCheck {
        psd_slack: Vec::new(),
        psd_scale: Vec::new(),
        eq_residual: Vec::new(),
        eq_scale: Vec::new(),
    };
    for c in &problem.psd {
        let v = c.expr.eval(values);
        check.psd_slack.push(min_sym_eigenvalue(&v) - c.margin);
        check.psd_scale.push(c.expr.magnitude(values).max(1.0));
    }
    for c in &problem.eqs {
        let v = c.expr.eval(values);
        check.eq_residual.push(v.amax());
        check.eq_scale.push(c.expr.magnitude(values).max(1.0));
    }
    check
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverStats {
    /// Status string reported by the optimizer.
    pub raw_status: String,
    pub iterations: u32,
    /// Wall-clock seconds; left out of reports so that they are reproducible.
    #[serde(skip)]
    pub solve_time: f64,
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub status: LmiStatus,
    /// Variable values indexed by [`VarId`].
    pub values: Vec<DMatrix<f64>>,
    /// Objective re-evaluated at `values`, if the problem has one.
    pub objective: Option<f64>,
    pub check: SolutionCheck,
    pub stats: SolverStats,
}

impl LmiSolution {
    pub fn value(&self, var: &MatrixVar) -> &DMatrix<f64> {
        &self.values[var.id.0]
    }

    pub fn worst_violation(&self) -> f64 {
        self.check.worst_violation()
    }
}

impl AffineExpr {
    /// Largest absolute entry over the constant and each term's value.
    pub fn magnitude(&self, values: &[DMatrix<f64>]) -> f64 {
        let mut m = self.constant.amax();
        for t in &self.terms {
            let single = AffineExpr {
                constant: DMatrix::zeros(self.nrows(), self.ncols()),
                terms: vec![t.clone()],
            };
            m = m.max(single.eval(values).amax());
        }
        m
    }
}

/// Write the problem in SDPA sparse format: minimize `cᵀx` subject to
/// `Σ xᵢ Fᵢ − F₀ ⪰ 0`. Equalities become a diagonal block holding `E` and `−E`.
pub fn to_sdpa(problem: &LmiProblem) -> String {
    use std::fmt::Write;

    let (offsets, nx) = problem.offsets();
    let mut out = String::new();
    let _ = writeln!(out, "* data-driven design problem");
    for v in &problem.vars {
        let kind = if v.symmetric { "symmetric" } else { "general" };
        let _ = writeln!(
            out,
            "* var {} {}x{} {} offset {}",
            v.name,
            v.rows,
            v.cols,
            kind,
            offsets[v.id.0] + 1
        );
    }
    let n_eq: usize = problem.eqs.iter().map(|e| e.expr.nrows() * e.expr.ncols()).sum();
    let n_blocks = problem.psd.len() + usize::from(n_eq > 0);
    let _ = writeln!(out, "{nx}");
    let _ = writeln!(out, "{n_blocks}");
    let mut sizes: Vec<String> = problem.psd.iter().map(|c| c.expr.nrows().to_string()).collect();
    if n_eq > 0 {
        sizes.push(format!("-{}", 2 * n_eq));
    }
    let _ = writeln!(out, "{}", sizes.join(" "));
    let mut c = vec![0.0; nx];
    if let Some(obj) = &problem.objective {
        let lin = obj.linearize(&problem.vars, &offsets);
        for (k, m) in &lin.coeffs {
            c[*k] = m[(0, 0)];
        }
    }
    let _ = writeln!(
        out,
        "{}",
        c.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
    );
    for (b, con) in problem.psd.iter().enumerate() {
        let lin = con.expr.linearize(&problem.vars, &offsets);
        let d = con.expr.nrows();
        let f0 = -(&lin.constant - DMatrix::identity(d, d) * con.margin);
        write_upper(&mut out, 0, b + 1, &f0);
        for (k, m) in &lin.coeffs {
            write_upper(&mut out, k + 1, b + 1, m);
        }
    }
    if n_eq > 0 {
        let blk = problem.psd.len() + 1;
        let mut row = 0;
        for e in &problem.eqs {
            let lin = e.expr.linearize(&problem.vars, &offsets);
            let (r, cc) = e.expr.shape();
            for j in 0..cc {
                for i in 0..r {
                    let pos = row + 1;
                    let neg = row + n_eq + 1;
                    let c0 = lin.constant[(i, j)];
                    if c0 != 0.0 {
                        let _ = writeln!(out, "0 {blk} {pos} {pos} {:e}", -c0);
                        let _ = writeln!(out, "0 {blk} {neg} {neg} {:e}", c0);
                    }
                    for (k, m) in &lin.coeffs {
                        let v = m[(i, j)];
                        if v != 0.0 {
                            let _ = writeln!(out, "{} {blk} {pos} {pos} {:e}", k + 1, v);
                            let _ = writeln!(out, "{} {blk} {neg} {neg} {:e}", k + 1, -v);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    out
}

fn write_upper(out: &mut String, mat: usize, blk: usize, m: &DMatrix<f64>) {
    use std::fmt::Write;
    for j in 0..m.ncols() {
        for i in 0..=j {
            let v = m[(i, j)];
            if v != 0.0 {
                let _ = writeln!(out, "{mat} {blk} {} {} {:e}", i + 1, j + 1, v);
            }
        }
    }
}
