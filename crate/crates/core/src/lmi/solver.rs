use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::DMatrix;

use super::{evaluate_checks, LmiProblem, LmiSolution, LmiStatus, SolutionCheck, SolverStats};
use crate::config::SolverConfig;
use crate::error::{dims, Error, Result};

/// Sparse constraint rows `A x + s = b` collected column by column.
struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    fn push(&mut self, coeffs: impl Iterator<Item = (usize, f64)>, rhs: f64) {
        let row = self.b.len();
        for (k, a) in coeffs {
            if a != 0.0 {
                self.i.push(row);
                self.j.push(k);
                self.v.push(a);
            }
        }
        self.b.push(rhs);
    }
}

/// Re-evaluate every constraint of `problem` at `values`.
pub fn check_solution(problem: &LmiProblem, values: &[DMatrix<f64>]) -> Result<SolutionCheck> {
    if values.len() != problem.vars.len() {
        return Err(dims("LMI values", problem.vars.len(), values.len()));
    }
    for (v, val) in problem.vars.iter().zip(values) {
        if val.shape() != v.shape() {
            return Err(dims(
                "LMI value",
                format!("{:?}", v.shape()),
                format!("{:?}", val.shape()),
            ));
        }
        if v.symmetric && (val - val.transpose()).amax() > 1e-12 * val.amax().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "value of `{}` is not symmetric",
                v.name
            )));
        }
    }
    Ok(evaluate_checks(problem, values))
}

fn map_status(s: SolverStatus) -> LmiStatus {
    match s {
        SolverStatus::Solved | SolverStatus::AlmostSolved => LmiStatus::Feasible,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => LmiStatus::Infeasible,
        _ => LmiStatus::NumericalFailure,
    }
}

/// Solve with the conic interior-point optimizer, then certify the result
/// by re-evaluating every constraint.
///
/// A solver-reported solution that fails the re-check becomes
/// [`LmiStatus::NumericalFailure`]; an unconverged run whose iterate passes
/// the re-check is accepted.
pub fn solve(problem: &LmiProblem, cfg: &SolverConfig) -> LmiSolution {
    let (offsets, nx) = problem.offsets();
    let mut rows = Rows {
        i: Vec::new(),
        j: Vec::new(),
        v: Vec::new(),
        b: Vec::new(),
    };
    let mut cones = Vec::new();

    let mut n_eq = 0;
    for c in &problem.eqs {
        let lin = c.expr.linearize(&problem.vars, &offsets);
        let (r, cc) = c.expr.shape();
        for j in 0..cc {
            for i in 0..r {
                rows.push(lin.coeffs.iter().map(|(k, m)| (*k, m[(i, j)])), -lin.constant[(i, j)]);
            }
        }
        n_eq += r * cc;
    }
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }

    for c in &problem.psd {
        let lin = c.expr.linearize(&problem.vars, &offsets);
        let d = c.expr.nrows();
        // s = svec(F(x) − εI) = b − A x, upper triangle by columns, √2 off the diagonal
        for j in 0..d {
            for i in 0..=j {
                let w = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                let shift = if i == j { c.margin } else { 0.0 };
                rows.push(
                    lin.coeffs.iter().map(|(k, m)| (*k, -w * m[(i, j)])),
                    w * (lin.constant[(i, j)] - shift),
                );
            }
        }
        cones.push(if d == 1 {
            SupportedConeT::NonnegativeConeT(1)
        } else {
            SupportedConeT::PSDTriangleConeT(d)
        });
    }

    let mut q = vec![0.0; nx];
    if let Some(obj) = &problem.objective {
        for (k, m) in obj.linearize(&problem.vars, &offsets).coeffs {
            q[k] = m[(0, 0)];
        }
    }

    let n_rows = rows.b.len();
    let a = CscMatrix::new_from_triplets(n_rows, nx, rows.i, rows.j, rows.v);
    let p = CscMatrix::zeros((nx, nx));

    let mut reg = cfg.regularization;
    let mut attempt = run_solver(problem, &offsets, &p, &q, &a, &rows.b, &cones, cfg, reg);
    for _ in 0..cfg.retries {
        if attempt.status != LmiStatus::NumericalFailure {
            break;
        }
        reg *= 10.0;
        attempt = run_solver(problem, &offsets, &p, &q, &a, &rows.b, &cones, cfg, reg);
    }
    attempt
}

#[allow(clippy::too_many_arguments)]
fn run_solver(
    problem: &LmiProblem,
    offsets: &[usize],
    p: &CscMatrix<f64>,
    q: &[f64],
    a: &CscMatrix<f64>,
    b: &[f64],
    cones: &[SupportedConeT<f64>],
    cfg: &SolverConfig,
    regularization: f64,
) -> LmiSolution {
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(cfg.max_iter)
        .tol_feas(cfg.tol_feas)
        .tol_gap_abs(cfg.tol_gap_abs)
        .tol_gap_rel(cfg.tol_gap_rel)
        .static_regularization_constant(regularization)
        .max_threads(1)
        .chordal_decomposition_enable(false)
        .build()
        .expect("solver settings are valid");

    let failure = |raw_status: String| {
        let values: Vec<DMatrix<f64>> = problem.vars.iter().map(|v| DMatrix::zeros(v.rows, v.cols)).collect();
        LmiSolution {
            status: LmiStatus::NumericalFailure,
            check: evaluate_checks(problem, &values),
            objective: None,
            values,
            stats: SolverStats {
                raw_status,
                iterations: 0,
                solve_time: 0.0,
            },
        }
    };
    let mut solver = match DefaultSolver::new(p, q, a, b, cones, settings) {
        Ok(s) => s,
        Err(e) => return failure(format!("setup failed: {e}")),
    };
    // the optimizer can panic inside its eigenvalue routines on degenerate iterates
    if std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| solver.solve())).is_err() {
        return failure("optimizer aborted".into());
    }
    let sol = &solver.solution;
    let values: Vec<DMatrix<f64>> = problem
        .vars
        .iter()
        .zip(offsets)
        .map(|(v, &off)| v.unpack(&sol.x[off..off + v.scalars()]))
        .collect();
    let finite = values.iter().all(|m| m.iter().all(|x| x.is_finite()));
    let check = evaluate_checks(problem, &values);
    let certified = finite && check.passes(cfg.check_tol);
    let status = match map_status(sol.status) {
        LmiStatus::Infeasible => LmiStatus::Infeasible,
        _ if certified => LmiStatus::Feasible,
        _ => LmiStatus::NumericalFailure,
    };
    let objective = problem.objective.as_ref().map(|o| o.eval(&values)[(0, 0)]);
    LmiSolution {
        status,
        values,
        objective,
        check,
        stats: SolverStats {
            raw_status: format!("{:?}", sol.status),
            iterations: sol.iterations,
            solve_time: sol.solve_time,
        },
    }
}
