//! Convex programs generated by the interval methods, and the solver contract.
//!
//! A [`ConicProgram`] is a linear objective (plus optional Euclidean-norm
//! penalty terms) over ball, linear-inequality and linear-equality
//! constraints. [`solve`] hands it to an interior-point conic solver
//! (Clarabel) as a second-order cone program.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// `‖F x − g‖² ≤ radius2`
#[derive(Debug, Clone, PartialEq)]
pub struct BallConstraint {
    pub f: DMatrix<f64>,
    pub g: DVector<f64>,
    pub radius2: f64,
}

/// `M x ≤ rhs` or `M x = rhs`, depending on where it is used.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// `weight · ‖x[rows]‖₂`, added to a minimisation objective and subtracted
/// from a maximisation objective (so the program stays convex).
#[derive(Debug, Clone, PartialEq)]
pub struct NormTerm {
    pub weight: f64,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub sense: Sense,
    pub objective: DVector<f64>,
    pub balls: Vec<BallConstraint>,
    pub inequalities: Option<LinearSystem>,
    pub equalities: Option<LinearSystem>,
    pub norm_terms: Vec<NormTerm>,
}

impl ConicProgram {
    pub fn new(sense: Sense, objective: DVector<f64>) -> Self {
        ConicProgram {
            sense,
            objective,
            balls: Vec::new(),
            inequalities: None,
            equalities: None,
            norm_terms: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn with_ball(mut self, f: DMatrix<f64>, g: DVector<f64>, radius2: f64) -> Self {
        self.balls.push(BallConstraint { f, g, radius2 });
        self
    }

    /// Skips empty systems.
    pub fn with_inequalities(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        if matrix.nrows() > 0 {
            self.inequalities = Some(LinearSystem { matrix, rhs });
        }
        self
    }

    pub fn with_equalities(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        if matrix.nrows() > 0 {
            self.equalities = Some(LinearSystem { matrix, rhs });
        }
        self
    }

    pub fn with_norm_term(mut self, weight: f64, rows: Vec<usize>) -> Self {
        self.norm_terms.push(NormTerm { weight, rows });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "program has no decision variables".into(),
            ));
        }
        for (k, b) in self.balls.iter().enumerate() {
            if b.f.ncols() != n || b.f.nrows() != b.g.len() {
                return Err(Error::Dimension(format!(
                    "ball constraint {k} has inconsistent dimensions"
                )));
            }
            if !(b.radius2 >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "ball constraint {k} has radius² {}",
                    b.radius2
                )));
            }
        }
        for (name, sys) in [
            ("inequality", &self.inequalities),
            ("equality", &self.equalities),
        ] {
            if let Some(s) = sys {
                if s.matrix.ncols() != n || s.matrix.nrows() != s.rhs.len() {
                    return Err(Error::Dimension(format!(
                        "{name} system has inconsistent dimensions"
                    )));
                }
            }
        }
        for t in &self.norm_terms {
            if !(t.weight >= 0.0) || t.rows.is_empty() || t.rows.iter().any(|&r| r >= n) {
                return Err(Error::InvalidArgument(
                    "norm term needs a non-negative weight and valid rows".into(),
                ));
            }
        }
        Ok(())
    }

    /// Objective value at `x`, in the program's own sense.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.objective.iter().zip(x).map(|(c, v)| c * v).sum();
        let pen: f64 = self
            .norm_terms
            .iter()
            .map(|t| t.weight * t.rows.iter().map(|&r| x[r] * x[r]).sum::<f64>().sqrt())
            .sum();
        match self.sense {
            Sense::Minimize => lin + pen,
            Sense::Maximize => lin - pen,
        }
    }

    /// Largest constraint violation at `x` (ball constraints measured on the
    /// norm, not its square).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let mut worst: f64 = 0.0;
        for b in &self.balls {
            let r = (&b.f * &xv - &b.g).norm();
            worst = worst.max(r - b.radius2.sqrt());
        }
        if let Some(s) = &self.inequalities {
            let r = &s.matrix * &xv - &s.rhs;
            worst = worst.max(r.max());
        }
        if let Some(s) = &self.equalities {
            let r = &s.matrix * &xv - &s.rhs;
            worst = worst.max(r.amax());
        }
        worst
    }

    /// Debug dump for solver triage.
    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        let vec = |v: &DVector<f64>| -> Vec<f64> { v.iter().copied().collect() };
        let sys = |s: &Option<LinearSystem>| {
            s.as_ref()
                .map(|s| json!({"matrix": rows(&s.matrix), "rhs": vec(&s.rhs)}))
        };
        json!({
            "sense": self.sense,
            "objective": vec(&self.objective),
            "balls": self.balls.iter().map(|b| json!({"f": rows(&b.f), "g": vec(&b.g), "radius2": b.radius2})).collect::<Vec<_>>(),
            "inequalities": sys(&self.inequalities),
            "equalities": sys(&self.equalities),
            "norm_terms": self.norm_terms.iter().map(|t| json!({"weight": t.weight, "rows": t.rows})).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    /// In the program's own sense; `±∞` when unbounded, NaN when infeasible
    /// or failed.
    pub objective_value: f64,
    /// Relative duality-gap tolerance the reported point was certified to.
    pub solver_tolerance: f64,
    pub iterations: u32,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_gap_abs: 1e-9,
            tol_gap_rel: 1e-9,
            tol_feas: 1e-9,
            max_iter: 200,
        }
    }
}

/// Column-wise triplet accumulator for the constraint matrix.
struct CscBuilder {
    nrows: usize,
    cols: Vec<Vec<(usize, f64)>>,
}

impl CscBuilder {
    fn new(ncols: usize) -> Self {
        CscBuilder {
            nrows: 0,
            cols: vec![Vec::new(); ncols],
        }
    }

    fn push_dense(&mut self, m: &DMatrix<f64>, col_offset: usize) {
        for (j, col) in m.column_iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                if v != 0.0 {
                    self.cols[col_offset + j].push((self.nrows + i, v));
                }
            }
        }
        self.nrows += m.nrows();
    }

    fn push_entry(&mut self, row: usize, col: usize, v: f64) {
        self.cols[col].push((row, v));
    }

    fn finish(self) -> CscMatrix<f64> {
        let ncols = self.cols.len();
        let mut colptr = Vec::with_capacity(ncols + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for mut col in self.cols {
            col.sort_by_key(|e| e.0);
            for (r, v) in col {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        CscMatrix::new(self.nrows, ncols, colptr, rowval, nzval)
    }
}

/// Solves `p` as a second-order cone program.
///
/// Returns `Err` only for malformed programs; solver outcomes (including
/// infeasibility, unboundedness and numerical failure) are reported through
/// [`Solution::status`].
pub fn solve(p: &ConicProgram, settings: &SolverSettings) -> Result<Solution> {
    p.validate()?;
    let nx = p.num_vars();
    let nt = p.norm_terms.len();
    let nvar = nx + nt;

    let sign = match p.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut q: Vec<f64> = p.objective.iter().map(|c| sign * c).collect();
    q.extend(p.norm_terms.iter().map(|t| t.weight));

    let mut a = CscBuilder::new(nvar);
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    if let Some(eq) = &p.equalities {
        a.push_dense(&eq.matrix, 0);
        b.extend(eq.rhs.iter());
        cones.push(SupportedConeT::ZeroConeT(eq.rhs.len()));
    }
    if let Some(ineq) = &p.inequalities {
        a.push_dense(&ineq.matrix, 0);
        b.extend(ineq.rhs.iter());
        cones.push(SupportedConeT::NonnegativeConeT(ineq.rhs.len()));
    }
    for ball in &p.balls {
        // s = (r, g − F x) ∈ SOC
        a.nrows += 1;
        b.push(ball.radius2.sqrt());
        a.push_dense(&ball.f, 0);
        b.extend(ball.g.iter());
        cones.push(SupportedConeT::SecondOrderConeT(ball.g.len() + 1));
    }
    for (k, term) in p.norm_terms.iter().enumerate() {
        // s = (t_k, x[rows]) ∈ SOC
        let row0 = a.nrows;
        a.push_entry(row0, nx + k, -1.0);
        for (i, &r) in term.rows.iter().enumerate() {
            a.push_entry(row0 + 1 + i, r, -1.0);
        }
        a.nrows += 1 + term.rows.len();
        b.extend(std::iter::repeat_n(0.0, 1 + term.rows.len()));
        cones.push(SupportedConeT::SecondOrderConeT(1 + term.rows.len()));
    }

    let a = a.finish();
    let pmat = CscMatrix::zeros((nvar, nvar));
    let mut base = DefaultSettings::<f64>::default();
    base.verbose = false;
    base.tol_gap_abs = settings.tol_gap_abs;
    base.tol_gap_rel = settings.tol_gap_rel;
    base.tol_feas = settings.tol_feas;
    base.max_iter = settings.max_iter;
    let reduced_tol = base.reduced_tol_gap_rel;

    // Interior-point runs occasionally stall on badly scaled programs; retry
    // with more conservative steps and without equilibration before giving up.
    let mut fallback_step = base.clone();
    fallback_step.max_step_fraction = 0.9;
    fallback_step.iterative_refinement_max_iter = 50;
    fallback_step.static_regularization_constant = 1e-10;
    let mut fallback_equil = fallback_step.clone();
    fallback_equil.equilibrate_enable = false;

    let mut outcome = None;
    for cfg in [base, fallback_step, fallback_equil] {
        let mut solver = DefaultSolver::new(&pmat, &q, &a, &b, &cones, cfg)
            .map_err(|e| Error::Solver(format!("solver setup failed: {e:?}")))?;
        solver.solve();
        let (status, tol) = match solver.solution.status {
            SolverStatus::Solved => (Status::Optimal, settings.tol_gap_rel),
            SolverStatus::AlmostSolved => (Status::Optimal, reduced_tol),
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                (Status::Infeasible, settings.tol_feas)
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                (Status::Unbounded, settings.tol_feas)
            }
            _ => (Status::NumericalFailure, f64::NAN),
        };
        let done = status != Status::NumericalFailure;
        outcome = Some((
            status,
            tol,
            solver.solution.x[..nx].to_vec(),
            solver.info.iterations,
        ));
        if done {
            break;
        }
    }
    let (status, tol, x, iterations) = outcome.expect("at least one attempt");
    let objective_value = match status {
        Status::Optimal => p.objective_at(&x),
        Status::Unbounded => match p.sense {
            Sense::Minimize => f64::NEG_INFINITY,
            Sense::Maximize => f64::INFINITY,
        },
        _ => f64::NAN,
    };
    Ok(Solution {
        status,
        x,
        objective_value,
        solver_tolerance: tol,
        iterations,
    })
}
