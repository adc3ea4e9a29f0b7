//! Hierarchical least-squares cascade over upper-bound constraints.
//!
//! Every priority level `p` contributes `A_p q̇ ≤ b_p`. Levels are solved in
//! order; each one minimises the norm of its own slack `w_p` while the slacks
//! of all higher-priority levels stay frozen at their optima. A final pass
//! picks the minimum-norm velocity among all that achieve the frozen slacks.

mod active_set;
mod bounds;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use active_set::DiagQp;
pub use bounds::{transcribe_bounds, BoundKind, RawRows};

/// Default weight of the `‖q̇ - q̇_ref‖²` proximal term used at every level.
pub const DEFAULT_REGULARIZATION: f64 = 1e-8;

/// Tolerance for constraint-satisfaction checks.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Upper bound on proximal refinements per level.
const MAX_PROX_ROUNDS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HqpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(String),
    #[error("level indices must be unique and strictly increasing (got {prev} then {next})")]
    LevelOrder { prev: u32, next: u32 },
    #[error("level {0} has no rows")]
    EmptyLevel(u32),
    #[error("fixed constraints are infeasible (max violation {0:.3e})")]
    Infeasible(f64),
    #[error("QP for level {level} did not converge within {iterations} iterations")]
    NumericalFailure { level: u32, iterations: usize },
    #[error("unknown bound kind `{0}`")]
    InvalidBoundKind(String),
    #[error("regularization must be finite and nonnegative, got {0}")]
    InvalidRegularization(f64),
}

/// The stacked constraint `A q̇ ≤ b` of one priority level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelConstraint {
    level: u32,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl LevelConstraint {
    pub fn new(level: u32, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, HqpError> {
        if level == 0 {
            return Err(HqpError::DimensionMismatch("priority levels start at 1".into()));
        }
        if a.nrows() != b.len() {
            return Err(HqpError::DimensionMismatch(format!(
                "level {level}: A has {} rows but b has {}",
                a.nrows(),
                b.len()
            )));
        }
        if a.nrows() == 0 {
            return Err(HqpError::EmptyLevel(level));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(HqpError::NonFinite(format!("level {level}")));
        }
        Ok(Self { level, a, b })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }
}

/// An ordered list of levels over `n` degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeProblem {
    n: usize,
    levels: Vec<LevelConstraint>,
}

impl CascadeProblem {
    pub fn new(n: usize, levels: Vec<LevelConstraint>) -> Result<Self, HqpError> {
        if n == 0 {
            return Err(HqpError::DimensionMismatch("n must be positive".into()));
        }
        for l in &levels {
            if l.a.ncols() != n {
                return Err(HqpError::DimensionMismatch(format!(
                    "level {}: A has {} columns, expected {n}",
                    l.level,
                    l.a.ncols()
                )));
            }
        }
        for pair in levels.windows(2) {
            if pair[1].level <= pair[0].level {
                return Err(HqpError::LevelOrder { prev: pair[0].level, next: pair[1].level });
            }
        }
        Ok(Self { n, levels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn levels(&self) -> &[LevelConstraint] {
        &self.levels
    }

    pub fn total_rows(&self) -> usize {
        self.levels.iter().map(LevelConstraint::rows).sum()
    }
}

/// Plain-text listing for bug reports.
impl fmt::Display for CascadeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cascade n={} levels={}", self.n, self.levels.len())?;
        for l in &self.levels {
            writeln!(f, "level {} rows={}", l.level, l.rows())?;
            for i in 0..l.rows() {
                let row: Vec<String> = l.a.row(i).iter().map(|v| format!("{v:+.17e}")).collect();
                writeln!(f, "  [{}] <= {:+.17e}", row.join(" "), l.b[i])?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSolution {
    pub qdot: DVector<f64>,
    pub slacks: Vec<DVector<f64>>,
    pub objective_per_level: Vec<f64>,
}

/// A higher-priority level whose slack is frozen: `A q̇ ≤ b + w*`.
#[derive(Debug, Clone, Copy)]
pub struct FrozenLevel<'a> {
    pub a: &'a DMatrix<f64>,
    pub b: &'a DVector<f64>,
    pub slack: &'a DVector<f64>,
}

fn check_regularization(regularization: f64) -> Result<(), HqpError> {
    if regularization.is_finite() && regularization >= 0.0 {
        Ok(())
    } else {
        Err(HqpError::InvalidRegularization(regularization))
    }
}

fn stack_frozen(n: usize, fixed: &[FrozenLevel<'_>]) -> Result<(DMatrix<f64>, DVector<f64>), HqpError> {
    let rows: usize = fixed.iter().map(|f| f.a.nrows()).sum();
    let mut c = DMatrix::zeros(rows, n);
    let mut d = DVector::zeros(rows);
    let mut offset = 0;
    for (i, f) in fixed.iter().enumerate() {
        let m = f.a.nrows();
        if f.a.ncols() != n || f.b.len() != m || f.slack.len() != m {
            return Err(HqpError::DimensionMismatch(format!(
                "fixed level {i}: A is {}x{}, b has {}, w* has {} (n = {n})",
                m,
                f.a.ncols(),
                f.b.len(),
                f.slack.len()
            )));
        }
        c.view_mut((offset, 0), (m, n)).copy_from(f.a);
        d.rows_mut(offset, m).copy_from(&(f.b + f.slack));
        offset += m;
    }
    Ok((c, d))
}

/// Positive part of `A x - b`.
fn violation(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    (a * x - b).map(|v| v.max(0.0))
}

/// Core of one level: min ‖w‖² + ε‖x - x_ref‖² over (x, w), refined by
/// proximal rounds so the reported slack is free of regularisation bias.
fn solve_level_warm(
    level: u32,
    fixed_a: &DMatrix<f64>,
    fixed_d: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    regularization: f64,
    start: DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>), HqpError> {
    let n = start.len();
    let m = a.nrows();
    let fixed_rows = fixed_a.nrows();
    let dim = n + m;

    // rows: [C 0] z ≤ d, then [A -I] z ≤ b
    let mut g = DMatrix::zeros(fixed_rows + m, dim);
    let mut bound = DVector::zeros(fixed_rows + m);
    g.view_mut((0, 0), (fixed_rows, n)).copy_from(fixed_a);
    bound.rows_mut(0, fixed_rows).copy_from(fixed_d);
    g.view_mut((fixed_rows, 0), (m, n)).copy_from(a);
    for i in 0..m {
        g[(fixed_rows + i, n + i)] = -1.0;
    }
    bound.rows_mut(fixed_rows, m).copy_from(b);

    let eps = if regularization > 0.0 { regularization } else { DEFAULT_REGULARIZATION };
    let mut hessian = DVector::from_element(dim, 1.0);
    hessian.rows_mut(0, n).fill(eps);

    let budget = 100 * (fixed_rows + m).max(1);
    let mut x_ref = start;
    let mut z = DVector::zeros(dim);
    z.rows_mut(0, n).copy_from(&x_ref);
    z.rows_mut(n, m).copy_from(&violation(a, b, &x_ref));
    let mut working = Vec::new();
    let mut total_iterations = 0;

    for _ in 0..MAX_PROX_ROUNDS {
        let mut linear = DVector::zeros(dim);
        linear.rows_mut(0, n).copy_from(&(-eps * &x_ref));
        let qp = DiagQp { hessian: &hessian, linear: &linear, g: &g, bound: &bound };
        let res = qp.solve(z.clone(), working.clone(), budget).map_err(|e| {
            HqpError::NumericalFailure { level, iterations: total_iterations + e.iterations }
        })?;
        total_iterations += res.iterations;
        z = res.z;
        working = res.working;
        let x_new = z.rows(0, n).into_owned();
        let moved = (&x_new - &x_ref).norm();
        x_ref = x_new;
        if regularization == 0.0 || moved <= 1e-13 * (1.0 + x_ref.norm()) {
            break;
        }
    }
    let w = violation(a, b, &x_ref);
    Ok((x_ref, w))
}

/// Solves one level of the cascade given the frozen higher-priority levels.
///
/// Returns a velocity candidate and the level's slack vector.
pub fn solve_level(
    n: usize,
    fixed: &[FrozenLevel<'_>],
    current: (&DMatrix<f64>, &DVector<f64>),
    regularization: f64,
) -> Result<(DVector<f64>, DVector<f64>), HqpError> {
    check_regularization(regularization)?;
    let (a, b) = current;
    if a.ncols() != n || a.nrows() != b.len() {
        return Err(HqpError::DimensionMismatch(format!(
            "current level: A is {}x{}, b has {} (n = {n})",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let (c, d) = stack_frozen(n, fixed)?;
    let level = fixed.len() as u32 + 1;

    let start = if c.nrows() == 0 {
        DVector::zeros(n)
    } else {
        // phase one: a point satisfying the frozen rows
        let empty_a = DMatrix::zeros(0, n);
        let empty_d = DVector::zeros(0);
        let (x, viol) =
            solve_level_warm(level, &empty_a, &empty_d, &c, &d, regularization, DVector::zeros(n))?;
        let worst = viol.amax();
        if worst > 1e-7 {
            return Err(HqpError::Infeasible(worst));
        }
        x
    };
    solve_level_warm(level, &c, &d, a, b, regularization, start)
}

/// Solves every level in priority order, freezing each level's slack, then
/// returns the minimum-norm velocity consistent with all frozen slacks.
pub fn solve_cascade(problem: &CascadeProblem, regularization: f64) -> Result<CascadeSolution, HqpError> {
    check_regularization(regularization)?;
    let n = problem.n;
    let total = problem.total_rows();
    let mut fixed_a = DMatrix::zeros(total, n);
    let mut fixed_d = DVector::zeros(total);
    let mut filled = 0;
    let mut x = DVector::zeros(n);
    let mut slacks = Vec::with_capacity(problem.levels.len());

    for level in &problem.levels {
        let c = fixed_a.rows(0, filled).into_owned();
        let d = fixed_d.rows(0, filled).into_owned();
        let (x_new, w) = solve_level_warm(level.level, &c, &d, &level.a, &level.b, regularization, x)?;
        let m = level.rows();
        fixed_a.view_mut((filled, 0), (m, n)).copy_from(&level.a);
        fixed_d.rows_mut(filled, m).copy_from(&(&level.b + &w));
        filled += m;
        x = x_new;
        slacks.push(w);
    }

    let qdot = if filled == 0 {
        DVector::zeros(n)
    } else {
        min_norm_pass(&fixed_a, &fixed_d, x, problem.levels.last().map_or(0, |l| l.level))?
    };
    let objective_per_level = slacks.iter().map(|w| w.norm()).collect();
    Ok(CascadeSolution { qdot, slacks, objective_per_level })
}

fn min_norm_pass(
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    start: DVector<f64>,
    last_level: u32,
) -> Result<DVector<f64>, HqpError> {
    let n = start.len();
    let hessian = DVector::from_element(n, 1.0);
    let linear = DVector::zeros(n);
    let qp = DiagQp { hessian: &hessian, linear: &linear, g: c, bound: d };
    let res = qp
        .solve(start, Vec::new(), 100 * c.nrows().max(1))
        .map_err(|e| HqpError::NumericalFailure { level: last_level + 1, iterations: e.iterations })?;
    Ok(res.z)
}
