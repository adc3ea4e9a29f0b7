//! Independent reference solvers used only by tests.
#![allow(dead_code)]

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sotbt::hqp::{CascadeProblem, LevelConstraint};

/// Solves `min ½‖w‖²  s.t.  C x ≤ d,  A x - w ≤ b` with the Clarabel interior
/// point solver and returns `(x, w)`.
fn interior_point_level(
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let n = a.ncols();
    let m = a.nrows();
    let dim = n + m;
    let rows = c.nrows() + m;

    let mut p_dense = vec![vec![0.0; dim]; dim];
    for i in 0..m {
        p_dense[n + i][n + i] = 1.0;
    }
    let mut g_dense = vec![vec![0.0; dim]; rows];
    let mut h = vec![0.0; rows];
    for i in 0..c.nrows() {
        for j in 0..n {
            g_dense[i][j] = c[(i, j)];
        }
        h[i] = d[i];
    }
    for i in 0..m {
        let r = c.nrows() + i;
        for j in 0..n {
            g_dense[r][j] = a[(i, j)];
        }
        g_dense[r][n + i] = -1.0;
        h[r] = b[i];
    }
    let p = CscMatrix::from(p_dense.iter().map(|r| r.iter()));
    let g = CscMatrix::from(g_dense.iter().map(|r| r.iter()));
    let q = vec![0.0; dim];
    let cones = [NonnegativeConeT(rows)];
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(400)
        .tol_gap_abs(1e-13)
        .tol_gap_rel(1e-13)
        .tol_feas(1e-13)
        .tol_ktratio(1e-10)
        .build()
        .unwrap();
    let mut solver = DefaultSolver::new(&p, &q, &g, &h, &cones, settings).unwrap();
    solver.solve();
    assert!(
        matches!(solver.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved),
        "oracle QP status {:?}",
        solver.solution.status
    );
    let x = DVector::from_iterator(n, solver.solution.x[..n].iter().copied());
    let w = DVector::from_iterator(m, solver.solution.x[n..].iter().copied());
    (x, w)
}

/// Lexicographic reference: solve each level alone to optimality, freeze the
/// optimal slack as a constraint, recurse. Returns per-level `‖w_p‖`.
pub fn lexicographic_objectives(problem: &CascadeProblem) -> Vec<f64> {
    let n = problem.n();
    let mut c = DMatrix::<f64>::zeros(0, n);
    let mut d = DVector::<f64>::zeros(0);
    let mut out = Vec::new();
    for level in problem.levels() {
        let (_, w) = interior_point_level(&c, &d, level.a(), level.b());
        let w = w.map(|v| v.max(0.0));
        out.push(w.norm());
        let rows = c.nrows() + level.rows();
        let mut c_new = DMatrix::zeros(rows, n);
        c_new.view_mut((0, 0), (c.nrows(), n)).copy_from(&c);
        c_new.view_mut((c.nrows(), 0), (level.rows(), n)).copy_from(level.a());
        let mut d_new = DVector::zeros(rows);
        d_new.rows_mut(0, d.len()).copy_from(&d);
        d_new.rows_mut(d.len(), level.rows()).copy_from(&(level.b() + &w));
        c = c_new;
        d = d_new;
    }
    out
}

/// Total squared violation of upper-bound rows at `x`.
pub fn squared_violation(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    (a * x - b).iter().map(|v| v.max(0.0).powi(2)).sum()
}

/// Dense 1-D grid search minimising the total squared violation.
pub fn grid_search_1d(a: &DMatrix<f64>, b: &DVector<f64>, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    let count = ((hi - lo) / step).round() as usize;
    (0..=count)
        .map(|k| {
            let x = lo + k as f64 * step;
            (x, squared_violation(a, b, &DVector::from_vec(vec![x])))
        })
        .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

pub fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> CascadeProblem {
    let levels = rng.random_range(2..=3);
    let mut out = Vec::new();
    for p in 1..=levels {
        let rows = rng.random_range(1..=4);
        let a = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
        out.push(LevelConstraint::new(p, a, b).unwrap());
    }
    CascadeProblem::new(n, out).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
