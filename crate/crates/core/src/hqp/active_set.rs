//! Primal active-set method for small dense QPs with a diagonal, positive
//! definite Hessian:
//!
//! ```text
//! min ½ zᵀ diag(h) z + cᵀ z   s.t.   G z ≤ g
//! ```
//!
//! The caller supplies a feasible start. Each working-set subproblem is an
//! equality-constrained least-squares step solved in the nullspace of the
//! working rows.

use nalgebra::{DMatrix, DVector};

/// Relative threshold under which a step is considered zero.
const STEP_TOL: f64 = 1e-13;
/// Multipliers above `-MULT_TOL * scale` are treated as nonnegative.
const MULT_TOL: f64 = 1e-11;
/// Minimum relative rate `G_i p / (|G_i| |p|)` for a row to block a step.
const BLOCK_TOL: f64 = 1e-11;

#[derive(Debug)]
pub(crate) struct DiagQp<'a> {
    pub hessian: &'a DVector<f64>,
    pub linear: &'a DVector<f64>,
    pub g: &'a DMatrix<f64>,
    pub bound: &'a DVector<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ActiveSetResult {
    pub z: DVector<f64>,
    pub working: Vec<usize>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BudgetExceeded {
    pub iterations: usize,
}

struct Subproblem {
    step: DVector<f64>,
    multipliers: DVector<f64>,
}

impl DiagQp<'_> {
    fn dim(&self) -> usize {
        self.hessian.len()
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        self.hessian.component_mul(z) + self.linear
    }

    /// Solves `min ½ pᵀHp + gradᵀp  s.t.  G_W p = 0` and returns the step with
    /// the multipliers of the working rows evaluated at `z + p`.
    fn subproblem(&self, working: &[usize], grad: &DVector<f64>) -> Subproblem {
        let n = self.dim();
        let k = working.len();
        if k == 0 {
            let step = -grad.component_div(self.hessian);
            return Subproblem { step, multipliers: DVector::zeros(0) };
        }

        // QR of [G_Wᵀ | 0] gives a full orthogonal Q whose trailing columns
        // span null(G_W).
        let mut padded = DMatrix::<f64>::zeros(n, n);
        for (col, &row) in working.iter().enumerate() {
            padded.set_column(col, &self.g.row(row).transpose());
        }
        let qr = padded.qr();
        let q = qr.q();
        let r = qr.r();

        let step = if k < n {
            let z_basis = q.columns(k, n - k).into_owned();
            let mut reduced = DMatrix::<f64>::zeros(n - k, n - k);
            for i in 0..(n - k) {
                for j in i..(n - k) {
                    let mut acc = 0.0;
                    for t in 0..n {
                        acc += z_basis[(t, i)] * self.hessian[t] * z_basis[(t, j)];
                    }
                    reduced[(i, j)] = acc;
                    reduced[(j, i)] = acc;
                }
            }
            let rhs = -(z_basis.transpose() * grad);
            let coeffs = match reduced.clone().cholesky() {
                Some(chol) => chol.solve(&rhs),
                None => reduced
                    .svd(true, true)
                    .solve(&rhs, 1e-14)
                    .unwrap_or_else(|_| DVector::zeros(n - k)),
            };
            z_basis * coeffs
        } else {
            DVector::zeros(n)
        };

        // G_Wᵀ λ = -(grad + H p) via the leading k×k triangle of R.
        let resid = -(grad + self.hessian.component_mul(&step));
        let q1 = q.columns(0, k);
        let rhs = q1.transpose() * resid;
        let r1 = r.view((0, 0), (k, k)).into_owned();
        let multipliers = r1
            .solve_upper_triangular(&rhs)
            .unwrap_or_else(|| DVector::zeros(k));
        Subproblem { step, multipliers }
    }

    /// Runs the active-set iteration from a feasible `start`. `initial_working`
    /// must list rows active at `start` with linearly independent normals.
    pub fn solve(
        &self,
        start: DVector<f64>,
        initial_working: Vec<usize>,
        budget: usize,
    ) -> Result<ActiveSetResult, BudgetExceeded> {
        let rows = self.g.nrows();
        let mut z = start;
        let mut working = initial_working;
        let mut in_working = vec![false; rows];
        for &w in &working {
            in_working[w] = true;
        }

        // set after a zero-length step; switches to Bland's rule so degenerate
        // vertices cannot cycle
        let mut stalled = false;

        for iteration in 0..budget {
            let grad = self.gradient(&z);
            let sub = self.subproblem(&working, &grad);
            let step_norm = sub.step.norm();

            if step_norm > STEP_TOL * (1.0 + z.norm()) {
                let mut alpha = 1.0;
                let mut blocking = None;
                for i in 0..rows {
                    if in_working[i] {
                        continue;
                    }
                    let row = self.g.row(i);
                    let rate = row.dot(&sub.step.transpose());
                    if rate <= BLOCK_TOL * row.norm() * step_norm {
                        continue;
                    }
                    let room = (self.bound[i] - row.dot(&z.transpose())).max(0.0);
                    let ratio = room / rate;
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = Some(i);
                    }
                }
                z += alpha * &sub.step;
                stalled = alpha * step_norm <= STEP_TOL * (1.0 + z.norm());
                if let Some(i) = blocking {
                    working.push(i);
                    in_working[i] = true;
                    continue;
                }
            }

            // z is now the minimiser on the working set; the multipliers were
            // evaluated there, so no second solve is needed to test them
            if working.is_empty() {
                return Ok(ActiveSetResult { z, working, iterations: iteration + 1 });
            }
            let scale = 1.0 + sub.multipliers.amax();
            let threshold = -MULT_TOL * scale;
            let pick = if stalled {
                (0..working.len()).filter(|&i| sub.multipliers[i] < threshold).min_by_key(|&i| working[i])
            } else {
                (0..working.len())
                    .filter(|&i| sub.multipliers[i] < threshold)
                    .min_by(|&i, &j| sub.multipliers[i].total_cmp(&sub.multipliers[j]))
            };
            let Some(idx) = pick else {
                return Ok(ActiveSetResult { z, working, iterations: iteration + 1 });
            };
            let removed = working.remove(idx);
            in_working[removed] = false;
        }
        Err(BudgetExceeded { iterations: budget })
    }
}
