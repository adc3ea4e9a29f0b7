use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::HqpError;

/// How a block of task rows bounds the task velocity `J q̇`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Upper,
    Lower,
    Double,
    Equality,
}

impl FromStr for BoundKind {
    type Err = HqpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "upper" => Ok(Self::Upper),
            "lower" => Ok(Self::Lower),
            "double" => Ok(Self::Double),
            "equality" => Ok(Self::Equality),
            other => Err(HqpError::InvalidBoundKind(other.to_string())),
        }
    }
}

/// Task rows before transcription. For `Double`, `target` is the upper and
/// `lower_target` the lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRows {
    pub kind: BoundKind,
    pub jacobian: DMatrix<f64>,
    pub target: DVector<f64>,
    pub lower_target: Option<DVector<f64>>,
}

impl RawRows {
    pub fn new(kind: BoundKind, jacobian: DMatrix<f64>, target: DVector<f64>) -> Self {
        Self { kind, jacobian, target, lower_target: None }
    }

    pub fn double(jacobian: DMatrix<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        Self { kind: BoundKind::Double, jacobian, target: upper, lower_target: Some(lower) }
    }

    fn output_rows(&self) -> usize {
        match self.kind {
            BoundKind::Upper | BoundKind::Lower => self.jacobian.nrows(),
            BoundKind::Double | BoundKind::Equality => 2 * self.jacobian.nrows(),
        }
    }
}

/// Rewrites every bound kind as upper bounds `A q̇ ≤ b`.
///
/// Double and equality rows become an interleaved pair `(J_i, hi_i)`,
/// `(-J_i, -lo_i)` so row order is preserved.
pub fn transcribe_bounds(rows: &[RawRows]) -> Result<(DMatrix<f64>, DVector<f64>), HqpError> {
    let cols = rows.first().map_or(0, |r| r.jacobian.ncols());
    let mut total = 0;
    for r in rows {
        if r.jacobian.ncols() != cols {
            return Err(HqpError::DimensionMismatch(format!(
                "row blocks have {} and {cols} columns",
                r.jacobian.ncols()
            )));
        }
        if r.jacobian.nrows() != r.target.len() {
            return Err(HqpError::DimensionMismatch(format!(
                "J has {} rows but target has {}",
                r.jacobian.nrows(),
                r.target.len()
            )));
        }
        match (r.kind, &r.lower_target) {
            (BoundKind::Double, Some(lo)) if lo.len() == r.target.len() => {}
            (BoundKind::Double, Some(lo)) => {
                return Err(HqpError::DimensionMismatch(format!(
                    "lower target has {} entries, upper has {}",
                    lo.len(),
                    r.target.len()
                )))
            }
            (BoundKind::Double, None) => {
                return Err(HqpError::DimensionMismatch("double bound without lower target".into()))
            }
            (_, Some(_)) => {
                return Err(HqpError::DimensionMismatch(format!(
                    "lower target given for {:?} rows",
                    r.kind
                )))
            }
            (_, None) => {}
        }
        total += r.output_rows();
    }

    let mut a = DMatrix::zeros(total, cols);
    let mut b = DVector::zeros(total);
    let mut out = 0;
    for r in rows {
        for i in 0..r.jacobian.nrows() {
            let row = r.jacobian.row(i);
            match r.kind {
                BoundKind::Upper => {
                    a.set_row(out, &row);
                    b[out] = r.target[i];
                    out += 1;
                }
                BoundKind::Lower => {
                    a.set_row(out, &(-row));
                    b[out] = -r.target[i];
                    out += 1;
                }
                BoundKind::Double | BoundKind::Equality => {
                    let lo = r.lower_target.as_ref().map_or(r.target[i], |l| l[i]);
                    a.set_row(out, &row);
                    b[out] = r.target[i];
                    a.set_row(out + 1, &(-row));
                    b[out + 1] = -lo;
                    out += 2;
                }
            }
        }
    }
    Ok((a, b))
}
