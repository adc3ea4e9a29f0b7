//! Task vocabulary: error functions, their Jacobians and the P control law
//! that turns an evaluated task into bound rows.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Unit, Vector3};
use thiserror::Error;

use crate::hqp::{BoundKind, RawRows};
use crate::kinematics::{orientation_error, so3_left_jacobian_inverse, KinematicsError, ManipulatorModel, Pose};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task `{task}`: {detail}")]
    DimensionMismatch { task: String, detail: String },
    #[error("task `{task}` is invalid: {detail}")]
    InvalidSpec { task: String, detail: String },
    #[error("unknown task kind `{0}`")]
    UnknownKind(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    PointReach,
    PlaneAvoid,
    LineFollow,
    JointVelocityBox,
    PoseReach,
}

impl TaskKind {
    pub fn parse(s: &str) -> Result<Self, TaskError> {
        match s {
            "point_reach" => Ok(Self::PointReach),
            "plane_avoid" => Ok(Self::PlaneAvoid),
            "line_follow" => Ok(Self::LineFollow),
            "joint_velocity_box" => Ok(Self::JointVelocityBox),
            "pose_reach" => Ok(Self::PoseReach),
            other => Err(TaskError::UnknownKind(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PointReach => "point_reach",
            Self::PlaneAvoid => "plane_avoid",
            Self::LineFollow => "line_follow",
            Self::JointVelocityBox => "joint_velocity_box",
            Self::PoseReach => "pose_reach",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The half-space `normal · x ≥ offset + margin`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Unit<Vector3<f64>>,
    pub offset: f64,
    pub margin: f64,
}

impl Plane {
    /// Signed distance of `x` from the physical plane (margin not included).
    pub fn clearance(&self, x: &Vector3<f64>) -> f64 {
        self.normal.dot(x) - self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub origin: Vector3<f64>,
    pub direction: Unit<Vector3<f64>>,
}

impl Line {
    /// `I − u uᵀ`
    pub fn projector(&self) -> Matrix3<f64> {
        let u = self.direction.into_inner();
        Matrix3::identity() - u * u.transpose()
    }

    pub fn deviation(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.projector() * (x - self.origin)
    }
}

/// Joint velocity bounds; infinite entries leave a joint unbounded on that side.
/// With `position_gain`, each bound is tightened towards the joint position
/// limits as `k (limit − q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub position_gain: Option<f64>,
}

impl VelocityBox {
    pub fn from_model(model: &ManipulatorModel) -> Self {
        let v = model.velocity_limits();
        Self { lower: -&v, upper: v, position_gain: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskGeometry {
    Point { goal: Vector3<f64> },
    Plane(Plane),
    Line(Line),
    VelocityBox(VelocityBox),
    Pose { goal: Pose },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gain {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

impl Gain {
    fn check(&self) -> bool {
        match self {
            Gain::Scalar(k) => k.is_finite() && *k > 0.0,
            Gain::Diagonal(ks) => !ks.is_empty() && ks.iter().all(|k| k.is_finite() && *k > 0.0),
        }
    }
}

impl Default for Gain {
    fn default() -> Self {
        Gain::Scalar(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockingParams {
    /// `s_x`: success once `‖e‖ ≤ error_threshold`.
    pub error_threshold: f64,
    /// `f_x`: failure once the task has been set longer than this, seconds.
    pub time_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub geometry: TaskGeometry,
    pub priority: u32,
    pub gain: Gain,
    pub blocking: Option<BlockingParams>,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, geometry: TaskGeometry, priority: u32) -> Self {
        Self { id: id.into(), geometry, priority, gain: Gain::default(), blocking: None }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = Gain::Scalar(gain);
        self
    }

    pub fn blocking(mut self, error_threshold: f64, time_threshold: f64) -> Self {
        self.blocking = Some(BlockingParams { error_threshold, time_threshold });
        self
    }

    pub fn kind(&self) -> TaskKind {
        match self.geometry {
            TaskGeometry::Point { .. } => TaskKind::PointReach,
            TaskGeometry::Plane(_) => TaskKind::PlaneAvoid,
            TaskGeometry::Line(_) => TaskKind::LineFollow,
            TaskGeometry::VelocityBox(_) => TaskKind::JointVelocityBox,
            TaskGeometry::Pose { .. } => TaskKind::PoseReach,
        }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let invalid = |detail: &str| TaskError::InvalidSpec { task: self.id.clone(), detail: detail.to_string() };
        if self.id.is_empty() {
            return Err(invalid("empty id"));
        }
        if self.priority == 0 {
            return Err(invalid("priority must be >= 1"));
        }
        if !self.gain.check() {
            return Err(invalid("gain entries must be positive and finite"));
        }
        if let Some(b) = self.blocking {
            if !(b.error_threshold > 0.0) || !(b.time_threshold > 0.0) {
                return Err(invalid("blocking thresholds must be positive"));
            }
        }
        let unit = |v: &Vector3<f64>| (v.norm() - 1.0).abs() <= 1e-9;
        match &self.geometry {
            TaskGeometry::Point { goal } if !goal.iter().all(|v| v.is_finite()) => Err(invalid("non-finite goal")),
            TaskGeometry::Plane(p) if !unit(&p.normal) => Err(invalid("plane normal is not unit length")),
            TaskGeometry::Plane(p) if !(p.margin >= 0.0) || !p.offset.is_finite() => {
                Err(invalid("plane offset must be finite and margin nonnegative"))
            }
            TaskGeometry::Line(l) if !unit(&l.direction) => Err(invalid("line direction is not unit length")),
            TaskGeometry::VelocityBox(b) if b.lower.len() != b.upper.len() => {
                Err(invalid("velocity box bounds differ in length"))
            }
            TaskGeometry::VelocityBox(b) if b.lower.iter().zip(b.upper.iter()).any(|(l, u)| !(l <= u)) => {
                Err(invalid("velocity box lower bound exceeds upper bound"))
            }
            _ => Ok(()),
        }
    }
}

/// An evaluated task at one joint configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskEvaluation {
    pub task_id: String,
    pub e: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub bound_kind: BoundKind,
    pub error_norm: f64,
    /// Lower and upper velocity targets for box rows.
    pub velocity_bounds: Option<(DVector<f64>, DVector<f64>)>,
}

fn dense3(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// Evaluates `e(q)` and `J(q) = ∂e/∂q`.
pub fn evaluate(task: &TaskSpec, model: &ManipulatorModel, q: &DVector<f64>) -> Result<TaskEvaluation, TaskError> {
    model.check_dim(q)?;
    let n = model.dof();
    let (e, jacobian, bound_kind, velocity_bounds) = match &task.geometry {
        TaskGeometry::Point { goal } => {
            let x = model.forward_kinematics(q)?.position;
            (dense3(&(x - goal)), model.position_jacobian(q)?, BoundKind::Equality, None)
        }
        TaskGeometry::Plane(plane) => {
            let x = model.forward_kinematics(q)?.position;
            let jp = model.position_jacobian(q)?;
            let e = plane.offset + plane.margin - plane.normal.dot(&x);
            let n_row = DMatrix::from_row_slice(1, 3, plane.normal.as_slice());
            (DVector::from_element(1, e), -(n_row * jp), BoundKind::Upper, None)
        }
        TaskGeometry::Line(line) => {
            let x = model.forward_kinematics(q)?.position;
            let proj = line.projector();
            let proj_dyn = DMatrix::from_column_slice(3, 3, proj.as_slice());
            (dense3(&line.deviation(&x)), proj_dyn * model.position_jacobian(q)?, BoundKind::Equality, None)
        }
        TaskGeometry::VelocityBox(vbox) => {
            let (lower, upper) = if vbox.lower.is_empty() {
                let v = model.velocity_limits();
                (-&v, v)
            } else {
                if vbox.lower.len() != n {
                    return Err(TaskError::DimensionMismatch {
                        task: task.id.clone(),
                        detail: format!("velocity box has {} joints, model has {n}", vbox.lower.len()),
                    });
                }
                (vbox.lower.clone(), vbox.upper.clone())
            };
            let mut lo = Vec::new();
            let mut hi = Vec::new();
            let mut joints = Vec::new();
            for j in 0..n {
                let (mut l, mut u) = (lower[j], upper[j]);
                if let Some(k) = vbox.position_gain {
                    let joint = &model.joints()[j];
                    u = u.min(k * (joint.upper - q[j]));
                    l = l.max(k * (joint.lower - q[j]));
                    if l > u {
                        let mid = 0.5 * (l + u);
                        l = mid;
                        u = mid;
                    }
                }
                if l.is_finite() || u.is_finite() {
                    joints.push(j);
                    // an infinite side is replaced by a bound that never binds
                    lo.push(if l.is_finite() { l } else { -1e12 });
                    hi.push(if u.is_finite() { u } else { 1e12 });
                }
            }
            let mut sel = DMatrix::zeros(joints.len(), n);
            for (row, &j) in joints.iter().enumerate() {
                sel[(row, j)] = 1.0;
            }
            (DVector::zeros(0), sel, BoundKind::Double, Some((DVector::from_vec(lo), DVector::from_vec(hi))))
        }
        TaskGeometry::Pose { goal } => {
            let pose = model.forward_kinematics(q)?;
            let geo = model.geometric_jacobian(q)?;
            let rot_err = orientation_error(&pose.orientation, &goal.orientation);
            let mut e = DVector::zeros(6);
            e.rows_mut(0, 3).copy_from(&dense3(&(pose.position - goal.position)));
            e.rows_mut(3, 3).copy_from(&dense3(&rot_err));
            let jinv = so3_left_jacobian_inverse(&rot_err);
            let jinv = DMatrix::from_column_slice(3, 3, jinv.as_slice());
            let mut jac = DMatrix::zeros(6, n);
            jac.rows_mut(0, 3).copy_from(&geo.rows(0, 3));
            jac.rows_mut(3, 3).copy_from(&(jinv * geo.rows(3, 3)));
            (e, jac, BoundKind::Equality, None)
        }
    };
    let error_norm = e.norm();
    Ok(TaskEvaluation { task_id: task.id.clone(), e, jacobian, bound_kind, error_norm, velocity_bounds })
}

/// Applies `ė* = −K e` and returns rows ready for bound transcription.
/// Box tasks emit their velocity bounds directly and ignore the gain.
pub fn to_constraint_rows(ev: &TaskEvaluation, gain: &Gain) -> Result<RawRows, TaskError> {
    if let Some((lower, upper)) = &ev.velocity_bounds {
        return Ok(RawRows::double(ev.jacobian.clone(), lower.clone(), upper.clone()));
    }
    let target = match gain {
        Gain::Scalar(k) => -*k * &ev.e,
        Gain::Diagonal(ks) => {
            if ks.len() != ev.e.len() {
                return Err(TaskError::DimensionMismatch {
                    task: ev.task_id.clone(),
                    detail: format!("gain has {} entries, error has {}", ks.len(), ev.e.len()),
                });
            }
            -DVector::from_column_slice(ks).component_mul(&ev.e)
        }
    };
    Ok(RawRows::new(ev.bound_kind, ev.jacobian.clone(), target))
}
