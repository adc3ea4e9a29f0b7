//! Serial revolute chains: forward kinematics and geometric Jacobians.

mod model_file;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

pub use model_file::{JointDescriptor, ModelDocument, TransformDescriptor};

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("model serialization: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("function returned a non-finite value at column {0}")]
    NonFiniteEvaluation(usize),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

/// End-effector pose in the base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self { position: iso.translation.vector, orientation: iso.rotation }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevoluteJoint {
    pub name: String,
    pub axis: Unit<Vector3<f64>>,
    pub origin: Isometry3<f64>,
    pub lower: f64,
    pub upper: f64,
    pub max_velocity: f64,
}

/// Joint positions and velocities at simulation time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub t: f64,
}

impl JointState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self { q, qdot: DVector::zeros(n), t: 0.0 }
    }
}

/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorModel {
    name: String,
    joints: Vec<RevoluteJoint>,
    ee_offset: Isometry3<f64>,
    document: ModelDocument,
    /// Ranks of the position and geometric Jacobians at a non-special
    /// configuration.
    generic_ranks: (usize, usize),
}

/// Frames visited while walking the chain.
struct ChainWalk {
    joint_origins: Vec<Vector3<f64>>,
    joint_axes: Vec<Vector3<f64>>,
    ee: Isometry3<f64>,
}

impl ManipulatorModel {
    pub fn from_document(document: ModelDocument) -> Result<Self, KinematicsError> {
        if document.joints.is_empty() {
            return Err(KinematicsError::InvalidModel("model needs at least one joint".into()));
        }
        let mut joints = Vec::with_capacity(document.joints.len());
        for (i, j) in document.joints.iter().enumerate() {
            let axis = Vector3::from(j.axis);
            if !axis.iter().all(|v| v.is_finite()) || (axis.norm() - 1.0).abs() > 1e-9 {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i} ({}) axis is not unit length",
                    j.name
                )));
            }
            if !(j.lower < j.upper) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i} ({}) has lower limit {} >= upper limit {}",
                    j.name, j.lower, j.upper
                )));
            }
            if !(j.velocity > 0.0) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i} ({}) velocity limit must be positive",
                    j.name
                )));
            }
            joints.push(RevoluteJoint {
                name: j.name.clone(),
                axis: Unit::new_unchecked(axis),
                origin: j.origin.isometry()?,
                lower: j.lower,
                upper: j.upper,
                max_velocity: j.velocity,
            });
        }
        let mut names: Vec<&str> = joints.iter().map(|j| j.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(KinematicsError::InvalidModel("joint names must be unique".into()));
        }
        let ee_offset = document.ee_offset.isometry()?;
        let mut model = Self { name: document.name.clone(), joints, ee_offset, document, generic_ranks: (0, 0) };
        model.generic_ranks = model.probe_ranks();
        Ok(model)
    }

    pub fn from_toml(text: &str) -> Result<Self, KinematicsError> {
        Self::from_document(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, KinematicsError> {
        Ok(toml::to_string(&self.document)?)
    }

    /// The bundled 7-DOF reference arm.
    pub fn panda() -> Self {
        Self::from_toml(include_str!("../../models/panda.toml")).expect("bundled model is valid")
    }

    /// Planar arm in the xy-plane: every joint rotates about z and each link
    /// extends along x.
    pub fn planar(lengths: &[f64]) -> Result<Self, KinematicsError> {
        let limit = std::f64::consts::PI;
        let joints = lengths
            .iter()
            .enumerate()
            .map(|(i, _)| JointDescriptor {
                name: format!("j{i}"),
                origin: TransformDescriptor {
                    xyz: [if i == 0 { 0.0 } else { lengths[i - 1] }, 0.0, 0.0],
                    rpy: [0.0; 3],
                },
                axis: [0.0, 0.0, 1.0],
                lower: -limit,
                upper: limit,
                velocity: 2.0,
            })
            .collect();
        let last = lengths.last().copied().unwrap_or(0.0);
        Self::from_document(ModelDocument {
            name: format!("planar{}", lengths.len()),
            joints,
            ee_offset: TransformDescriptor { xyz: [last, 0.0, 0.0], rpy: [0.0; 3] },
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Ranks of the position and geometric Jacobians away from singular
    /// configurations (3 and 6 for a spatial 6+ DOF arm, 2 and 3 for a
    /// planar one).
    pub fn generic_ranks(&self) -> (usize, usize) {
        self.generic_ranks
    }

    fn probe_ranks(&self) -> (usize, usize) {
        // an irrational stride keeps the probe off aligned configurations
        let q = DVector::from_iterator(
            self.dof(),
            self.joints.iter().enumerate().map(|(j, joint)| {
                let frac = (0.3 + 0.618_034 * j as f64).fract();
                joint.lower + (joint.upper - joint.lower) * (0.25 + 0.5 * frac)
            }),
        );
        let rank = |m: DMatrix<f64>| {
            let sv = m.singular_values();
            let max = sv.max();
            sv.iter().filter(|s| **s > 1e-9 * max.max(1e-300)).count()
        };
        let pos = self.position_jacobian(&q).map(rank).unwrap_or(0);
        let geo = self.geometric_jacobian(&q).map(rank).unwrap_or(0);
        (pos, geo)
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[RevoluteJoint] {
        &self.joints
    }

    pub fn ee_offset(&self) -> &Isometry3<f64> {
        &self.ee_offset
    }

    pub fn document(&self) -> &ModelDocument {
        &self.document
    }

    pub fn lower_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.lower))
    }

    pub fn upper_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.upper))
    }

    pub fn velocity_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.max_velocity))
    }

    pub fn check_dim(&self, q: &DVector<f64>) -> Result<(), KinematicsError> {
        if q.len() == self.dof() {
            Ok(())
        } else {
            Err(KinematicsError::DimensionMismatch { expected: self.dof(), got: q.len() })
        }
    }

    /// Clamps every joint into its position limits.
    pub fn clamp(&self, q: &mut DVector<f64>) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.lower, j.upper);
        }
    }

    fn walk(&self, q: &DVector<f64>) -> ChainWalk {
        let mut frame = Isometry3::identity();
        let mut joint_origins = Vec::with_capacity(self.dof());
        let mut joint_axes = Vec::with_capacity(self.dof());
        for (joint, &angle) in self.joints.iter().zip(q.iter()) {
            frame *= joint.origin;
            joint_origins.push(frame.translation.vector);
            joint_axes.push(frame.rotation * joint.axis.into_inner());
            frame *= UnitQuaternion::from_axis_angle(&joint.axis, angle);
        }
        ChainWalk { joint_origins, joint_axes, ee: frame * self.ee_offset }
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Pose, KinematicsError> {
        self.check_dim(q)?;
        Ok(Pose::from_isometry(&self.walk(q).ee))
    }

    /// Columns `z_j × (x_ee − o_j)` in the base frame.
    pub fn position_jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, KinematicsError> {
        self.check_dim(q)?;
        let walk = self.walk(q);
        let p = walk.ee.translation.vector;
        let mut jac = DMatrix::zeros(3, self.dof());
        for (j, (o, z)) in walk.joint_origins.iter().zip(&walk.joint_axes).enumerate() {
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&z.cross(&(p - o)));
        }
        Ok(jac)
    }

    /// Linear rows on top, angular-velocity rows below.
    pub fn geometric_jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, KinematicsError> {
        self.check_dim(q)?;
        let walk = self.walk(q);
        let p = walk.ee.translation.vector;
        let mut jac = DMatrix::zeros(6, self.dof());
        for (j, (o, z)) in walk.joint_origins.iter().zip(&walk.joint_axes).enumerate() {
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&z.cross(&(p - o)));
            jac.fixed_view_mut::<3, 1>(3, j).copy_from(z);
        }
        Ok(jac)
    }
}

/// Central differences: column `j` is `(f(q + h e_j) − f(q − h e_j)) / 2h`.
pub fn finite_difference_jacobian<F>(f: F, q: &DVector<f64>, h: f64) -> Result<DMatrix<f64>, KinematicsError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(KinematicsError::InvalidStep(h));
    }
    let mut columns = Vec::with_capacity(q.len());
    for j in 0..q.len() {
        let mut plus = q.clone();
        plus[j] += h;
        let mut minus = q.clone();
        minus[j] -= h;
        let fp = f(&plus);
        let fm = f(&minus);
        if fp.len() != fm.len() || fp.iter().chain(fm.iter()).any(|v| !v.is_finite()) {
            return Err(KinematicsError::NonFiniteEvaluation(j));
        }
        columns.push((fp - fm) / (2.0 * h));
    }
    if columns.is_empty() {
        return Ok(DMatrix::zeros(f(q).len(), 0));
    }
    Ok(DMatrix::from_columns(&columns))
}

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation vector of `current · goal⁻¹`, i.e. the quaternion log error.
pub fn orientation_error(current: &UnitQuaternion<f64>, goal: &UnitQuaternion<f64>) -> Vector3<f64> {
    (current * goal.inverse()).scaled_axis()
}

/// Inverse left Jacobian of SO(3) at rotation vector `phi`; maps world angular
/// velocity to the rate of the rotation vector.
pub fn so3_left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() - 0.5 * k + (1.0 / 12.0) * k * k;
    }
    let coeff = 1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() - 0.5 * k + coeff * k * k
}
