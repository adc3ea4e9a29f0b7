//! Model file schema (TOML). See `docs/model_format.md`.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::KinematicsError;

/// Translation plus roll-pitch-yaw (fixed-axis X, then Y, then Z) rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformDescriptor {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Default for TransformDescriptor {
    fn default() -> Self {
        Self { xyz: [0.0; 3], rpy: [0.0; 3] }
    }
}

impl TransformDescriptor {
    pub fn isometry(&self) -> Result<Isometry3<f64>, KinematicsError> {
        if self.xyz.iter().chain(&self.rpy).any(|v| !v.is_finite()) {
            return Err(KinematicsError::InvalidModel("non-finite transform".into()));
        }
        let [roll, pitch, yaw] = self.rpy;
        Ok(Isometry3::from_parts(
            Translation3::from(Vector3::from(self.xyz)),
            UnitQuaternion::from_euler_angles(roll, pitch, yaw),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDescriptor {
    pub name: String,
    /// Transform from the previous joint frame to this joint's frame.
    #[serde(default)]
    pub origin: TransformDescriptor,
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
    /// Velocity bound, rad/s.
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub name: String,
    #[serde(default)]
    pub ee_offset: TransformDescriptor,
    pub joints: Vec<JointDescriptor>,
}
