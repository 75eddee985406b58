//! Rigid transforms (rotation + translation) used for ego and agent poses.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Orthonormality / determinant tolerance for a valid rotation.
pub const POSE_TOL: f64 = 1e-9;

/// SE(3) rigid transform. Maps points from the source frame into the target
/// frame as `R * x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validating constructor. `rotation` must be orthonormal with det +1
    /// within `POSE_TOL`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Pose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Rotation about +z by `yaw` plus a translation. Always valid.
    pub fn from_yaw_translation(yaw: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Pose {
            rotation,
            translation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gram = self.rotation.transpose() * self.rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > POSE_TOL {
            return Err(Error::SingularPose(format!(
                "R^T R deviates from identity by {dev:.3e}"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > POSE_TOL {
            return Err(Error::SingularPose(format!("det(R) = {det}")));
        }
        for v in self
            .rotation
            .iter()
            .chain(self.translation.iter())
        {
            if !v.is_finite() {
                return Err(Error::SingularPose("non-finite entry".into()));
            }
        }
        Ok(())
    }

    /// `self.compose(other)` applies `other` first: (self ∘ other)(x) = self(other(x)).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}
