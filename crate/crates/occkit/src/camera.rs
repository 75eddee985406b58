//! Pinhole cameras and the visible-voxel mask.

use nalgebra::{Matrix3, Vector3};

use crate::error::Result;
use crate::grid::{FovMask, GridSpec};
use crate::pose::Pose;

/// Pinhole camera. `extrinsic` maps camera coordinates into the ego frame;
/// the camera looks along its own +z with x right and y down.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsic: Matrix3<f64>,
    pub extrinsic: Pose,
    /// (width, height) in pixels.
    pub image_size: [u32; 2],
}

impl CameraModel {
    /// Ingest the compact 3-scalar intrinsic form (focal_x, focal_y, skew)
    /// with the principal point assumed at the image center.
    pub fn from_scalars(focals: [f64; 3], extrinsic: Pose, image_size: [u32; 2]) -> Self {
        let [fx, fy, skew] = focals;
        let cx = image_size[0] as f64 / 2.0;
        let cy = image_size[1] as f64 / 2.0;
        let intrinsic = Matrix3::new(fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        CameraModel {
            intrinsic,
            extrinsic,
            image_size,
        }
    }

    pub fn from_matrix(intrinsic: Matrix3<f64>, extrinsic: Pose, image_size: [u32; 2]) -> Self {
        CameraModel {
            intrinsic,
            extrinsic,
            image_size,
        }
    }

    /// Pixel coordinates of an ego-frame point, or None when behind the
    /// camera plane.
    pub fn project(&self, p_ego: &Vector3<f64>) -> Option<[f64; 2]> {
        let cam = self.extrinsic.inverse().transform_point(p_ego);
        if cam.z <= 0.0 {
            return None;
        }
        let hom = self.intrinsic * cam;
        Some([hom.x / hom.z, hom.y / hom.z])
    }

    fn sees(&self, p_ego: &Vector3<f64>) -> bool {
        match self.project(p_ego) {
            Some([u, v]) => {
                u >= 0.0
                    && u < self.image_size[0] as f64
                    && v >= 0.0
                    && v < self.image_size[1] as f64
            }
            None => false,
        }
    }
}

/// Mark every voxel whose center lands inside at least one camera image.
/// Fails with `SingularPose` if any extrinsic is not a rigid transform.
pub fn fov_mask(spec: &GridSpec, cameras: &[CameraModel]) -> Result<FovMask> {
    for cam in cameras {
        cam.extrinsic.validate()?;
    }
    let mut mask = FovMask::all_hidden(*spec);
    let [l, w, h] = spec.dims;
    for i in 0..l {
        for j in 0..w {
            for k in 0..h {
                let center = spec.voxel_to_ego([i, j, k]);
                if cameras.iter().any(|c| c.sees(&center)) {
                    mask.data[spec.linear([i, j, k])] = true;
                }
            }
        }
    }
    Ok(mask)
}

/// Extrinsic of a camera looking along ego +x (image x to ego -y, image y to
/// ego -z), mounted at `position`.
pub fn forward_extrinsic(position: Vector3<f64>) -> Pose {
    // columns are the camera axes expressed in the ego frame
    let rotation = Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    );
    Pose {
        rotation,
        translation: position,
    }
}
