//! Canonical (pose-free) alignment of voxel shapes.
//!
//! A shape is centered and rotated into its principal-axis basis so the same
//! physical object observed under different poses lands in nearly the same
//! coordinates. Eigenvector sign is fixed against the previous frame's axes
//! when available, so axes cannot flip between consecutive observations of a
//! slowly rotating object.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Eigenvalue-gap threshold below which the principal directions are
/// considered ill-defined.
pub const DEGENERACY_GAP: f64 = 1e-9;

/// Threshold on the third central moment below which the skewness sign rule
/// is unreliable.
const MOMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedShape {
    /// Centered points expressed in the axis basis (rows of `axesᵀ`).
    pub points: Vec<Vector3<f64>>,
    /// Orthonormal principal axes as columns, descending eigenvalue order,
    /// det +1.
    pub axes: Matrix3<f64>,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: [f64; 3],
    /// Set when the eigenvalue spectrum was too close to resolve directions
    /// and the axes fell back to the previous frame's (or the identity).
    pub degenerate: bool,
}

/// Subtract the mean. Returns the centered points and the mean itself.
pub fn center(points: &[Vector3<f64>]) -> Result<(Vec<Vector3<f64>>, Vector3<f64>)> {
    if points.is_empty() {
        return Err(Error::EmptyInput("center of empty point set"));
    }
    let mut mean = Vector3::zeros();
    for p in points {
        mean += p;
    }
    mean /= points.len() as f64;
    Ok((points.iter().map(|p| p - mean).collect(), mean))
}

/// Rotate a centered point set into its principal-axis frame.
///
/// Axis signs: against `prev_axes` each axis keeps a non-negative dot
/// product with its predecessor; on the first observation the sign makes the
/// third central moment along the axis non-negative, falling back to a
/// positive largest-magnitude component when the moment vanishes. The third
/// axis is flipped afterwards if needed for det +1.
pub fn canonicalize(
    centered: &[Vector3<f64>],
    prev_axes: Option<&Matrix3<f64>>,
) -> Result<AlignedShape> {
    if centered.is_empty() {
        return Err(Error::EmptyInput("canonicalize of empty point set"));
    }
    let n = centered.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in centered {
        cov += p * p.transpose();
    }
    cov /= n;

    let eig = nalgebra::SymmetricEigen::new(cov);
    // descending eigenvalue order
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*b].partial_cmp(&eig.eigenvalues[*a]).unwrap());
    let eigenvalues = [
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    ];

    let gap01 = eigenvalues[0] - eigenvalues[1];
    let gap12 = eigenvalues[1] - eigenvalues[2];
    let degenerate = gap01 < DEGENERACY_GAP || gap12 < DEGENERACY_GAP;

    let axes = if degenerate {
        match prev_axes {
            Some(prev) => *prev,
            None => Matrix3::identity(),
        }
    } else {
        let mut axes = Matrix3::zeros();
        for (col, src) in order.iter().enumerate() {
            let mut axis: Vector3<f64> = eig.eigenvectors.column(*src).into();
            let flip = match prev_axes {
                Some(prev) => {
                    let prev_axis: Vector3<f64> = prev.column(col).into();
                    axis.dot(&prev_axis) < 0.0
                }
                None => {
                    // skewness of the data along the axis decides the sign
                    let m3: f64 = centered.iter().map(|p| axis.dot(p).powi(3)).sum::<f64>() / n;
                    if m3.abs() >= MOMENT_TOL {
                        m3 < 0.0
                    } else {
                        let mut dominant = 0usize;
                        for c in 1..3 {
                            if axis[c].abs() > axis[dominant].abs() {
                                dominant = c;
                            }
                        }
                        axis[dominant] < 0.0
                    }
                }
            };
            if flip {
                axis = -axis;
            }
            axes.set_column(col, &axis);
        }
        if axes.determinant() < 0.0 {
            let third = -axes.column(2);
            axes.set_column(2, &third.into_owned());
        }
        axes
    };

    let at = axes.transpose();
    let points = centered.iter().map(|p| at * p).collect();
    Ok(AlignedShape {
        points,
        axes,
        eigenvalues,
        degenerate,
    })
}

/// Center and canonicalize voxel indices scaled to meters. `prev_axes`
/// chains sign decisions across a track.
pub fn align_voxels(
    voxels: &[[usize; 3]],
    resolution: f64,
    prev_axes: Option<&Matrix3<f64>>,
) -> Result<AlignedShape> {
    let points: Vec<Vector3<f64>> = voxels
        .iter()
        .map(|v| {
            Vector3::new(
                (v[0] as f64 + 0.5) * resolution,
                (v[1] as f64 + 0.5) * resolution,
                (v[2] as f64 + 0.5) * resolution,
            )
        })
        .collect();
    let (centered, _) = center(&points)?;
    canonicalize(&centered, prev_axes)
}

/// Align every voxel set of a sequence, chaining each frame's axes into the
/// next frame's sign decision.
pub fn align_sequence(
    voxel_sets: &[Vec<[usize; 3]>],
    resolution: f64,
) -> Result<Vec<AlignedShape>> {
    let mut out: Vec<AlignedShape> = Vec::with_capacity(voxel_sets.len());
    for set in voxel_sets {
        let prev = out.last().map(|s| &s.axes);
        out.push(align_voxels(set, resolution, prev)?);
    }
    Ok(out)
}
