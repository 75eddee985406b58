//! Minimum-area oriented box fitting for voxel instances.
//!
//! The footprint of a voxel set is the union of unit squares in the (i, j)
//! plane. The minimum-area enclosing rectangle of a convex polygon has a
//! side collinear with a hull edge, so scanning hull edges finds the exact
//! optimum.

use nalgebra::Vector3;

use crate::taxonomy::ClassId;

/// Yaw-oriented box. `yaw` is the heading of the long side in (-π/2, π/2];
/// `length >= width` always holds. The center is in meters relative to the
/// grid corner (add the grid origin for ego coordinates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl OrientedBox {
    pub fn dims(&self) -> [f64; 3] {
        [self.length, self.width, self.height]
    }
}

/// Convex hull in counter-clockwise order with strictly convex turns
/// (collinear points dropped). One point returns itself; collinear input
/// returns the two extreme points.
pub fn convex_hull_2d(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }

    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };

    let mut lower: Vec<[f64; 2]> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], *p) <= 0.0
        {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], *p) <= 0.0
        {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 2 {
        // fully collinear input collapses the chains; fall back to extremes
        return vec![pts[0], pts[pts.len() - 1]];
    }
    lower
}

/// Minimum-area enclosing rectangle of a point set.
/// Returns (center, yaw, length, width) with length >= width and yaw of the
/// long side normalized to (-π/2, π/2]. Degenerate inputs (all points
/// collinear) produce width 0.
pub fn min_area_rect(points: &[[f64; 2]]) -> ([f64; 2], f64, f64, f64) {
    assert!(!points.is_empty(), "min_area_rect on empty point set");
    let hull = convex_hull_2d(points);
    if hull.len() == 1 {
        return (hull[0], 0.0, 0.0, 0.0);
    }
    if hull.len() == 2 {
        let dx = hull[1][0] - hull[0][0];
        let dy = hull[1][1] - hull[0][1];
        let len = (dx * dx + dy * dy).sqrt();
        let center = [(hull[0][0] + hull[1][0]) / 2.0, (hull[0][1] + hull[1][1]) / 2.0];
        return (center, normalize_yaw(dy.atan2(dx)), len, 0.0);
    }

    let mut best_area = f64::INFINITY;
    let mut best = ([0.0, 0.0], 0.0, 0.0, 0.0);
    for e in 0..hull.len() {
        let p = hull[e];
        let q = hull[(e + 1) % hull.len()];
        let ex = q[0] - p[0];
        let ey = q[1] - p[1];
        let elen = (ex * ex + ey * ey).sqrt();
        let (dx, dy) = (ex / elen, ey / elen); // edge direction
        // extents along the edge direction and its normal
        let mut lo_d = f64::INFINITY;
        let mut hi_d = f64::NEG_INFINITY;
        let mut lo_n = f64::INFINITY;
        let mut hi_n = f64::NEG_INFINITY;
        for v in &hull {
            let d = v[0] * dx + v[1] * dy;
            let n = -v[0] * dy + v[1] * dx;
            lo_d = lo_d.min(d);
            hi_d = hi_d.max(d);
            lo_n = lo_n.min(n);
            hi_n = hi_n.max(n);
        }
        let side_d = hi_d - lo_d;
        let side_n = hi_n - lo_n;
        let area = side_d * side_n;
        if area < best_area {
            best_area = area;
            let cd = (lo_d + hi_d) / 2.0;
            let cn = (lo_n + hi_n) / 2.0;
            let center = [cd * dx - cn * dy, cd * dy + cn * dx];
            let (length, width, yaw) = if side_d >= side_n {
                (side_d, side_n, dy.atan2(dx))
            } else {
                (side_n, side_d, (-dx).atan2(dy) + std::f64::consts::PI)
            };
            best = (center, normalize_yaw(yaw), length, width);
        }
    }
    best
}

/// Wrap an angle into (-π/2, π/2]; a rectangle heading is only defined
/// modulo π.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut y = yaw % std::f64::consts::PI;
    if y > std::f64::consts::FRAC_PI_2 {
        y -= std::f64::consts::PI;
    } else if y <= -std::f64::consts::FRAC_PI_2 {
        y += std::f64::consts::PI;
    }
    y
}

/// Fit a yaw-oriented box around a non-empty voxel set: exact minimum-area
/// rectangle of the unit-square footprint in the (i, j) plane, axis-aligned
/// extent in k, every output scaled by `resolution`.
pub fn fit_box(voxels: &[[usize; 3]], resolution: f64) -> OrientedBox {
    assert!(!voxels.is_empty(), "fit_box on empty voxel set");

    // footprint corners, deduplicated (shared corners are common)
    let mut corners: std::collections::HashSet<(usize, usize)> = std::collections::HashSet::new();
    let mut k_min = usize::MAX;
    let mut k_max = 0usize;
    for v in voxels {
        for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            corners.insert((v[0] + di, v[1] + dj));
        }
        k_min = k_min.min(v[2]);
        k_max = k_max.max(v[2]);
    }
    let pts: Vec<[f64; 2]> = corners
        .into_iter()
        .map(|(i, j)| [i as f64, j as f64])
        .collect();

    let (center, yaw, mut length, mut width) = min_area_rect(&pts);
    if width <= 0.0 {
        // cannot happen for unit squares, but keep the degenerate rule:
        // axis-aligned box over the index extent
        let (mut i_lo, mut i_hi, mut j_lo, mut j_hi) = (usize::MAX, 0, usize::MAX, 0);
        for v in voxels {
            i_lo = i_lo.min(v[0]);
            i_hi = i_hi.max(v[0]);
            j_lo = j_lo.min(v[1]);
            j_hi = j_hi.max(v[1]);
        }
        let l = (i_hi - i_lo + 1) as f64;
        let w = (j_hi - j_lo + 1) as f64;
        let center = [
            (i_lo + i_hi + 1) as f64 / 2.0,
            (j_lo + j_hi + 1) as f64 / 2.0,
        ];
        let (l, w, yaw) = if l >= w {
            (l, w, 0.0)
        } else {
            (w, l, std::f64::consts::FRAC_PI_2)
        };
        return OrientedBox {
            center: Vector3::new(
                center[0] * resolution,
                center[1] * resolution,
                (k_min + k_max + 1) as f64 * resolution / 2.0,
            ),
            yaw,
            length: l * resolution,
            width: w * resolution,
            height: (k_max - k_min + 1) as f64 * resolution,
        };
    }
    length *= resolution;
    width *= resolution;
    OrientedBox {
        center: Vector3::new(
            center[0] * resolution,
            center[1] * resolution,
            (k_min + k_max + 1) as f64 * resolution / 2.0,
        ),
        yaw,
        length,
        width,
        height: (k_max - k_min + 1) as f64 * resolution,
    }
}

/// Convenience carrying the category along with a fitted box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategorizedBox {
    pub category: ClassId,
    pub bbox: OrientedBox,
}
