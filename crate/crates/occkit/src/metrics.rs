//! Evaluation metrics: geometric and per-class IoU against a reference grid,
//! plus the reference-free temporal scores (background persistence, shape
//! stability of aligned objects, box dimension plausibility).

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use nalgebra::Vector3;

use crate::align::AlignedShape;
use crate::error::{Error, Result};
use crate::grid::SemanticGrid;
use crate::pose::Pose;
use crate::taxonomy::{ClassId, LabelTaxonomy};

/// Occupied-vs-free agreement. Two grids agreeing that everything is free
/// score 1.
pub fn iou_geo(pred: &SemanticGrid, gt: &SemanticGrid) -> Result<f64> {
    if !pred.same_layout(gt) {
        return Err(Error::SpecMismatch(
            "iou_geo needs identical grid spec and taxonomy".into(),
        ));
    }
    let free = pred.taxonomy.free_id;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (a, b) in pred.data().iter().zip(gt.data()) {
        let oa = *a != free;
        let ob = *b != free;
        inter += (oa && ob) as usize;
        union += (oa || ob) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Debug, Clone)]
pub struct ClassIou {
    pub per_class: BTreeMap<ClassId, f64>,
    pub mean: f64,
}

/// Mean per-class IoU over `classes`, skipping classes absent from both
/// grids.
pub fn miou_geo(
    pred: &SemanticGrid,
    gt: &SemanticGrid,
    classes: &BTreeSet<ClassId>,
) -> Result<ClassIou> {
    if !pred.same_layout(gt) {
        return Err(Error::SpecMismatch(
            "miou_geo needs identical grid spec and taxonomy".into(),
        ));
    }
    let mut per_class = BTreeMap::new();
    for &c in classes {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in pred.data().iter().zip(gt.data()) {
            let pa = *a == c;
            let pb = *b == c;
            inter += (pa && pb) as usize;
            union += (pa || pb) as usize;
        }
        if union > 0 {
            per_class.insert(c, inter as f64 / union as f64);
        }
    }
    if per_class.is_empty() {
        return Err(Error::NoEvaluableClass);
    }
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(ClassIou { per_class, mean })
}

/// Classes treated as persistent background: everything except free space
/// and the movable categories.
pub fn background_classes(taxonomy: &LabelTaxonomy) -> BTreeSet<ClassId> {
    taxonomy
        .classes
        .keys()
        .copied()
        .filter(|c| *c != taxonomy.free_id && !taxonomy.is_dynamic(*c))
        .collect()
}

/// Persistence of static occupancy from one frame to the next.
///
/// Static voxels of frame t are carried into frame t+1's ego frame through
/// the world and floored to voxel indices; out-of-range projections are
/// dropped. Frame t+1's static voxels outside the region that maps back
/// into frame t's range are excluded, so only the shared field of view is
/// scored.
pub fn background_consistency(
    grid_t: &SemanticGrid,
    grid_t1: &SemanticGrid,
    ego_t: &Pose,
    ego_t1: &Pose,
    static_classes: &BTreeSet<ClassId>,
) -> Result<f64> {
    if !grid_t.same_layout(grid_t1) {
        return Err(Error::SpecMismatch(
            "background_consistency needs identical grid spec and taxonomy".into(),
        ));
    }
    ego_t.validate()?;
    ego_t1.validate()?;
    let spec = &grid_t.spec;
    let rel = ego_t1.inverse().compose(ego_t);
    let rel_inv = rel.inverse();
    let [l, w, h] = spec.dims;

    let mut projected: BTreeSet<usize> = BTreeSet::new();
    for i in 0..l {
        for j in 0..w {
            for k in 0..h {
                if !static_classes.contains(&grid_t.get([i, j, k])) {
                    continue;
                }
                let q = rel.transform_point(&spec.voxel_to_ego([i, j, k]));
                if let Some(idx) = spec.ego_to_voxel(&q) {
                    projected.insert(spec.linear(idx));
                }
            }
        }
    }

    let mut inter = 0usize;
    let mut union = projected.len();
    for i in 0..l {
        for j in 0..w {
            for k in 0..h {
                if !static_classes.contains(&grid_t1.get([i, j, k])) {
                    continue;
                }
                let back = rel_inv.transform_point(&spec.voxel_to_ego([i, j, k]));
                if spec.ego_to_voxel(&back).is_none() {
                    continue; // outside the shared field of view
                }
                let lin = spec.linear([i, j, k]);
                if projected.contains(&lin) {
                    inter += 1;
                } else {
                    union += 1;
                }
            }
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Re-rasterize a point set by trilinear mass splatting: every point
/// deposits one voxel's worth of mass onto the 8 cells around it, and a
/// cell counts as occupied once it holds at least half a voxel.
///
/// Each point of a voxel-derived set represents an equal chunk of solid, so
/// thresholding accumulated mass approximates "the cell is majority
/// covered". This stays stable under the sub-cell jitter left over from
/// voxelizing a rotated shape, while a point sitting exactly on a cell
/// center still yields exactly its own cell.
pub fn rasterize_aligned(points: &[Vector3<f64>], resolution: f64) -> BTreeSet<[i64; 3]> {
    let mut mass: BTreeMap<[i64; 3], f64> = BTreeMap::new();
    for p in points {
        let s = [
            p.x / resolution - 0.5,
            p.y / resolution - 0.5,
            p.z / resolution - 0.5,
        ];
        let base = [s[0].floor(), s[1].floor(), s[2].floor()];
        let f = [s[0] - base[0], s[1] - base[1], s[2] - base[2]];
        for dx in 0..2i64 {
            for dy in 0..2i64 {
                for dz in 0..2i64 {
                    let w = (if dx == 0 { 1.0 - f[0] } else { f[0] })
                        * (if dy == 0 { 1.0 - f[1] } else { f[1] })
                        * (if dz == 0 { 1.0 - f[2] } else { f[2] });
                    if w > 0.0 {
                        let cell = [
                            base[0] as i64 + dx,
                            base[1] as i64 + dy,
                            base[2] as i64 + dz,
                        ];
                        *mass.entry(cell).or_insert(0.0) += w;
                    }
                }
            }
        }
    }
    mass.into_iter()
        .filter(|(_, w)| *w >= 0.5 - 1e-12)
        .map(|(c, _)| c)
        .collect()
}

#[derive(Debug, Clone)]
pub struct ShapeConsistency {
    /// IoU per consecutive frame pair; None where a degenerate alignment
    /// made the comparison meaningless.
    pub per_pair: Vec<Option<f64>>,
    /// Mean over the comparable pairs, None if every pair was skipped.
    pub mean: Option<f64>,
    pub skipped: usize,
}

/// Overlap of consecutive canonically-aligned shapes after rasterization.
pub fn shape_consistency(
    aligned: &[AlignedShape],
    resolution: f64,
) -> Result<ShapeConsistency> {
    if aligned.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "shape consistency needs at least 2 frames, got {}",
            aligned.len()
        )));
    }
    let rasters: Vec<BTreeSet<[i64; 3]>> = aligned
        .iter()
        .map(|s| rasterize_aligned(&s.points, resolution))
        .collect();
    let mut per_pair = Vec::with_capacity(aligned.len() - 1);
    let mut skipped = 0usize;
    for t in 0..aligned.len() - 1 {
        if aligned[t].degenerate || aligned[t + 1].degenerate {
            per_pair.push(None);
            skipped += 1;
            continue;
        }
        let inter = rasters[t].intersection(&rasters[t + 1]).count();
        let union = rasters[t].union(&rasters[t + 1]).count();
        per_pair.push(Some(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }));
    }
    let valid: Vec<f64> = per_pair.iter().flatten().copied().collect();
    let mean = if valid.is_empty() {
        None
    } else {
        Some(valid.iter().sum::<f64>() / valid.len() as f64)
    };
    Ok(ShapeConsistency {
        per_pair,
        mean,
        skipped,
    })
}

/// Everything the evaluator can produce for one scenario. Absent entries
/// mean the metric was not requested or had no evaluable input.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub iou_geo: Option<f64>,
    pub miou_geo: Option<f64>,
    pub per_class_iou: BTreeMap<ClassId, f64>,
    pub iou_bg: Option<f64>,
    pub iou_object: BTreeMap<ClassId, f64>,
    pub dim_mean: BTreeMap<ClassId, f64>,
    pub dim_pass_rate: BTreeMap<ClassId, f64>,
}

impl MetricReport {
    /// One `key value` line per metric, class-keyed metrics one line per
    /// class name.
    pub fn render(&self, taxonomy: &LabelTaxonomy) -> String {
        let mut out = String::new();
        let name = |c: ClassId| {
            taxonomy
                .class_name(c)
                .map(str::to_owned)
                .unwrap_or_else(|| format!("class_{c}"))
        };
        if let Some(v) = self.iou_geo {
            out.push_str(&format!("iou_geo {v:.6}\n"));
        }
        if let Some(v) = self.miou_geo {
            out.push_str(&format!("miou_geo {v:.6}\n"));
        }
        for (c, v) in &self.per_class_iou {
            out.push_str(&format!("iou_class {} {v:.6}\n", name(*c)));
        }
        if let Some(v) = self.iou_bg {
            out.push_str(&format!("iou_bg {v:.6}\n"));
        }
        for (c, v) in &self.iou_object {
            out.push_str(&format!("iou_object {} {v:.6}\n", name(*c)));
        }
        for (c, v) in &self.dim_mean {
            out.push_str(&format!("dim_mean {} {v:.6}\n", name(*c)));
        }
        for (c, v) in &self.dim_pass_rate {
            out.push_str(&format!("dim_pass {} {v:.6}\n", name(*c)));
        }
        out
    }
}
