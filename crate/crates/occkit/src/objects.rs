//! Instance segmentation: 6-connected components within each category.

use std::collections::BTreeSet;
use std::collections::VecDeque;

use crate::boxfit::{fit_box, OrientedBox};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, SemanticGrid};
use crate::taxonomy::ClassId;

/// Dense component-id volume; 0 marks unlabeled voxels, instances count
/// from 1 in discovery order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub spec: GridSpec,
    data: Vec<u32>,
    max_id: u32,
}

impl LabelVolume {
    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> u32 {
        self.data[self.spec.linear(idx)]
    }

    pub fn max_id(&self) -> u32 {
        self.max_id
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }
}

/// One connected instance. `voxels` are sorted lexicographically; `bbox` is
/// filled by `fit_boxes` or by the segment-and-fit convenience.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub object_id: u32,
    pub category: ClassId,
    pub voxels: Vec<[usize; 3]>,
    pub bbox: Option<OrientedBox>,
}

impl ObjectInstance {
    /// Arithmetic mean of the voxel indices, in voxel units.
    pub fn centroid_voxels(&self) -> nalgebra::Vector3<f64> {
        let n = self.voxels.len() as f64;
        let mut sum = nalgebra::Vector3::zeros();
        for v in &self.voxels {
            sum += nalgebra::Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64);
        }
        sum / n
    }

    /// Mean of the voxel centers in the ego frame, in meters.
    pub fn centroid_ego(&self, spec: &GridSpec) -> nalgebra::Vector3<f64> {
        let n = self.voxels.len() as f64;
        let mut sum = nalgebra::Vector3::zeros();
        for v in &self.voxels {
            sum += spec.voxel_to_ego(*v);
        }
        sum / n
    }
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub labels: LabelVolume,
    pub instances: Vec<ObjectInstance>,
}

/// Label 6-connected components among voxels of the requested categories.
/// Adjacent voxels of different categories never join. Component ids are
/// assigned in lexicographic order of each component's minimum voxel index,
/// starting at 1. The free class is ignored even if listed.
pub fn segment(grid: &SemanticGrid, categories: &BTreeSet<ClassId>) -> Segmentation {
    let spec = grid.spec;
    let [l, w, h] = spec.dims;
    let mut labels = vec![0u32; spec.voxel_count()];
    let mut instances = Vec::new();
    let mut next_id = 1u32;
    let mut queue = VecDeque::new();

    let wanted = |id: ClassId| id != grid.taxonomy.free_id && categories.contains(&id);

    // lexicographic scan; the first unlabeled voxel reached in scan order is
    // the component's minimum index
    for i in 0..l {
        for j in 0..w {
            for k in 0..h {
                let lin = spec.linear([i, j, k]);
                let cat = grid.data()[lin];
                if labels[lin] != 0 || !wanted(cat) {
                    continue;
                }
                let id = next_id;
                next_id += 1;
                labels[lin] = id;
                queue.push_back([i, j, k]);
                let mut voxels = Vec::new();
                while let Some(cur) = queue.pop_front() {
                    voxels.push(cur);
                    for (axis, step) in [(0usize, -1isize), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)]
                    {
                        let mut nb = cur;
                        let moved = nb[axis] as isize + step;
                        if moved < 0 || moved >= spec.dims[axis] as isize {
                            continue;
                        }
                        nb[axis] = moved as usize;
                        let nlin = spec.linear(nb);
                        if labels[nlin] == 0 && grid.data()[nlin] == cat {
                            labels[nlin] = id;
                            queue.push_back(nb);
                        }
                    }
                }
                voxels.sort_unstable();
                instances.push(ObjectInstance {
                    object_id: id,
                    category: cat,
                    voxels,
                    bbox: None,
                });
            }
        }
    }

    Segmentation {
        labels: LabelVolume {
            spec,
            data: labels,
            max_id: next_id - 1,
        },
        instances,
    }
}

/// Voxels of component `n`, sorted lexicographically.
pub fn extract_voxels(labels: &LabelVolume, n: u32) -> Result<Vec<[usize; 3]>> {
    if n == 0 || n > labels.max_id {
        return Err(Error::UnknownObjectId(n));
    }
    let mut out = Vec::new();
    for (lin, id) in labels.data.iter().enumerate() {
        if *id == n {
            out.push(labels.spec.from_linear(lin));
        }
    }
    Ok(out)
}

/// Fit an oriented box onto every instance in place.
pub fn fit_boxes(seg: &mut Segmentation, resolution: f64) {
    for inst in &mut seg.instances {
        inst.bbox = Some(fit_box(&inst.voxels, resolution));
    }
}
