//! Ego-centered semantic voxel grids.
//!
//! Grid axes follow the ego convention: +x heading, +y left, +z up. Voxel
//! (i, j, k) spans `origin + (i, j, k)·ε .. origin + (i+1, j+1, k+1)·ε` and its
//! center sits half a cell in.

use std::sync::Arc;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::taxonomy::{ClassId, LabelMap, LabelTaxonomy};

/// Geometry of a voxel volume: counts per axis, edge length in meters, and
/// the ego-frame position of the (0,0,0) corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub resolution: f64,
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], resolution: f64, origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|d| *d == 0) {
            return Err(Error::SpecMismatch("zero-sized grid axis".into()));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::SpecMismatch(format!("bad resolution {resolution}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::SpecMismatch("non-finite origin".into()));
        }
        Ok(GridSpec {
            dims,
            resolution,
            origin,
        })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn linear(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    #[inline]
    pub fn from_linear(&self, lin: usize) -> [usize; 3] {
        let k = lin % self.dims[2];
        let rest = lin / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], k]
    }

    /// Center of voxel `idx` in the ego frame.
    pub fn voxel_to_ego(&self, idx: [usize; 3]) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + (idx[0] as f64 + 0.5) * self.resolution,
            self.origin[1] + (idx[1] as f64 + 0.5) * self.resolution,
            self.origin[2] + (idx[2] as f64 + 0.5) * self.resolution,
        )
    }

    /// Voxel containing an ego-frame point, or None when outside the volume.
    pub fn ego_to_voxel(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let c = ((p[a] - self.origin[a]) / self.resolution).floor();
            if c < 0.0 || c >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = c as usize;
        }
        Some(idx)
    }

    pub fn contains_index(&self, idx: [usize; 3]) -> bool {
        idx[0] < self.dims[0] && idx[1] < self.dims[1] && idx[2] < self.dims[2]
    }
}

impl Default for GridSpec {
    /// 80 m × 80 m × 6.4 m volume at 0.4 m: x,y ∈ [-40, 40), z ∈ [-1, 5.4).
    fn default() -> Self {
        GridSpec {
            dims: [200, 200, 16],
            resolution: 0.4,
            origin: [-40.0, -40.0, -1.0],
        }
    }
}

/// Which frame the voxel contents are expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameRef {
    Ego,
    World,
}

/// Dense class-id volume. Every stored id belongs to `taxonomy`; `set`
/// enforces this so decoded and constructed grids share the invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    pub spec: GridSpec,
    pub taxonomy: Arc<LabelTaxonomy>,
    pub timestamp: u64,
    pub frame: FrameRef,
    data: Vec<ClassId>,
}

impl SemanticGrid {
    pub fn new_free(spec: GridSpec, taxonomy: Arc<LabelTaxonomy>, timestamp: u64) -> Self {
        let data = vec![taxonomy.free_id; spec.voxel_count()];
        SemanticGrid {
            spec,
            taxonomy,
            timestamp,
            frame: FrameRef::Ego,
            data,
        }
    }

    pub fn from_data(
        spec: GridSpec,
        taxonomy: Arc<LabelTaxonomy>,
        timestamp: u64,
        frame: FrameRef,
        data: Vec<ClassId>,
    ) -> Result<Self> {
        if data.len() != spec.voxel_count() {
            return Err(Error::SpecMismatch(format!(
                "grid data has {} voxels, spec wants {}",
                data.len(),
                spec.voxel_count()
            )));
        }
        if let Some(bad) = data.iter().find(|id| !taxonomy.contains(**id)) {
            return Err(Error::UnknownLabel {
                taxonomy: taxonomy.name.clone(),
                id: *bad,
            });
        }
        Ok(SemanticGrid {
            spec,
            taxonomy,
            timestamp,
            frame,
            data,
        })
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> ClassId {
        self.data[self.spec.linear(idx)]
    }

    pub fn set(&mut self, idx: [usize; 3], id: ClassId) -> Result<()> {
        if !self.taxonomy.contains(id) {
            return Err(Error::UnknownLabel {
                taxonomy: self.taxonomy.name.clone(),
                id,
            });
        }
        let lin = self.spec.linear(idx);
        self.data[lin] = id;
        Ok(())
    }

    #[inline]
    pub fn is_occupied(&self, idx: [usize; 3]) -> bool {
        self.get(idx) != self.taxonomy.free_id
    }

    pub fn data(&self) -> &[ClassId] {
        &self.data
    }

    pub fn occupied_count(&self) -> usize {
        let free = self.taxonomy.free_id;
        self.data.iter().filter(|id| **id != free).count()
    }

    /// Indices of all occupied voxels in lexicographic (i, j, k) order.
    pub fn occupied_indices(&self) -> Vec<[usize; 3]> {
        let free = self.taxonomy.free_id;
        let mut out = Vec::new();
        for (lin, id) in self.data.iter().enumerate() {
            if *id != free {
                out.push(self.spec.from_linear(lin));
            }
        }
        out
    }

    pub fn same_layout(&self, other: &SemanticGrid) -> bool {
        self.spec == other.spec && self.taxonomy.name == other.taxonomy.name
    }
}

/// Per-voxel camera visibility; true where at least one camera sees the voxel
/// center.
#[derive(Debug, Clone, PartialEq)]
pub struct FovMask {
    pub spec: GridSpec,
    pub data: Vec<bool>,
}

impl FovMask {
    pub fn all_hidden(spec: GridSpec) -> Self {
        let data = vec![false; spec.voxel_count()];
        FovMask { spec, data }
    }

    pub fn visible_count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }
}

/// Rewrite every voxel id through `map`, producing a grid in the target
/// taxonomy. Occupancy is preserved because free maps to free and nothing
/// else does.
pub fn remap_labels(
    grid: &SemanticGrid,
    target: &Arc<LabelTaxonomy>,
    map: &LabelMap,
) -> Result<SemanticGrid> {
    if map.source != grid.taxonomy.name || map.target != target.name {
        return Err(Error::SpecMismatch(format!(
            "map {} -> {} applied to grid `{}` targeting `{}`",
            map.source, map.target, grid.taxonomy.name, target.name
        )));
    }
    let mut data = Vec::with_capacity(grid.data.len());
    for id in &grid.data {
        let to = map.get(*id).ok_or(Error::UnknownLabel {
            taxonomy: grid.taxonomy.name.clone(),
            id: *id,
        })?;
        data.push(to);
    }
    SemanticGrid::from_data(
        grid.spec,
        Arc::clone(target),
        grid.timestamp,
        grid.frame,
        data,
    )
}

/// Collapse each vertical column to the highest-priority occupied class.
/// Output is row-major L×W; free columns stay free.
pub fn collapse_2d(grid: &SemanticGrid) -> Vec<ClassId> {
    let [l, w, h] = grid.spec.dims;
    let free = grid.taxonomy.free_id;
    let mut ranks = [usize::MAX; 256];
    for (r, id) in grid.taxonomy.priority.iter().enumerate() {
        ranks[*id as usize] = r;
    }
    let mut out = vec![free; l * w];
    for i in 0..l {
        for j in 0..w {
            let base = (i * w + j) * h;
            let mut best = free;
            let mut best_rank = usize::MAX;
            for k in 0..h {
                let id = grid.data[base + k];
                if id != free && ranks[id as usize] < best_rank {
                    best_rank = ranks[id as usize];
                    best = id;
                }
            }
            out[i * w + j] = best;
        }
    }
    out
}
