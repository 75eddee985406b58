//! Per-voxel rigid scene flow between consecutive frames.
//!
//! A flow vector at voxel x of frame t points from the voxel center
//! (expressed in the ego frame at t) to the same physical point one frame
//! later (expressed in the ego frame at t+1). Static structure moves only
//! because the ego moves; each dynamic voxel follows the rigid motion of the
//! annotated agent whose box claims it.

use nalgebra::Vector3;

use crate::annotation::ObjectAnnotation;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, SemanticGrid};
use crate::pose::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    Forward,
    Backward,
}

/// Dense displacement field over a voxel grid. Vectors are meters; invalid
/// voxels hold zero vectors and a false validity bit.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub spec: GridSpec,
    pub direction: FlowDirection,
    data: Vec<[f64; 3]>,
    validity: Vec<bool>,
}

impl FlowField {
    pub fn empty(spec: GridSpec, direction: FlowDirection) -> Self {
        let n = spec.voxel_count();
        FlowField {
            spec,
            direction,
            data: vec![[0.0; 3]; n],
            validity: vec![false; n],
        }
    }

    pub fn from_parts(
        spec: GridSpec,
        direction: FlowDirection,
        data: Vec<[f64; 3]>,
        validity: Vec<bool>,
    ) -> Result<Self> {
        let n = spec.voxel_count();
        if data.len() != n || validity.len() != n {
            return Err(Error::SpecMismatch(format!(
                "flow arrays ({}, {}) do not match {n} voxels",
                data.len(),
                validity.len()
            )));
        }
        for (v, ok) in data.iter().zip(&validity) {
            if v.iter().any(|c| !c.is_finite()) {
                return Err(Error::SpecMismatch("non-finite flow vector".into()));
            }
            if !ok && v.iter().any(|c| *c != 0.0) {
                return Err(Error::SpecMismatch(
                    "invalid voxel carries a nonzero vector".into(),
                ));
            }
        }
        Ok(FlowField {
            spec,
            direction,
            data,
            validity,
        })
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 3], v: Vector3<f64>) {
        let lin = self.spec.linear(idx);
        self.data[lin] = [v.x, v.y, v.z];
        self.validity[lin] = true;
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> Option<Vector3<f64>> {
        let lin = self.spec.linear(idx);
        if self.validity[lin] {
            let [x, y, z] = self.data[lin];
            Some(Vector3::new(x, y, z))
        } else {
            None
        }
    }

    #[inline]
    pub fn is_valid(&self, idx: [usize; 3]) -> bool {
        self.validity[self.spec.linear(idx)]
    }

    pub fn valid_count(&self) -> usize {
        self.validity.iter().filter(|v| **v).count()
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.validity
    }
}

/// Two consecutive frames with everything flow generation needs. The
/// constructor enforces a shared grid layout, valid ego poses (world frame),
/// and valid annotations.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub grid_t: SemanticGrid,
    pub grid_t1: SemanticGrid,
    pub ego_t: Pose,
    pub ego_t1: Pose,
    pub annotations_t: Vec<ObjectAnnotation>,
    pub annotations_t1: Vec<ObjectAnnotation>,
}

impl FramePair {
    pub fn new(
        grid_t: SemanticGrid,
        grid_t1: SemanticGrid,
        ego_t: Pose,
        ego_t1: Pose,
        annotations_t: Vec<ObjectAnnotation>,
        annotations_t1: Vec<ObjectAnnotation>,
    ) -> Result<Self> {
        if !grid_t.same_layout(&grid_t1) {
            return Err(Error::SpecMismatch(
                "frame pair grids differ in spec or taxonomy".into(),
            ));
        }
        ego_t.validate()?;
        ego_t1.validate()?;
        for a in annotations_t.iter().chain(&annotations_t1) {
            a.validate()?;
        }
        Ok(FramePair {
            grid_t,
            grid_t1,
            ego_t,
            ego_t1,
            annotations_t,
            annotations_t1,
        })
    }
}

/// Flow plus the number of dynamic voxels no annotation claimed.
#[derive(Debug, Clone)]
pub struct FlowOutcome {
    pub field: FlowField,
    pub unattributed: usize,
}

/// Displacement of static structure between the two ego frames: valid on
/// every occupied non-dynamic voxel of the source grid.
pub fn static_flow(pair: &FramePair) -> FlowField {
    directional_static(pair, FlowDirection::Forward)
}

/// Displacement of dynamic voxels from per-agent rigid motion. Voxels of a
/// dynamic class that no (same-category) box claims, and voxels of agents
/// absent from the other frame, stay invalid and are counted.
pub fn dynamic_flow(pair: &FramePair) -> FlowOutcome {
    directional_dynamic(pair, FlowDirection::Forward)
}

/// Static + dynamic in one field. Dynamic assignments take precedence,
/// which only matters if a box overlaps static-class voxels.
pub fn forward_flow(pair: &FramePair) -> Result<FlowOutcome> {
    let stat = static_flow(pair);
    let dynamic = dynamic_flow(pair);
    let field = merge_flows(&stat, &dynamic.field)?;
    Ok(FlowOutcome {
        field,
        unattributed: dynamic.unattributed,
    })
}

/// Flow anchored at frame t+1 voxels, pointing back into the ego frame at t.
pub fn backward_flow(pair: &FramePair) -> Result<FlowOutcome> {
    let stat = directional_static(pair, FlowDirection::Backward);
    let dynamic = directional_dynamic(pair, FlowDirection::Backward);
    let field = merge_flows(&stat, &dynamic.field)?;
    Ok(FlowOutcome {
        field,
        unattributed: dynamic.unattributed,
    })
}

/// Combine a static and a dynamic field over the same grid and direction.
/// Where both are valid the dynamic vector wins; validity is the union.
pub fn merge_flows(static_field: &FlowField, dynamic_field: &FlowField) -> Result<FlowField> {
    if static_field.spec != dynamic_field.spec {
        return Err(Error::SpecMismatch("merge over different grids".into()));
    }
    if static_field.direction != dynamic_field.direction {
        return Err(Error::SpecMismatch("merge over different directions".into()));
    }
    let mut out = static_field.clone();
    for lin in 0..out.data.len() {
        if dynamic_field.validity[lin] {
            out.data[lin] = dynamic_field.data[lin];
            out.validity[lin] = true;
        }
    }
    Ok(out)
}

/// Re-express a field's displacement vectors in an agent's frame by rotating
/// them with the transpose of the agent rotation. Grid topology is kept; the
/// voxel centers themselves stay anchored to the source ego frame.
pub fn to_agent_centric(field: &FlowField, agent: &ObjectAnnotation) -> Result<FlowField> {
    agent.agent_to_ego.validate()?;
    let rt = agent.agent_to_ego.rotation.transpose();
    let mut out = field.clone();
    for (lin, ok) in out.validity.iter().enumerate() {
        if *ok {
            let [x, y, z] = out.data[lin];
            let r = rt * Vector3::new(x, y, z);
            out.data[lin] = [r.x, r.y, r.z];
        }
    }
    Ok(out)
}

/// Displacement of a point under a rigid motion. Pure translations take a
/// short path so their flow is the translation itself, bitwise constant
/// across voxels instead of picking up per-voxel rounding from (x + t) - x.
#[inline]
fn rigid_displacement(motion: &Pose, x: &Vector3<f64>) -> Vector3<f64> {
    if motion.rotation == nalgebra::Matrix3::identity() {
        motion.translation
    } else {
        motion.transform_point(x) - x
    }
}

fn directional_static(pair: &FramePair, direction: FlowDirection) -> FlowField {
    let (src, motion) = match direction {
        // same world point, re-expressed in the other ego frame:
        // x' = (T_dst)^-1 ∘ T_src · x
        FlowDirection::Forward => (&pair.grid_t, pair.ego_t1.inverse().compose(&pair.ego_t)),
        FlowDirection::Backward => (&pair.grid_t1, pair.ego_t.inverse().compose(&pair.ego_t1)),
    };
    let spec = src.spec;
    let mut field = FlowField::empty(spec, direction);
    let tax = &src.taxonomy;
    let free = tax.free_id;
    for lin in 0..spec.voxel_count() {
        let id = src.data()[lin];
        if id == free || tax.is_dynamic(id) {
            continue;
        }
        let idx = spec.from_linear(lin);
        let x = spec.voxel_to_ego(idx);
        field.set(idx, rigid_displacement(&motion, &x));
    }
    field
}

fn directional_dynamic(pair: &FramePair, direction: FlowDirection) -> FlowOutcome {
    let (src, anns_src, anns_dst) = match direction {
        FlowDirection::Forward => (&pair.grid_t, &pair.annotations_t, &pair.annotations_t1),
        FlowDirection::Backward => (&pair.grid_t1, &pair.annotations_t1, &pair.annotations_t),
    };
    let spec = src.spec;
    let margin = spec.resolution / 2.0;
    let mut field = FlowField::empty(spec, direction);
    let mut unattributed = 0usize;

    // per-agent motion: x' = T_dst ∘ T_src^-1 · x, defined when the agent is
    // annotated in both frames
    let motions: Vec<Option<Pose>> = anns_src
        .iter()
        .map(|a| {
            anns_dst
                .iter()
                .find(|b| b.agent_id == a.agent_id)
                .map(|b| b.agent_to_ego.compose(&a.agent_to_ego.inverse()))
        })
        .collect();

    let tax = &src.taxonomy;
    for lin in 0..spec.voxel_count() {
        let id = src.data()[lin];
        if !tax.is_dynamic(id) {
            continue;
        }
        let idx = spec.from_linear(lin);
        let x = spec.voxel_to_ego(idx);
        // owner: smallest same-category box (inflated half a voxel per side)
        // containing the center
        let mut owner: Option<usize> = None;
        for (ai, ann) in anns_src.iter().enumerate() {
            if ann.category != id || !ann.contains_ego_point(&x, margin) {
                continue;
            }
            owner = match owner {
                Some(prev) if anns_src[prev].volume() <= ann.volume() => Some(prev),
                _ => Some(ai),
            };
        }
        match owner.and_then(|ai| motions[ai].as_ref()) {
            Some(motion) => field.set(idx, rigid_displacement(motion, &x)),
            // unclaimed voxel, or agent missing from the other frame
            None => unattributed += 1,
        }
    }
    FlowOutcome { field, unattributed }
}
