//! Per-frame object annotations used for flow attribution.

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::taxonomy::ClassId;

/// One annotated agent in one frame. `agent_to_ego` places the agent's box
/// (length along agent +x, centered at the agent origin) in the ego frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectAnnotation {
    pub agent_id: u64,
    pub category: ClassId,
    /// (length, width, height) in meters.
    pub size: [f64; 3],
    pub agent_to_ego: Pose,
}

impl ObjectAnnotation {
    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvariantViolation {
                tag: "ANNO".into(),
                reason: format!("non-positive size {:?}", self.size),
            });
        }
        self.agent_to_ego.validate()?;
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    /// True when `p_ego` lies inside the box inflated by `margin` on every
    /// side.
    pub fn contains_ego_point(&self, p_ego: &nalgebra::Vector3<f64>, margin: f64) -> bool {
        let local = self.agent_to_ego.inverse().transform_point(p_ego);
        local.x.abs() <= self.size[0] / 2.0 + margin
            && local.y.abs() <= self.size[1] / 2.0 + margin
            && local.z.abs() <= self.size[2] / 2.0 + margin
    }
}
