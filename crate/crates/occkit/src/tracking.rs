//! Flow-propagated multi-object tracking across frames.
//!
//! Each instance's voxels are pushed through the frame's flow field; the
//! mean of the propagated positions predicts where the instance should sit
//! in the next frame. Predictions and next-frame observations are matched
//! per category with a gated minimum-cost assignment.

use std::collections::BTreeSet;

use nalgebra::Vector3;

use crate::assignment::{self, AssignmentResult};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::grid::GridSpec;
use crate::objects::ObjectInstance;
use crate::taxonomy::ClassId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Association gate in meters.
    pub max_dist: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig { max_dist: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub timestamp: u64,
    pub object_id: u32,
    /// Observed instance centroid in voxel units (mean voxel index).
    pub centroid: Vector3<f64>,
}

/// One object identity over time. Timestamps increase strictly and the
/// category never changes.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub category: ClassId,
    pub frames: Vec<TrackPoint>,
}

#[derive(Debug, Clone)]
pub struct Propagated {
    /// Ego-frame positions (meters) after adding flow, one per voxel with
    /// valid flow.
    pub positions: Vec<Vector3<f64>>,
    /// Voxels dropped for missing flow validity.
    pub skipped: usize,
}

/// Push voxel centers through the flow field. Voxels without valid flow are
/// skipped and counted; an instance with no valid flow at all is an error.
pub fn propagate(voxels: &[[usize; 3]], flow: &FlowField) -> Result<Propagated> {
    let mut positions = Vec::with_capacity(voxels.len());
    let mut skipped = 0usize;
    for v in voxels {
        match flow.get(*v) {
            Some(f) => positions.push(flow.spec.voxel_to_ego(*v) + f),
            None => skipped += 1,
        }
    }
    if positions.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }
    Ok(Propagated { positions, skipped })
}

/// Arithmetic mean of a non-empty point set.
pub fn centroid(positions: &[Vector3<f64>]) -> Result<Vector3<f64>> {
    if positions.is_empty() {
        return Err(Error::EmptyInput("centroid of empty point set"));
    }
    let mut sum = Vector3::zeros();
    for p in positions {
        sum += p;
    }
    Ok(sum / positions.len() as f64)
}

/// Gated minimum-cost matching between predicted and observed centroids
/// (meters). Pairs farther apart than `max_dist` never match.
pub fn associate(
    predicted: &[Vector3<f64>],
    observed: &[Vector3<f64>],
    max_dist: f64,
) -> AssignmentResult {
    if predicted.is_empty() {
        // an empty cost matrix would lose the observation count
        return AssignmentResult {
            n_rows: 0,
            n_cols: observed.len(),
            matches: vec![],
            unmatched_rows: vec![],
            unmatched_cols: (0..observed.len()).collect(),
        };
    }
    let cost: Vec<Vec<f64>> = predicted
        .iter()
        .map(|p| observed.iter().map(|o| (p - o).norm()).collect())
        .collect();
    assignment::solve(&cost, max_dist)
}

/// Instances of one frame plus the flow that leads out of it (toward the
/// next frame). `flow: None` predicts with zero displacement.
pub struct TrackFrame<'a> {
    pub timestamp: u64,
    pub instances: &'a [ObjectInstance],
    pub flow: Option<&'a FlowField>,
}

/// Link instances across a frame sequence into tracks. New identities start
/// whenever an observation has no gated prediction; predictions that go
/// unmatched terminate their track at the previous frame.
pub fn track_sequence(
    frames: &[TrackFrame],
    spec: &GridSpec,
    config: &TrackerConfig,
) -> Vec<Track> {
    let mut tracks: Vec<Track> = Vec::new();
    // track index carried by each instance of the current frame
    let mut carried: Vec<Option<usize>> = Vec::new();

    for (f, frame) in frames.iter().enumerate() {
        if f == 0 {
            for inst in frame.instances {
                carried.push(Some(open_track(&mut tracks, inst, frame.timestamp)));
            }
            continue;
        }
        let prev = &frames[f - 1];
        let mut next_carried: Vec<Option<usize>> = vec![None; frame.instances.len()];

        let categories: BTreeSet<ClassId> = prev
            .instances
            .iter()
            .map(|i| i.category)
            .chain(frame.instances.iter().map(|i| i.category))
            .collect();

        for cat in categories {
            // predictions from the previous frame's tracked instances
            let mut pred_tracks: Vec<usize> = Vec::new();
            let mut preds: Vec<Vector3<f64>> = Vec::new();
            for (pi, inst) in prev.instances.iter().enumerate() {
                if inst.category != cat {
                    continue;
                }
                let Some(track_idx) = carried[pi] else {
                    continue;
                };
                let predicted = match prev.flow {
                    Some(flow) => match propagate(&inst.voxels, flow) {
                        Ok(p) => centroid(&p.positions).expect("propagate output non-empty"),
                        // no usable flow on this instance: its track simply
                        // does not extend
                        Err(_) => continue,
                    },
                    None => inst.centroid_ego(spec),
                };
                pred_tracks.push(track_idx);
                preds.push(predicted);
            }

            let mut obs_insts: Vec<usize> = Vec::new();
            let mut obs: Vec<Vector3<f64>> = Vec::new();
            for (oi, inst) in frame.instances.iter().enumerate() {
                if inst.category == cat {
                    obs_insts.push(oi);
                    obs.push(inst.centroid_ego(spec));
                }
            }

            let result = associate(&preds, &obs, config.max_dist);
            for m in &result.matches {
                let track_idx = pred_tracks[m.row];
                let oi = obs_insts[m.col];
                let inst = &frame.instances[oi];
                tracks[track_idx].frames.push(TrackPoint {
                    timestamp: frame.timestamp,
                    object_id: inst.object_id,
                    centroid: inst.centroid_voxels(),
                });
                next_carried[oi] = Some(track_idx);
            }
            for um in &result.unmatched_cols {
                let oi = obs_insts[*um];
                next_carried[oi] =
                    Some(open_track(&mut tracks, &frame.instances[oi], frame.timestamp));
            }
        }
        carried = next_carried;
    }
    tracks
}

fn open_track(tracks: &mut Vec<Track>, inst: &ObjectInstance, timestamp: u64) -> usize {
    tracks.push(Track {
        track_id: tracks.len() as u64 + 1,
        category: inst.category,
        frames: vec![TrackPoint {
            timestamp,
            object_id: inst.object_id,
            centroid: inst.centroid_voxels(),
        }],
    });
    tracks.len() - 1
}
