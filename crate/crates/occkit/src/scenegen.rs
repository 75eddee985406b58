//! Scripted rigid-body scenes: box agents and axis-aligned props rendered
//! to grids, with closed-form flow and identity ground truth.
//!
//! Everything downstream is validated against this module, so its flow math
//! deliberately goes through raw homogeneous 4x4 matrices instead of the
//! Pose type used by the production path.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::Vector3;

use crate::annotation::ObjectAnnotation;
use crate::error::{Error, Result};
use crate::flow::{FlowDirection, FlowField};
use crate::grid::{GridSpec, SemanticGrid};
use crate::pose::Pose;
use crate::taxonomy::{self, ClassId, LabelTaxonomy};
use crate::tracking::{Track, TrackPoint};

/// Axis-aligned world-frame block, half-open on every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticProp {
    pub class: ClassId,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// One scripted box agent. `poses[t]` is the agent-to-world pose, None on
/// frames where the agent is not in the scene.
#[derive(Debug, Clone)]
pub struct ScriptAgent {
    pub agent_id: u64,
    pub category: ClassId,
    /// length, width, height in meters
    pub size: [f64; 3],
    pub poses: Vec<Option<Pose>>,
}

#[derive(Debug, Clone)]
pub struct ScenarioScript {
    pub duration: usize,
    pub seed: u64,
    pub spec: GridSpec,
    pub taxonomy: Arc<LabelTaxonomy>,
    /// Ego-to-world pose per frame.
    pub ego: Vec<Pose>,
    pub agents: Vec<ScriptAgent>,
    pub props: Vec<StaticProp>,
}

enum MotionSpec {
    /// x y z yaw vx vy vz (yaw degrees, velocities meters/frame)
    ConstantVelocity([f64; 7]),
    /// x y z yaw speed yaw_rate (degrees and degrees/frame)
    ConstantTurnRate([f64; 6]),
    /// explicit per-frame poses
    Keyframes(BTreeMap<usize, Pose>),
}

fn expand_motion(spec: &MotionSpec, duration: usize, what: &str) -> Result<Vec<Option<Pose>>> {
    match spec {
        MotionSpec::ConstantVelocity(p) => {
            let [x, y, z, yaw_deg, vx, vy, vz] = *p;
            let yaw = yaw_deg.to_radians();
            Ok((0..duration)
                .map(|t| {
                    let tf = t as f64;
                    Some(Pose::from_yaw_translation(
                        yaw,
                        Vector3::new(x + vx * tf, y + vy * tf, z + vz * tf),
                    ))
                })
                .collect())
        }
        MotionSpec::ConstantTurnRate(p) => {
            let [x, y, z, yaw_deg, speed, rate_deg] = *p;
            let yaw0 = yaw_deg.to_radians();
            let omega = rate_deg.to_radians();
            Ok((0..duration)
                .map(|t| {
                    let tf = t as f64;
                    let yaw = yaw0 + omega * tf;
                    let (px, py) = if omega.abs() < 1e-12 {
                        (x + speed * tf * yaw0.cos(), y + speed * tf * yaw0.sin())
                    } else {
                        (
                            x + speed / omega * (yaw.sin() - yaw0.sin()),
                            y - speed / omega * (yaw.cos() - yaw0.cos()),
                        )
                    };
                    Some(Pose::from_yaw_translation(yaw, Vector3::new(px, py, z)))
                })
                .collect())
        }
        MotionSpec::Keyframes(map) => {
            if let Some(bad) = map.keys().find(|t| **t >= duration) {
                return Err(Error::Parse {
                    line: 0,
                    reason: format!("{what} pose at frame {bad} outside duration"),
                });
            }
            Ok((0..duration).map(|t| map.get(&t).copied()).collect())
        }
    }
}

fn parse_nums<const N: usize>(line: usize, tokens: &[&str]) -> Result<[f64; N]> {
    if tokens.len() != N {
        return Err(Error::Parse {
            line,
            reason: format!("expected {N} numbers, got {}", tokens.len()),
        });
    }
    let mut out = [0.0; N];
    for (i, t) in tokens.iter().enumerate() {
        out[i] = t.parse().map_err(|_| Error::Parse {
            line,
            reason: format!("bad number {t:?}"),
        })?;
    }
    Ok(out)
}

fn parse_class(line: usize, taxonomy: &LabelTaxonomy, token: &str) -> Result<ClassId> {
    if let Ok(id) = token.parse::<ClassId>() {
        if taxonomy.contains(id) {
            return Ok(id);
        }
    } else if let Some(id) = taxonomy.id_of(token) {
        return Ok(id);
    }
    Err(Error::Parse {
        line,
        reason: format!("unknown class {token:?} in taxonomy {}", taxonomy.name),
    })
}

impl ScenarioScript {
    /// Parse the scenario text format. Keys: `duration`, `seed`, `taxonomy`,
    /// `dims`, `resolution`, `origin`, `ego cv|ctr|...` with `egopose`
    /// keyframes, `agent ... cv|ctr|poses` with `agentpose` keyframes, and
    /// `prop`. Yaw values are degrees; distances meters; rates per frame.
    pub fn parse(text: &str) -> Result<Self> {
        let mut duration: Option<usize> = None;
        let mut seed = 0u64;
        let mut taxonomy = taxonomy::unified();
        let mut dims = [200usize, 200, 16];
        let mut resolution = 0.4;
        let mut origin = [-40.0, -40.0, -1.0];
        let mut ego_spec: Option<MotionSpec> = None;
        let mut ego_keys: BTreeMap<usize, Pose> = BTreeMap::new();
        struct RawAgent {
            line: usize,
            agent_id: u64,
            category: ClassId,
            size: [f64; 3],
            motion: MotionSpec,
        }
        let mut agents: Vec<RawAgent> = Vec::new();
        let mut agent_keys: HashMap<u64, BTreeMap<usize, Pose>> = HashMap::new();
        let mut props: Vec<StaticProp> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tok: Vec<&str> = content.split_whitespace().collect();
            let args = &tok[1..];
            let parse_err = |reason: String| Error::Parse { line, reason };
            match tok[0] {
                "duration" => {
                    let [v] = parse_nums::<1>(line, args)?;
                    if v < 1.0 || v.fract() != 0.0 {
                        return Err(parse_err(format!("duration must be a positive integer, got {v}")));
                    }
                    duration = Some(v as usize);
                }
                "seed" => {
                    let [v] = parse_nums::<1>(line, args)?;
                    seed = v as u64;
                }
                "taxonomy" => {
                    let name = args.first().ok_or_else(|| parse_err("missing taxonomy name".into()))?;
                    taxonomy = taxonomy::LabelTaxonomy::builtin(name)
                        .ok_or_else(|| parse_err(format!("unknown taxonomy {name:?}")))?;
                }
                "dims" => {
                    let [a, b, c] = parse_nums::<3>(line, args)?;
                    dims = [a as usize, b as usize, c as usize];
                }
                "resolution" => {
                    let [v] = parse_nums::<1>(line, args)?;
                    resolution = v;
                }
                "origin" => {
                    let [a, b, c] = parse_nums::<3>(line, args)?;
                    origin = [a, b, c];
                }
                "ego" => {
                    let mode = args.first().ok_or_else(|| parse_err("missing ego motion mode".into()))?;
                    ego_spec = Some(match *mode {
                        "cv" => MotionSpec::ConstantVelocity(parse_nums::<7>(line, &args[1..])?),
                        "ctr" => MotionSpec::ConstantTurnRate(parse_nums::<6>(line, &args[1..])?),
                        "poses" => MotionSpec::Keyframes(BTreeMap::new()),
                        other => return Err(parse_err(format!("unknown ego mode {other:?}"))),
                    });
                }
                "egopose" => {
                    let [t, x, y, z, yaw] = parse_nums::<5>(line, args)?;
                    ego_keys.insert(
                        t as usize,
                        Pose::from_yaw_translation(yaw.to_radians(), Vector3::new(x, y, z)),
                    );
                }
                "agent" => {
                    if args.len() < 6 {
                        return Err(parse_err("agent needs id, class, three sizes, and a motion".into()));
                    }
                    let agent_id: u64 = args[0]
                        .parse()
                        .map_err(|_| parse_err(format!("bad agent id {:?}", args[0])))?;
                    let category = parse_class(line, &taxonomy, args[1])?;
                    let [l, w, h] = parse_nums::<3>(line, &args[2..5])?;
                    let motion = match args[5] {
                        "cv" => MotionSpec::ConstantVelocity(parse_nums::<7>(line, &args[6..])?),
                        "ctr" => MotionSpec::ConstantTurnRate(parse_nums::<6>(line, &args[6..])?),
                        "poses" => MotionSpec::Keyframes(BTreeMap::new()),
                        other => return Err(parse_err(format!("unknown agent mode {other:?}"))),
                    };
                    agents.push(RawAgent {
                        line,
                        agent_id,
                        category,
                        size: [l, w, h],
                        motion,
                    });
                }
                "agentpose" => {
                    let id: u64 = args
                        .first()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err("agentpose needs an agent id".into()))?;
                    let [t, x, y, z, yaw] = parse_nums::<5>(line, &args[1..])?;
                    agent_keys.entry(id).or_default().insert(
                        t as usize,
                        Pose::from_yaw_translation(yaw.to_radians(), Vector3::new(x, y, z)),
                    );
                }
                "prop" => {
                    let class = parse_class(
                        line,
                        &taxonomy,
                        args.first().ok_or_else(|| parse_err("prop needs a class".into()))?,
                    )?;
                    let [x0, y0, z0, x1, y1, z1] = parse_nums::<6>(line, &args[1..])?;
                    if x0 >= x1 || y0 >= y1 || z0 >= z1 {
                        return Err(parse_err("prop bounds must satisfy min < max".into()));
                    }
                    props.push(StaticProp {
                        class,
                        min: [x0, y0, z0],
                        max: [x1, y1, z1],
                    });
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        reason: format!("unknown directive {other:?}"),
                    })
                }
            }
        }

        let duration = duration.ok_or(Error::Parse {
            line: 0,
            reason: "script never sets duration".into(),
        })?;
        let spec = GridSpec::new(dims, resolution, origin)?;

        let mut ego_spec = ego_spec.ok_or(Error::Parse {
            line: 0,
            reason: "script never sets an ego trajectory".into(),
        })?;
        if let MotionSpec::Keyframes(map) = &mut ego_spec {
            *map = ego_keys;
        }
        let ego_opt = expand_motion(&ego_spec, duration, "ego")?;
        let mut ego = Vec::with_capacity(duration);
        for (t, p) in ego_opt.into_iter().enumerate() {
            ego.push(p.ok_or(Error::Parse {
                line: 0,
                reason: format!("ego pose missing for frame {t}"),
            })?);
        }

        let mut out_agents = Vec::with_capacity(agents.len());
        for mut a in agents {
            if let MotionSpec::Keyframes(map) = &mut a.motion {
                *map = agent_keys.remove(&a.agent_id).ok_or(Error::Parse {
                    line: a.line,
                    reason: format!("agent {} declares poses but has no agentpose lines", a.agent_id),
                })?;
            }
            if out_agents.iter().any(|x: &ScriptAgent| x.agent_id == a.agent_id) {
                return Err(Error::Parse {
                    line: a.line,
                    reason: format!("duplicate agent id {}", a.agent_id),
                });
            }
            if a.size.iter().any(|s| *s <= 0.0) {
                return Err(Error::Parse {
                    line: a.line,
                    reason: format!("agent {} has non-positive size", a.agent_id),
                });
            }
            out_agents.push(ScriptAgent {
                agent_id: a.agent_id,
                category: a.category,
                size: a.size,
                poses: expand_motion(&a.motion, duration, "agent")?,
            });
        }
        if let Some(id) = agent_keys.keys().next() {
            return Err(Error::Parse {
                line: 0,
                reason: format!("agentpose lines for undeclared agent {id}"),
            });
        }

        Ok(ScenarioScript {
            duration,
            seed,
            spec,
            taxonomy,
            ego,
            agents: out_agents,
            props,
        })
    }
}

/// One rendered frame plus the bookkeeping only the oracle knows: which
/// agent produced each voxel.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub grid: SemanticGrid,
    pub annotations: Vec<ObjectAnnotation>,
    pub ego_pose: Pose,
    pub agent_voxels: BTreeMap<u64, Vec<[usize; 3]>>,
}

/// Rasterize frame t: props first (script order), then agents, which
/// overwrite. A voxel belongs to a box when its center lies inside the
/// half-open extent [-s/2, s/2) along each local axis.
pub fn render_frame(script: &ScenarioScript, t: usize) -> RenderedFrame {
    assert!(t < script.duration, "frame {t} outside script duration");
    let spec = &script.spec;
    let ego = script.ego[t];
    let ego_inv = ego.inverse();
    let mut grid = SemanticGrid::new_free(spec.clone(), script.taxonomy.clone(), t as u64);
    let [li, wi, hi] = spec.dims;

    if !script.props.is_empty() {
        for i in 0..li {
            for j in 0..wi {
                for k in 0..hi {
                    let world = ego.transform_point(&spec.voxel_to_ego([i, j, k]));
                    for prop in &script.props {
                        if (prop.min[0]..prop.max[0]).contains(&world.x)
                            && (prop.min[1]..prop.max[1]).contains(&world.y)
                            && (prop.min[2]..prop.max[2]).contains(&world.z)
                        {
                            grid.set([i, j, k], prop.class).expect("validated class");
                        }
                    }
                }
            }
        }
    }

    let mut agent_voxels: BTreeMap<u64, Vec<[usize; 3]>> = BTreeMap::new();
    let mut annotations = Vec::new();
    for agent in &script.agents {
        let Some(world_pose) = agent.poses[t] else {
            continue;
        };
        let a2e = ego_inv.compose(&world_pose);
        let e2a = a2e.inverse();
        let half = Vector3::new(agent.size[0] / 2.0, agent.size[1] / 2.0, agent.size[2] / 2.0);
        // ego-frame bounding range of the rotated box, in voxel indices
        let reach = a2e.rotation.abs() * half;
        let center = a2e.translation;
        let mut lo = [0usize; 3];
        let mut hi_idx = [0usize; 3];
        let mut empty = false;
        for a in 0..3 {
            let span0 = (center[a] - reach[a] - spec.origin[a]) / spec.resolution - 1.0;
            let span1 = (center[a] + reach[a] - spec.origin[a]) / spec.resolution + 1.0;
            if span1 < 0.0 || span0 >= spec.dims[a] as f64 {
                empty = true;
                break;
            }
            lo[a] = span0.max(0.0) as usize;
            hi_idx[a] = (span1 as usize).min(spec.dims[a] - 1);
        }
        if empty {
            continue;
        }
        let mut voxels = Vec::new();
        for i in lo[0]..=hi_idx[0] {
            for j in lo[1]..=hi_idx[1] {
                for k in lo[2]..=hi_idx[2] {
                    let local = e2a.transform_point(&spec.voxel_to_ego([i, j, k]));
                    if (-half.x..half.x).contains(&local.x)
                        && (-half.y..half.y).contains(&local.y)
                        && (-half.z..half.z).contains(&local.z)
                    {
                        grid.set([i, j, k], agent.category).expect("validated class");
                        voxels.push([i, j, k]);
                    }
                }
            }
        }
        if !voxels.is_empty() {
            agent_voxels.insert(agent.agent_id, voxels);
            annotations.push(ObjectAnnotation {
                agent_id: agent.agent_id,
                category: agent.category,
                size: agent.size,
                agent_to_ego: a2e,
            });
        }
    }

    RenderedFrame {
        grid,
        annotations,
        ego_pose: ego,
        agent_voxels,
    }
}

// Raw homogeneous transforms, kept separate from the Pose algebra on
// purpose: flow computed here must not share the production code path.
type M4 = [[f64; 4]; 4];

fn m4_from(p: &Pose) -> M4 {
    let r = &p.rotation;
    let t = &p.translation;
    [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn m4_mul(a: &M4, b: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += a[i][k] * b[k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn m4_inv_rigid(m: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    for i in 0..3 {
        out[i][3] = -(out[i][0] * m[0][3] + out[i][1] * m[1][3] + out[i][2] * m[2][3]);
    }
    out[3][3] = 1.0;
    out
}

fn m4_is_identity_rotation(m: &M4) -> bool {
    m[0][0] == 1.0
        && m[1][1] == 1.0
        && m[2][2] == 1.0
        && m[0][1] == 0.0
        && m[0][2] == 0.0
        && m[1][0] == 0.0
        && m[1][2] == 0.0
        && m[2][0] == 0.0
        && m[2][1] == 0.0
}

/// Displacement of point x under motion M. A pure translation yields its
/// translation column bit-for-bit, mirroring the contract of the production
/// flow path.
fn m4_displacement(m: &M4, x: &Vector3<f64>) -> Vector3<f64> {
    if m4_is_identity_rotation(m) {
        return Vector3::new(m[0][3], m[1][3], m[2][3]);
    }
    let y = [
        m[0][0] * x.x + m[0][1] * x.y + m[0][2] * x.z + m[0][3],
        m[1][0] * x.x + m[1][1] * x.y + m[1][2] * x.z + m[1][3],
        m[2][0] * x.x + m[2][1] * x.y + m[2][2] * x.z + m[2][3],
    ];
    Vector3::new(y[0] - x.x, y[1] - x.y, y[2] - x.z)
}

/// Closed-form flow for frame t from the script's own poses. Forward flow
/// needs frame t+1, backward flow frame t-1. Voxels of agents absent in the
/// other frame stay invalid.
pub fn ground_truth_flow(
    script: &ScenarioScript,
    t: usize,
    direction: FlowDirection,
) -> FlowField {
    let other = match direction {
        FlowDirection::Forward => {
            assert!(t + 1 < script.duration, "forward flow needs frame t+1");
            t + 1
        }
        FlowDirection::Backward => {
            assert!(t >= 1 && t < script.duration, "backward flow needs frame t-1");
            t - 1
        }
    };
    let frame = render_frame(script, t);
    let spec = &script.spec;

    let h_ego_t = m4_from(&script.ego[t]);
    let h_ego_other_inv = m4_inv_rigid(&m4_from(&script.ego[other]));
    let static_motion = m4_mul(&h_ego_other_inv, &h_ego_t);

    let mut agent_motion: HashMap<u64, Option<M4>> = HashMap::new();
    for agent in &script.agents {
        let m = match (&agent.poses[t], &agent.poses[other]) {
            (Some(pt), Some(po)) => {
                let h = m4_mul(
                    &m4_mul(
                        &h_ego_other_inv,
                        &m4_mul(&m4_from(po), &m4_inv_rigid(&m4_from(pt))),
                    ),
                    &h_ego_t,
                );
                Some(h)
            }
            _ => None,
        };
        agent_motion.insert(agent.agent_id, m);
    }

    let mut owner: HashMap<usize, u64> = HashMap::new();
    for (id, voxels) in &frame.agent_voxels {
        for v in voxels {
            owner.insert(spec.linear(*v), *id);
        }
    }

    let mut field = FlowField::empty(spec.clone(), direction);
    let free = script.taxonomy.free_id;
    let [li, wi, hi] = spec.dims;
    for i in 0..li {
        for j in 0..wi {
            for k in 0..hi {
                if frame.grid.get([i, j, k]) == free {
                    continue;
                }
                let lin = spec.linear([i, j, k]);
                let motion = match owner.get(&lin) {
                    Some(id) => match &agent_motion[id] {
                        Some(m) => m,
                        None => continue, // agent gone in the other frame
                    },
                    None => &static_motion,
                };
                let x = spec.voxel_to_ego([i, j, k]);
                field.set([i, j, k], m4_displacement(motion, &x));
            }
        }
    }
    field
}

/// Identity ground truth: one track per agent covering the frames where it
/// contributes at least one voxel. Centroids are mean voxel indices, the
/// same convention the tracker reports.
pub fn ground_truth_tracks(script: &ScenarioScript) -> Vec<Track> {
    let mut tracks: Vec<Track> = Vec::new();
    let mut index_of: BTreeMap<u64, usize> = BTreeMap::new();
    for t in 0..script.duration {
        let frame = render_frame(script, t);
        for agent in &script.agents {
            let Some(voxels) = frame.agent_voxels.get(&agent.agent_id) else {
                continue;
            };
            let mut c = Vector3::zeros();
            for v in voxels {
                c += Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64);
            }
            c /= voxels.len() as f64;
            let point = TrackPoint {
                timestamp: t as u64,
                object_id: 0,
                centroid: c,
            };
            match index_of.get(&agent.agent_id) {
                Some(&i) => tracks[i].frames.push(point),
                None => {
                    index_of.insert(agent.agent_id, tracks.len());
                    tracks.push(Track {
                        track_id: tracks.len() as u64 + 1,
                        category: agent.category,
                        frames: vec![point],
                    });
                }
            }
        }
    }
    tracks
}
