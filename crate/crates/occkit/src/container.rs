//! Binary frame container.
//!
//! Layout: an 8-byte header (magic `UOCC`, version u16, endianness marker
//! u16 = 0x00FF, everything little-endian) followed by tagged chunks. Each
//! chunk is a 4-byte ASCII tag, a u64 payload length, and the payload.
//! Readers skip tags they do not know, so the format can grow.
//!
//! Known chunks:
//!   GSPC  grid shape: 3 x u32 dims, f64 resolution, 3 x f64 origin
//!   SEMG  semantic grid: taxonomy name (u8 len + bytes), u64 timestamp,
//!         u8 frame, voxel class ids
//!   FOVM  visibility bitset, LSB-first
//!   FLOW  u8 direction (0 forward, 1 backward), 3 x f64 per voxel,
//!         validity bitset LSB-first
//!   POSE  ego-to-world: 9 x f64 rotation row-major, 3 x f64 translation
//!   ANNO  u32 count, then per object: u64 agent id, u8 category,
//!         3 x f64 size, pose as in POSE
//!   GMMC  u32 model count, per model: u8 category, u32 components, per
//!         component: f64 weight, 3 x f64 mean, 9 x f64 covariance
//!   TRAK  u32 track count, per track: u64 id, u8 category, u32 frames,
//!         per frame: u64 timestamp, u32 object id, 3 x f64 centroid
//!
//! GSPC must precede every grid-shaped chunk. Decoding re-validates all
//! structural invariants, so a bundle read from disk is as trustworthy as
//! one built in memory.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::annotation::ObjectAnnotation;
use crate::error::{Error, Result};
use crate::flow::{FlowDirection, FlowField};
use crate::gmm::{GmmComponent, GmmModel};
use crate::grid::{FovMask, FrameRef, GridSpec, SemanticGrid};
use crate::pose::Pose;
use crate::taxonomy::LabelTaxonomy;
use crate::tracking::{Track, TrackPoint};

const MAGIC: [u8; 4] = *b"UOCC";
const VERSION: u16 = 1;
const ENDIAN_MARK: u16 = 0x00FF;

/// Everything the container can carry for one frame. Only the grid shape is
/// mandatory.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub spec: GridSpec,
    pub grid: Option<SemanticGrid>,
    pub fov: Option<FovMask>,
    pub flow_forward: Option<FlowField>,
    pub flow_backward: Option<FlowField>,
    pub ego_pose: Option<Pose>,
    pub annotations: Option<Vec<ObjectAnnotation>>,
    pub gmms: Option<Vec<GmmModel>>,
    pub tracks: Option<Vec<Track>>,
}

impl FrameBundle {
    pub fn new(spec: GridSpec) -> Self {
        FrameBundle {
            spec,
            grid: None,
            fov: None,
            flow_forward: None,
            flow_backward: None,
            ego_pose: None,
            annotations: None,
            gmms: None,
            tracks: None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&ENDIAN_MARK.to_le_bytes());

        let mut gspc = Vec::with_capacity(44);
        for d in self.spec.dims {
            gspc.extend_from_slice(&(d as u32).to_le_bytes());
        }
        gspc.extend_from_slice(&self.spec.resolution.to_le_bytes());
        for o in self.spec.origin {
            gspc.extend_from_slice(&o.to_le_bytes());
        }
        put_chunk(&mut out, b"GSPC", &gspc);

        if let Some(grid) = &self.grid {
            let name = grid.taxonomy.name.as_bytes();
            let mut p = Vec::with_capacity(1 + name.len() + 9 + grid.data().len());
            p.push(name.len() as u8);
            p.extend_from_slice(name);
            p.extend_from_slice(&grid.timestamp.to_le_bytes());
            p.push(match grid.frame {
                FrameRef::Ego => 0,
                FrameRef::World => 1,
            });
            p.extend_from_slice(grid.data());
            put_chunk(&mut out, b"SEMG", &p);
        }
        if let Some(fov) = &self.fov {
            put_chunk(&mut out, b"FOVM", &pack_bits(&fov.data));
        }
        for field in [&self.flow_forward, &self.flow_backward].into_iter().flatten() {
            let mut p = Vec::with_capacity(1 + field.data().len() * 24);
            p.push(match field.direction {
                FlowDirection::Forward => 0,
                FlowDirection::Backward => 1,
            });
            for v in field.data() {
                for c in v {
                    p.extend_from_slice(&c.to_le_bytes());
                }
            }
            p.extend_from_slice(&pack_bits(field.validity()));
            put_chunk(&mut out, b"FLOW", &p);
        }
        if let Some(pose) = &self.ego_pose {
            let mut p = Vec::with_capacity(96);
            put_pose(&mut p, pose);
            put_chunk(&mut out, b"POSE", &p);
        }
        if let Some(annos) = &self.annotations {
            let mut p = Vec::new();
            p.extend_from_slice(&(annos.len() as u32).to_le_bytes());
            for a in annos {
                p.extend_from_slice(&a.agent_id.to_le_bytes());
                p.push(a.category);
                for s in a.size {
                    p.extend_from_slice(&s.to_le_bytes());
                }
                put_pose(&mut p, &a.agent_to_ego);
            }
            put_chunk(&mut out, b"ANNO", &p);
        }
        if let Some(models) = &self.gmms {
            let mut p = Vec::new();
            p.extend_from_slice(&(models.len() as u32).to_le_bytes());
            for m in models {
                p.push(m.category);
                p.extend_from_slice(&(m.components.len() as u32).to_le_bytes());
                for c in &m.components {
                    p.extend_from_slice(&c.weight.to_le_bytes());
                    for i in 0..3 {
                        p.extend_from_slice(&c.mean[i].to_le_bytes());
                    }
                    for r in 0..3 {
                        for s in 0..3 {
                            p.extend_from_slice(&c.covariance[(r, s)].to_le_bytes());
                        }
                    }
                }
            }
            put_chunk(&mut out, b"GMMC", &p);
        }
        if let Some(tracks) = &self.tracks {
            let mut p = Vec::new();
            p.extend_from_slice(&(tracks.len() as u32).to_le_bytes());
            for t in tracks {
                p.extend_from_slice(&t.track_id.to_le_bytes());
                p.push(t.category);
                p.extend_from_slice(&(t.frames.len() as u32).to_le_bytes());
                for f in &t.frames {
                    p.extend_from_slice(&f.timestamp.to_le_bytes());
                    p.extend_from_slice(&f.object_id.to_le_bytes());
                    for i in 0..3 {
                        p.extend_from_slice(&f.centroid[i].to_le_bytes());
                    }
                }
            }
            put_chunk(&mut out, b"TRAK", &p);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<FrameBundle> {
        if bytes.len() < 8 || bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        if u16::from_le_bytes([bytes[6], bytes[7]]) != ENDIAN_MARK {
            return Err(Error::InvariantViolation {
                tag: "head".into(),
                reason: "endianness marker mismatch".into(),
            });
        }

        let mut bundle: Option<FrameBundle> = None;
        let mut pos = 8usize;
        while pos < bytes.len() {
            if bytes.len() - pos < 12 {
                return Err(Error::TruncatedChunk {
                    tag: "<header>".into(),
                });
            }
            let tag: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
            let tag_str = String::from_utf8_lossy(&tag).into_owned();
            let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap()) as usize;
            pos += 12;
            if bytes.len() - pos < len {
                return Err(Error::TruncatedChunk { tag: tag_str });
            }
            let payload = &bytes[pos..pos + len];
            pos += len;

            if &tag == b"GSPC" {
                if bundle.is_some() {
                    return Err(violation(&tag_str, "duplicate grid shape chunk"));
                }
                let mut r = Reader::new(payload, &tag_str);
                let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
                let resolution = r.f64()?;
                let origin = [r.f64()?, r.f64()?, r.f64()?];
                r.finish()?;
                let spec = GridSpec::new(dims, resolution, origin)
                    .map_err(|e| violation(&tag_str, &e.to_string()))?;
                bundle = Some(FrameBundle::new(spec));
                continue;
            }
            let Some(b) = bundle.as_mut() else {
                return Err(violation(&tag_str, "chunk precedes the grid shape"));
            };
            let n = b.spec.voxel_count();
            match &tag {
                b"SEMG" => {
                    if b.grid.is_some() {
                        return Err(violation(&tag_str, "duplicate chunk"));
                    }
                    let mut r = Reader::new(payload, &tag_str);
                    let name_len = r.u8()? as usize;
                    let name = std::str::from_utf8(r.take(name_len)?)
                        .map_err(|_| violation(&tag_str, "taxonomy name is not UTF-8"))?
                        .to_owned();
                    let taxonomy = LabelTaxonomy::builtin(&name)
                        .ok_or_else(|| violation(&tag_str, &format!("unknown taxonomy `{name}`")))?;
                    let timestamp = r.u64()?;
                    let frame = match r.u8()? {
                        0 => FrameRef::Ego,
                        1 => FrameRef::World,
                        x => return Err(violation(&tag_str, &format!("bad frame byte {x}"))),
                    };
                    let data = r.take(n)?.to_vec();
                    r.finish()?;
                    let grid =
                        SemanticGrid::from_data(b.spec.clone(), taxonomy, timestamp, frame, data)
                            .map_err(|e| violation(&tag_str, &e.to_string()))?;
                    b.grid = Some(grid);
                }
                b"FOVM" => {
                    if b.fov.is_some() {
                        return Err(violation(&tag_str, "duplicate chunk"));
                    }
                    let mut r = Reader::new(payload, &tag_str);
                    let data = unpack_bits(r.take(n.div_ceil(8))?, n);
                    r.finish()?;
                    b.fov = Some(FovMask {
                        spec: b.spec.clone(),
                        data,
                    });
                }
                b"FLOW" => {
                    let mut r = Reader::new(payload, &tag_str);
                    let direction = match r.u8()? {
                        0 => FlowDirection::Forward,
                        1 => FlowDirection::Backward,
                        x => return Err(violation(&tag_str, &format!("bad direction byte {x}"))),
                    };
                    let slot = match direction {
                        FlowDirection::Forward => &mut b.flow_forward,
                        FlowDirection::Backward => &mut b.flow_backward,
                    };
                    if slot.is_some() {
                        return Err(violation(&tag_str, "duplicate chunk for this direction"));
                    }
                    let mut data = Vec::with_capacity(n);
                    for _ in 0..n {
                        data.push([r.f64()?, r.f64()?, r.f64()?]);
                    }
                    let validity = unpack_bits(r.take(n.div_ceil(8))?, n);
                    r.finish()?;
                    let field = FlowField::from_parts(b.spec.clone(), direction, data, validity)
                        .map_err(|e| violation(&tag_str, &e.to_string()))?;
                    *slot = Some(field);
                }
                b"POSE" => {
                    if b.ego_pose.is_some() {
                        return Err(violation(&tag_str, "duplicate chunk"));
                    }
                    let mut r = Reader::new(payload, &tag_str);
                    let pose = read_pose(&mut r, &tag_str)?;
                    r.finish()?;
                    b.ego_pose = Some(pose);
                }
                b"ANNO" => {
                    if b.annotations.is_some() {
                        return Err(violation(&tag_str, "duplicate chunk"));
                    }
                    let mut r = Reader::new(payload, &tag_str);
                    let count = r.u32()?;
                    let mut annos = Vec::with_capacity(count as usize);
                    for _ in 0..count {
                        let agent_id = r.u64()?;
                        let category = r.u8()?;
                        let size = [r.f64()?, r.f64()?, r.f64()?];
                        let agent_to_ego = read_pose(&mut r, &tag_str)?;
                        let a = ObjectAnnotation {
                            agent_id,
                            category,
                            size,
                            agent_to_ego,
                        };
                        a.validate().map_err(|e| violation(&tag_str, &e.to_string()))?;
                        annos.push(a);
                    }
                    r.finish()?;
                    b.annotations = Some(annos);
                }
                b"GMMC" => {
                    if b.gmms.is_some() {
                        return Err(violation(&tag_str, "duplicate chunk"));
                    }
                    let mut r = Reader::new(payload, &tag_str);
                    let count = r.u32()?;
                    let mut models = Vec::with_capacity(count as usize);
                    for _ in 0..count {
                        let category = r.u8()?;
                        let k = r.u32()?;
                        let mut components = Vec::with_capacity(k as usize);
                        for _ in 0..k {
                            let weight = r.f64()?;
                            let mean = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
                            let mut cov = Matrix3::zeros();
                            for row in 0..3 {
                                for col in 0..3 {
                                    cov[(row, col)] = r.f64()?;
                                }
                            }
                            components.push(GmmComponent {
                                weight,
                                mean,
                                covariance: cov,
                            });
                        }
                        let m = GmmModel {
                            category,
                            components,
                        };
                        m.validate().map_err(|e| violation(&tag_str, &e.to_string()))?;
                        models.push(m);
                    }
                    r.finish()?;
                    b.gmms = Some(models);
                }
                b"TRAK" => {
                    if b.tracks.is_some() {
                        return Err(violation(&tag_str, "duplicate chunk"));
                    }
                    let mut r = Reader::new(payload, &tag_str);
                    let count = r.u32()?;
                    let mut tracks = Vec::with_capacity(count as usize);
                    for _ in 0..count {
                        let track_id = r.u64()?;
                        let category = r.u8()?;
                        let m = r.u32()?;
                        let mut frames = Vec::with_capacity(m as usize);
                        for _ in 0..m {
                            let timestamp = r.u64()?;
                            let object_id = r.u32()?;
                            let centroid = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
                            if let Some(prev) = frames.last().map(|f: &TrackPoint| f.timestamp) {
                                if timestamp <= prev {
                                    return Err(violation(
                                        &tag_str,
                                        &format!(
                                            "track {track_id} timestamps not increasing ({prev} then {timestamp})"
                                        ),
                                    ));
                                }
                            }
                            frames.push(TrackPoint {
                                timestamp,
                                object_id,
                                centroid,
                            });
                        }
                        if frames.is_empty() {
                            return Err(violation(&tag_str, &format!("track {track_id} has no frames")));
                        }
                        tracks.push(Track {
                            track_id,
                            category,
                            frames,
                        });
                    }
                    r.finish()?;
                    b.tracks = Some(tracks);
                }
                _ => {} // unknown tag, skip
            }
        }
        bundle.ok_or(Error::InvariantViolation {
            tag: "GSPC".into(),
            reason: "file carries no grid shape chunk".into(),
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.encode())?)
    }

    pub fn read_file(path: &Path) -> Result<FrameBundle> {
        FrameBundle::decode(&std::fs::read(path)?)
    }
}

fn violation(tag: &str, reason: &str) -> Error {
    Error::InvariantViolation {
        tag: tag.to_owned(),
        reason: reason.to_owned(),
    }
}

fn put_chunk(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn put_pose(out: &mut Vec<u8>, pose: &Pose) {
    for r in 0..3 {
        for c in 0..3 {
            out.extend_from_slice(&pose.rotation[(r, c)].to_le_bytes());
        }
    }
    for i in 0..3 {
        out.extend_from_slice(&pose.translation[i].to_le_bytes());
    }
}

fn read_pose(r: &mut Reader, tag: &str) -> Result<Pose> {
    let mut rot = Matrix3::zeros();
    for row in 0..3 {
        for col in 0..3 {
            rot[(row, col)] = r.f64()?;
        }
    }
    let t = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
    Pose::new(rot, t).map_err(|e| violation(tag, &e.to_string()))
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, b) in bits.iter().enumerate() {
        if *b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect()
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    tag: &'a str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], tag: &'a str) -> Self {
        Reader { buf, pos: 0, tag }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::TruncatedChunk {
                tag: self.tag.to_owned(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::InvariantViolation {
                tag: self.tag.to_owned(),
                reason: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}
