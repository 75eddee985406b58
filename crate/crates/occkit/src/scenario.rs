//! Scenario directories: one frame container per time step plus a small
//! manifest, so sequences can be produced and consumed incrementally.
//!
//! Layout:
//!   manifest.txt      frame count and the shared grid shape
//!   frame_000000.uocc first frame
//!   frame_000001.uocc ...
//!
//! The manifest duplicates the shape on purpose: a reader can reject a
//! mismatched frame without decoding all of it, and a human can see the
//! sequence parameters with `cat`.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::container::FrameBundle;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::taxonomy::{ClassId, LabelTaxonomy};

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t:06}.uocc"))
}

fn manifest_text(frames: &[FrameBundle]) -> String {
    let spec = &frames[0].spec;
    let mut out = String::new();
    out.push_str(&format!("frames {}\n", frames.len()));
    out.push_str(&format!(
        "dims {} {} {}\n",
        spec.dims[0], spec.dims[1], spec.dims[2]
    ));
    out.push_str(&format!("resolution {}\n", spec.resolution));
    out.push_str(&format!(
        "origin {} {} {}\n",
        spec.origin[0], spec.origin[1], spec.origin[2]
    ));
    if let Some(grid) = &frames[0].grid {
        out.push_str(&format!("taxonomy {}\n", grid.taxonomy.name));
    }
    out
}

/// Write every frame plus the manifest. All frames must share one grid
/// shape; an empty sequence has no shape to record and is rejected.
pub fn write_scenario(dir: &Path, frames: &[FrameBundle]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("scenario has no frames"));
    }
    if let Some(bad) = frames.iter().position(|f| f.spec != frames[0].spec) {
        return Err(Error::SpecMismatch(format!(
            "frame {bad} has a different grid shape than frame 0"
        )));
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.txt"), manifest_text(frames))?;
    for (t, frame) in frames.iter().enumerate() {
        frame.write_file(&frame_path(dir, t))?;
    }
    Ok(())
}

#[derive(Debug)]
struct Manifest {
    frames: usize,
    spec: GridSpec,
    taxonomy: Option<String>,
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut frames = None;
    let mut dims = None;
    let mut resolution = None;
    let mut origin = None;
    let mut taxonomy = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tok: Vec<&str> = content.split_whitespace().collect();
        let want = |n: usize| -> Result<Vec<f64>> {
            if tok.len() != n + 1 {
                return Err(Error::Parse {
                    line,
                    reason: format!("{} wants {n} values", tok[0]),
                });
            }
            tok[1..]
                .iter()
                .map(|t| {
                    t.parse().map_err(|_| Error::Parse {
                        line,
                        reason: format!("bad number {t:?}"),
                    })
                })
                .collect()
        };
        match tok[0] {
            "frames" => frames = Some(want(1)?[0] as usize),
            "dims" => {
                let v = want(3)?;
                dims = Some([v[0] as usize, v[1] as usize, v[2] as usize]);
            }
            "resolution" => resolution = Some(want(1)?[0]),
            "origin" => {
                let v = want(3)?;
                origin = Some([v[0], v[1], v[2]]);
            }
            "taxonomy" => {
                taxonomy = Some(
                    tok.get(1)
                        .ok_or(Error::Parse {
                            line,
                            reason: "taxonomy wants a name".into(),
                        })?
                        .to_string(),
                )
            }
            other => {
                return Err(Error::Parse {
                    line,
                    reason: format!("unknown manifest key {other:?}"),
                })
            }
        }
    }
    let missing = |what: &str| Error::Parse {
        line: 0,
        reason: format!("manifest missing {what}"),
    };
    Ok(Manifest {
        frames: frames.ok_or_else(|| missing("frames"))?,
        spec: GridSpec::new(
            dims.ok_or_else(|| missing("dims"))?,
            resolution.ok_or_else(|| missing("resolution"))?,
            origin.ok_or_else(|| missing("origin"))?,
        )?,
        taxonomy,
    })
}

/// Read a scenario directory, checking each frame against the manifest.
pub fn read_scenario(dir: &Path) -> Result<Vec<FrameBundle>> {
    let manifest = parse_manifest(&std::fs::read_to_string(dir.join("manifest.txt"))?)?;
    let mut frames = Vec::with_capacity(manifest.frames);
    for t in 0..manifest.frames {
        let frame = FrameBundle::read_file(&frame_path(dir, t))?;
        if frame.spec != manifest.spec {
            return Err(Error::SpecMismatch(format!(
                "frame {t} does not match the manifest grid shape"
            )));
        }
        if let (Some(want), Some(grid)) = (&manifest.taxonomy, &frame.grid) {
            if grid.taxonomy.name != *want {
                return Err(Error::SpecMismatch(format!(
                    "frame {t} uses taxonomy `{}`, manifest says `{want}`",
                    grid.taxonomy.name
                )));
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Parse a box-dimension sample file: one `<class> <length> <width>
/// <height>` line per observed box, classes by id or name, `#` comments.
pub fn parse_boxes(
    text: &str,
    taxonomy: &LabelTaxonomy,
) -> Result<std::collections::BTreeMap<ClassId, Vec<Vector3<f64>>>> {
    let mut out: std::collections::BTreeMap<ClassId, Vec<Vector3<f64>>> = Default::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tok: Vec<&str> = content.split_whitespace().collect();
        if tok.len() != 4 {
            return Err(Error::Parse {
                line,
                reason: format!("expected class and three dimensions, got {} fields", tok.len()),
            });
        }
        let class = match tok[0].parse::<ClassId>() {
            Ok(id) if taxonomy.contains(id) => id,
            _ => taxonomy.id_of(tok[0]).ok_or(Error::Parse {
                line,
                reason: format!("unknown class {:?}", tok[0]),
            })?,
        };
        let mut dims = [0.0f64; 3];
        for (i, t) in tok[1..].iter().enumerate() {
            dims[i] = t.parse().map_err(|_| Error::Parse {
                line,
                reason: format!("bad number {t:?}"),
            })?;
            if !(dims[i].is_finite() && dims[i] > 0.0) {
                return Err(Error::Parse {
                    line,
                    reason: format!("dimension must be positive, got {t}"),
                });
            }
        }
        out.entry(class)
            .or_default()
            .push(Vector3::new(dims[0], dims[1], dims[2]));
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("box file has no samples"));
    }
    Ok(out)
}
