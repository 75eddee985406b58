//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage problems, 2 data problems (unreadable
//! files, invariant violations, failed computations). Worker threads are
//! capped by the OCCKIT_THREADS environment variable.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use crate::container::FrameBundle;
use crate::error::Error;
use crate::flow::{self, FlowDirection, FramePair};
use crate::gmm;
use crate::grid::GridSpec;
use crate::metrics::{self, MetricReport};
use crate::objects::{self, ObjectInstance};
use crate::scenario;
use crate::scenegen::{self, ScenarioScript};
use crate::taxonomy::{ClassId, LabelTaxonomy};
use crate::tracking::{self, Track, TrackFrame, TrackerConfig};

/// Worker count: OCCKIT_THREADS when set to a positive integer, otherwise
/// the machine's available parallelism.
pub fn thread_cap() -> usize {
    std::env::var("OCCKIT_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Order-preserving parallel map over borrowed items with a fixed thread
/// count. Contiguous chunks keep the per-thread workload predictable.
pub fn par_map_with<T, R, F>(threads: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let n = items.len();
    if n == 0 {
        return Vec::new();
    }
    let threads = threads.clamp(1, n);
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = n.div_ceil(threads);
    let mut results: Vec<Option<R>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        for (item_chunk, result_chunk) in items.chunks(chunk).zip(results.chunks_mut(chunk)) {
            let f = &f;
            s.spawn(move || {
                for (slot, item) in result_chunk.iter_mut().zip(item_chunk) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("chunk filled")).collect()
}

/// `par_map_with` at the environment-configured thread count.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    par_map_with(thread_cap(), items, f)
}

#[derive(Parser)]
#[command(
    name = "occkit",
    version,
    about = "Semantic occupancy toolkit: synthesize, estimate flow, segment, track, and evaluate voxel grid sequences"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scripted scenario into a frame directory
    Synth(SynthArgs),
    /// Estimate per-voxel flow between consecutive frames
    Flow(FlowArgs),
    /// Split one frame into connected object instances
    Segment(SegmentArgs),
    /// Link object instances across frames
    Track(TrackArgs),
    /// Score a predicted sequence against a reference
    Eval(EvalArgs),
    /// Fit box-dimension mixture models from measurements
    FitGmm(FitGmmArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario script
    #[arg(long)]
    script: PathBuf,
    /// Output frame directory
    #[arg(long)]
    out: PathBuf,
    /// Also store exact flow fields derived from the script
    #[arg(long)]
    flow: bool,
    /// Also store exact tracks as <out>/tracks.uocc
    #[arg(long)]
    tracks: bool,
}

#[derive(Args)]
struct FlowArgs {
    /// Input frame directory (grids, poses, and annotations required)
    #[arg(long)]
    input: PathBuf,
    /// Output frame directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    /// Input frame directory
    #[arg(long)]
    input: PathBuf,
    /// Frame index
    #[arg(long)]
    frame: usize,
    /// Classes to segment (names or ids), default: the dynamic classes
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
}

#[derive(Args)]
struct TrackArgs {
    /// Input frame directory
    #[arg(long)]
    input: PathBuf,
    /// Output container holding the tracks
    #[arg(long)]
    out: PathBuf,
    /// Association gate in meters
    #[arg(long, default_value_t = tracking::TrackerConfig::default().max_dist)]
    max_dist: f64,
    /// Classes to track (names or ids), default: the dynamic classes
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted frame directory
    #[arg(long)]
    pred: PathBuf,
    /// Reference frame directory
    #[arg(long)]
    gt: PathBuf,
    /// Metrics to compute: iou, miou, bg, shape, dim
    #[arg(long, value_delimiter = ',', default_value = "iou,miou,bg")]
    metrics: Vec<String>,
    /// Mixture model container, required by the dim metric
    #[arg(long)]
    gmm: Option<PathBuf>,
    /// Plausibility threshold for the dim pass rate
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Also write the report to this file
    #[arg(long)]
    report: Option<PathBuf>,
    /// Classes for miou (names or ids), default: every non-free class
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
}

#[derive(Args)]
struct FitGmmArgs {
    /// Box measurement file: `<class> <length> <width> <height>` per line
    #[arg(long)]
    boxes: PathBuf,
    /// Output container holding the fitted models
    #[arg(long)]
    out: PathBuf,
    /// Largest component count to try per class
    #[arg(long, default_value_t = 3)]
    kmax: usize,
    /// Random seed for the fit initialization
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Taxonomy the class column refers to
    #[arg(long, default_value = "unified")]
    taxonomy: String,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parse and run. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Flow(a) => cmd_flow(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Track(a) => cmd_track(a),
        Command::Eval(a) => cmd_eval(a),
        Command::FitGmm(a) => cmd_fit_gmm(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn resolve_classes(
    taxonomy: &LabelTaxonomy,
    tokens: &[String],
) -> std::result::Result<BTreeSet<ClassId>, Failure> {
    let mut out = BTreeSet::new();
    for tok in tokens {
        let id = match tok.parse::<ClassId>() {
            Ok(id) if taxonomy.contains(id) => id,
            _ => taxonomy.id_of(tok).ok_or_else(|| {
                Failure::Usage(format!(
                    "class {tok:?} is not in taxonomy `{}`",
                    taxonomy.name
                ))
            })?,
        };
        out.insert(id);
    }
    Ok(out)
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let text = std::fs::read_to_string(&a.script).map_err(Error::from)?;
    let script = ScenarioScript::parse(&text)?;
    let rendered: Vec<scenegen::RenderedFrame> = (0..script.duration)
        .map(|t| scenegen::render_frame(&script, t))
        .collect();
    let mut frames: Vec<FrameBundle> = rendered
        .into_iter()
        .map(|f| {
            let mut b = FrameBundle::new(script.spec.clone());
            b.grid = Some(f.grid);
            b.ego_pose = Some(f.ego_pose);
            b.annotations = Some(f.annotations);
            b
        })
        .collect();
    if a.flow {
        let ts: Vec<usize> = (0..script.duration).collect();
        let fields = par_map(&ts, |&t| {
            let fwd = (t + 1 < script.duration)
                .then(|| scenegen::ground_truth_flow(&script, t, FlowDirection::Forward));
            let bwd =
                (t >= 1).then(|| scenegen::ground_truth_flow(&script, t, FlowDirection::Backward));
            (fwd, bwd)
        });
        for (frame, (fwd, bwd)) in frames.iter_mut().zip(fields) {
            frame.flow_forward = fwd;
            frame.flow_backward = bwd;
        }
    }
    scenario::write_scenario(&a.out, &frames)?;
    if a.tracks {
        let mut b = FrameBundle::new(script.spec.clone());
        b.tracks = Some(scenegen::ground_truth_tracks(&script));
        b.write_file(&a.out.join("tracks.uocc"))?;
    }
    println!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn require_grid(frame: &FrameBundle, t: usize) -> std::result::Result<(), Failure> {
    if frame.grid.is_none() {
        return Err(Failure::Data(Error::InsufficientData(format!(
            "frame {t} stores no semantic grid"
        ))));
    }
    Ok(())
}

fn cmd_flow(a: FlowArgs) -> CmdResult {
    let mut frames = scenario::read_scenario(&a.input)?;
    if frames.len() < 2 {
        return Err(Failure::Data(Error::InsufficientData(
            "flow needs at least 2 frames".into(),
        )));
    }
    for (t, f) in frames.iter().enumerate() {
        require_grid(f, t)?;
        if f.ego_pose.is_none() || f.annotations.is_none() {
            return Err(Failure::Data(Error::InsufficientData(format!(
                "frame {t} stores no ego pose or annotations"
            ))));
        }
    }
    let pairs: Vec<usize> = (0..frames.len() - 1).collect();
    let computed = par_map(&pairs, |&t| -> crate::error::Result<_> {
        let a = &frames[t];
        let b = &frames[t + 1];
        let pair = FramePair::new(
            a.grid.clone().unwrap(),
            b.grid.clone().unwrap(),
            a.ego_pose.unwrap(),
            b.ego_pose.unwrap(),
            a.annotations.clone().unwrap(),
            b.annotations.clone().unwrap(),
        )?;
        let fwd = flow::forward_flow(&pair)?;
        let bwd = flow::backward_flow(&pair)?;
        Ok((fwd, bwd))
    });
    let mut unattributed = 0usize;
    for (t, r) in computed.into_iter().enumerate() {
        let (fwd, bwd) = r?;
        unattributed += fwd.unattributed + bwd.unattributed;
        frames[t].flow_forward = Some(fwd.field);
        frames[t + 1].flow_backward = Some(bwd.field);
    }
    let n = frames.len();
    scenario::write_scenario(&a.out, &frames)?;
    println!(
        "computed flow for {} frame pairs ({unattributed} voxels left unattributed)",
        n - 1
    );
    Ok(())
}

/// Segment one grid into instances of the requested (or dynamic) classes
/// with boxes fitted, returning the instances.
fn segment_frame(
    frame: &FrameBundle,
    t: usize,
    class_arg: &[String],
) -> std::result::Result<Vec<ObjectInstance>, Failure> {
    require_grid(frame, t)?;
    let grid = frame.grid.as_ref().unwrap();
    let classes = if class_arg.is_empty() {
        grid.taxonomy.dynamic_ids.clone()
    } else {
        resolve_classes(&grid.taxonomy, class_arg)?
    };
    let mut seg = objects::segment(grid, &classes);
    objects::fit_boxes(&mut seg, grid.spec.resolution);
    Ok(seg.instances)
}

fn cmd_segment(a: SegmentArgs) -> CmdResult {
    let frames = scenario::read_scenario(&a.input)?;
    let frame = frames.get(a.frame).ok_or_else(|| {
        Failure::Usage(format!(
            "frame {} out of range, directory has {}",
            a.frame,
            frames.len()
        ))
    })?;
    let instances = segment_frame(frame, a.frame, &a.classes)?;
    let grid = frame.grid.as_ref().unwrap();
    println!("{} instances", instances.len());
    for inst in &instances {
        let c = inst.centroid_ego(&grid.spec);
        let name = grid
            .taxonomy
            .class_name(inst.category)
            .unwrap_or("unknown");
        let bbox = inst.bbox.as_ref().expect("fit_boxes ran");
        let [l, w, h] = bbox.dims();
        println!(
            "instance {} {} voxels {} centroid {:.2} {:.2} {:.2} box {l:.2} {w:.2} {h:.2} yaw {:.1}",
            inst.object_id,
            name,
            inst.voxels.len(),
            c.x,
            c.y,
            c.z,
            bbox.yaw.to_degrees()
        );
    }
    Ok(())
}

/// Segment every frame and link instances through time. Forward flow is
/// used when stored; otherwise tracks rely on proximity alone.
fn build_tracks(
    frames: &[FrameBundle],
    class_arg: &[String],
    config: &TrackerConfig,
) -> std::result::Result<(Vec<Track>, Vec<Vec<ObjectInstance>>), Failure> {
    let indices: Vec<usize> = (0..frames.len()).collect();
    let segmented = par_map(&indices, |&t| segment_frame(&frames[t], t, class_arg));
    let mut instances = Vec::with_capacity(frames.len());
    for r in segmented {
        instances.push(r?);
    }
    let track_frames: Vec<TrackFrame> = frames
        .iter()
        .zip(&instances)
        .map(|(f, inst)| TrackFrame {
            timestamp: f.grid.as_ref().unwrap().timestamp,
            instances: inst,
            flow: f.flow_forward.as_ref(),
        })
        .collect();
    let spec = &frames[0].spec;
    Ok((
        tracking::track_sequence(&track_frames, spec, config),
        instances,
    ))
}

fn cmd_track(a: TrackArgs) -> CmdResult {
    let frames = scenario::read_scenario(&a.input)?;
    if frames.is_empty() {
        return Err(Failure::Data(Error::EmptyInput("no frames to track")));
    }
    let config = TrackerConfig {
        max_dist: a.max_dist,
    };
    let (tracks, _) = build_tracks(&frames, &a.classes, &config)?;
    let mut b = FrameBundle::new(frames[0].spec.clone());
    let n = tracks.len();
    let total: usize = tracks.iter().map(|t| t.frames.len()).sum();
    b.tracks = Some(tracks);
    b.write_file(&a.out)?;
    println!("{n} tracks covering {total} instance observations");
    Ok(())
}

fn cmd_fit_gmm(a: FitGmmArgs) -> CmdResult {
    let taxonomy = LabelTaxonomy::builtin(&a.taxonomy)
        .ok_or_else(|| Failure::Usage(format!("unknown taxonomy {:?}", a.taxonomy)))?;
    let text = std::fs::read_to_string(&a.boxes).map_err(Error::from)?;
    let samples = scenario::parse_boxes(&text, &taxonomy)?;
    let mut models = Vec::new();
    for (class, dims) in &samples {
        let fit = gmm::fit_gmm(*class, dims, a.kmax, a.seed)?;
        println!(
            "class {} samples {} components {} bic {:.3}",
            taxonomy.class_name(*class).unwrap_or("unknown"),
            dims.len(),
            fit.model.k(),
            fit.bic
        );
        models.push(fit.model);
    }
    let mut b = FrameBundle::new(GridSpec::default());
    b.gmms = Some(models);
    b.write_file(&a.out)?;
    Ok(())
}

const KNOWN_METRICS: [&str; 5] = ["iou", "miou", "bg", "shape", "dim"];

fn cmd_eval(a: EvalArgs) -> CmdResult {
    for m in &a.metrics {
        if !KNOWN_METRICS.contains(&m.as_str()) {
            return Err(Failure::Usage(format!(
                "unknown metric {m:?}, expected one of {}",
                KNOWN_METRICS.join(", ")
            )));
        }
    }
    let want = |m: &str| a.metrics.iter().any(|x| x == m);
    if want("dim") && a.gmm.is_none() {
        return Err(Failure::Usage("the dim metric needs --gmm".into()));
    }

    let pred = scenario::read_scenario(&a.pred)?;
    let gt = scenario::read_scenario(&a.gt)?;
    if pred.len() != gt.len() {
        return Err(Failure::Data(Error::SpecMismatch(format!(
            "{} predicted frames vs {} reference frames",
            pred.len(),
            gt.len()
        ))));
    }
    if pred.is_empty() {
        return Err(Failure::Data(Error::EmptyInput("no frames to evaluate")));
    }
    for (t, (p, g)) in pred.iter().zip(&gt).enumerate() {
        require_grid(p, t)?;
        require_grid(g, t)?;
    }
    let taxonomy = gt[0].grid.as_ref().unwrap().taxonomy.clone();

    let mut report = MetricReport {
        iou_geo: None,
        miou_geo: None,
        per_class_iou: BTreeMap::new(),
        iou_bg: None,
        iou_object: BTreeMap::new(),
        dim_mean: BTreeMap::new(),
        dim_pass_rate: BTreeMap::new(),
    };
    let indices: Vec<usize> = (0..pred.len()).collect();

    if want("iou") {
        let per_frame = par_map(&indices, |&t| {
            metrics::iou_geo(pred[t].grid.as_ref().unwrap(), gt[t].grid.as_ref().unwrap())
        });
        let mut sum = 0.0;
        for r in per_frame {
            sum += r?;
        }
        report.iou_geo = Some(sum / pred.len() as f64);
    }

    if want("miou") {
        let classes = if a.classes.is_empty() {
            taxonomy
                .classes
                .keys()
                .copied()
                .filter(|c| *c != taxonomy.free_id)
                .collect()
        } else {
            resolve_classes(&taxonomy, &a.classes)?
        };
        let per_frame = par_map(&indices, |&t| {
            metrics::miou_geo(
                pred[t].grid.as_ref().unwrap(),
                gt[t].grid.as_ref().unwrap(),
                &classes,
            )
        });
        // classes missing from single frames are fine; a class only counts
        // where its union is non-empty
        let mut sums: BTreeMap<ClassId, (f64, usize)> = BTreeMap::new();
        let mut any = false;
        for r in per_frame {
            match r {
                Ok(class_iou) => {
                    any = true;
                    for (c, v) in class_iou.per_class {
                        let e = sums.entry(c).or_insert((0.0, 0));
                        e.0 += v;
                        e.1 += 1;
                    }
                }
                Err(Error::NoEvaluableClass) => {}
                Err(e) => return Err(e.into()),
            }
        }
        if !any {
            return Err(Failure::Data(Error::NoEvaluableClass));
        }
        for (c, (sum, n)) in sums {
            report.per_class_iou.insert(c, sum / n as f64);
        }
        report.miou_geo = Some(
            report.per_class_iou.values().sum::<f64>() / report.per_class_iou.len() as f64,
        );
    }

    if want("bg") {
        for (t, g) in gt.iter().enumerate() {
            if g.ego_pose.is_none() {
                return Err(Failure::Data(Error::InsufficientData(format!(
                    "reference frame {t} stores no ego pose, required by bg"
                ))));
            }
        }
        let static_classes = metrics::background_classes(&taxonomy);
        let pairs: Vec<usize> = (0..pred.len() - 1).collect();
        if pairs.is_empty() {
            return Err(Failure::Data(Error::InsufficientData(
                "bg needs at least 2 frames".into(),
            )));
        }
        let per_pair = par_map(&pairs, |&t| {
            metrics::background_consistency(
                pred[t].grid.as_ref().unwrap(),
                pred[t + 1].grid.as_ref().unwrap(),
                gt[t].ego_pose.as_ref().unwrap(),
                gt[t + 1].ego_pose.as_ref().unwrap(),
                &static_classes,
            )
        });
        let mut sum = 0.0;
        for r in &per_pair {
            match r {
                Ok(v) => sum += v,
                Err(e) => return Err(Failure::Data(Error::SpecMismatch(e.to_string()))),
            }
        }
        report.iou_bg = Some(sum / per_pair.len() as f64);
    }

    if want("shape") {
        let (tracks, instances) = build_tracks(&pred, &[], &TrackerConfig::default())?;
        // timestamp -> frame index, to find each observation's voxels
        let stamp_of: BTreeMap<u64, usize> = pred
            .iter()
            .enumerate()
            .map(|(t, f)| (f.grid.as_ref().unwrap().timestamp, t))
            .collect();
        let mut sums: BTreeMap<ClassId, (f64, usize)> = BTreeMap::new();
        for track in tracks.iter().filter(|t| t.frames.len() >= 2) {
            let mut sets: Vec<Vec<[usize; 3]>> = Vec::with_capacity(track.frames.len());
            for obs in &track.frames {
                let t = stamp_of[&obs.timestamp];
                let inst = instances[t]
                    .iter()
                    .find(|i| i.object_id == obs.object_id)
                    .expect("track points at a segmented instance");
                sets.push(inst.voxels.clone());
            }
            let resolution = pred[0].spec.resolution;
            let Ok(aligned) = crate::align::align_sequence(&sets, resolution) else {
                continue;
            };
            let Ok(sc) = metrics::shape_consistency(&aligned, resolution) else {
                continue;
            };
            if let Some(mean) = sc.mean {
                let e = sums.entry(track.category).or_insert((0.0, 0));
                e.0 += mean;
                e.1 += 1;
            }
        }
        for (c, (sum, n)) in sums {
            report.iou_object.insert(c, sum / n as f64);
        }
    }

    if want("dim") {
        let gmm_file = FrameBundle::read_file(a.gmm.as_ref().unwrap())?;
        let models = gmm_file.gmms.ok_or_else(|| {
            Failure::Data(Error::InsufficientData(
                "the --gmm file stores no mixture models".into(),
            ))
        })?;
        let model_of: BTreeMap<ClassId, _> =
            models.iter().map(|m| (m.category, m)).collect();
        if !(a.rho > 0.0 && a.rho <= 1.0) {
            return Err(Failure::Usage(format!(
                "--rho must be in (0, 1], got {}",
                a.rho
            )));
        }
        let mut probs: BTreeMap<ClassId, Vec<f64>> = BTreeMap::new();
        for (t, frame) in pred.iter().enumerate() {
            for inst in segment_frame(frame, t, &[])? {
                let Some(model) = model_of.get(&inst.category) else {
                    continue;
                };
                let [l, w, h] = inst.bbox.as_ref().expect("fit_boxes ran").dims();
                let p = gmm::dim_probability(&Vector3::new(l, w, h), model);
                probs.entry(inst.category).or_default().push(p);
            }
        }
        for (c, ps) in probs {
            let n = ps.len() as f64;
            report.dim_mean.insert(c, ps.iter().sum::<f64>() / n);
            report
                .dim_pass_rate
                .insert(c, ps.iter().filter(|p| **p >= a.rho).count() as f64 / n);
        }
    }

    let text = report.render(&taxonomy);
    print!("{text}");
    if let Some(path) = &a.report {
        write_report(path, &text)?;
    }
    Ok(())
}

fn write_report(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Data(Error::from(e)))
}
