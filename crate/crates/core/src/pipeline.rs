//! The detection/mapping loop and its ablation variants.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::{mpsc, Arc};
use std::time::Instant;

use rustc_hash::FxHashSet;

use crate::back_end::{BackEnd, BackEndParams, FreeSpaceModel, GlobalStaticMap, OccupancyRule, OccupancySubmap};
use crate::error::{Error, Result};
use crate::eval::{score_map, MapScore, TrackRecord};
use crate::front_end::{FrontEnd, FrontEndParams, TrackedBox};
use crate::geometry::{Label, LabeledScan, PoseSE3, VoxelKey};
use crate::sim::PosedScan;
use crate::voxel_map::VoxelMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Full,
    /// Front-end static scans stacked straight into the map.
    FrontEndOnly,
    /// Raw scans into the back end.
    BackEndOnly,
    /// Raw scans; any visibility free count removes a voxel.
    VisibilityOnly,
    /// Raw scans; free counts from exact ray traversal.
    OccupancyOnly,
}

impl Mode {
    pub const ALL: [Mode; 5] =
        [Mode::FrontEndOnly, Mode::BackEndOnly, Mode::VisibilityOnly, Mode::OccupancyOnly, Mode::Full];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::FrontEndOnly => "front_end_only",
            Mode::BackEndOnly => "back_end_only",
            Mode::VisibilityOnly => "visibility_only",
            Mode::OccupancyOnly => "occupancy_only",
        }
    }

    fn runs_front_end(self) -> bool {
        matches!(self, Mode::Full | Mode::FrontEndOnly)
    }

    fn back_end_params(self, base: &BackEndParams) -> BackEndParams {
        let mut p = base.clone();
        match self {
            Mode::VisibilityOnly => p.rule = OccupancyRule::AnyFree,
            Mode::OccupancyOnly => p.free_space = FreeSpaceModel::RayTraversal,
            _ => {}
        }
        p
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Front-end step then back-end iteration on one thread.
    #[default]
    Interleaved,
    /// Back end on its own thread, handing off once per scan.
    TwoWorker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub front_end: FrontEndParams,
    pub back_end: BackEndParams,
    pub mode: Mode,
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            front_end: FrontEndParams::default(),
            back_end: BackEndParams::default(),
            mode: Mode::Full,
            execution: Execution::Interleaved,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSummary {
    pub index: usize,
    pub timestamp: f64,
    pub points: usize,
    pub static_count: usize,
    /// Scan indices classified dynamic, ascending.
    pub dynamic_indices: Vec<u32>,
    pub out_of_bound: usize,
    pub boxes: Vec<TrackedBox>,
    /// Version of the map the front end subtracted against.
    pub map_version_read: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapVersionRecord {
    pub version: u64,
    /// Frame after which the version was published.
    pub frame: usize,
    pub submaps: usize,
    pub voxels: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub front_end_ms: Vec<f64>,
    pub back_end_ms: Vec<f64>,
    pub total_ms: f64,
}

impl StageTimings {
    fn mean(v: &[f64]) -> f64 {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn mean_front_end_ms(&self) -> f64 {
        Self::mean(&self.front_end_ms)
    }

    pub fn mean_back_end_ms(&self) -> f64 {
        Self::mean(&self.back_end_ms)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: Mode,
    pub frames: Vec<FrameSummary>,
    pub map_versions: Vec<MapVersionRecord>,
    /// Back-end submaps at the end of the run, oldest first.
    pub submaps: Vec<Arc<OccupancySubmap>>,
    /// `None` when no scan was processed.
    pub final_map: Option<VoxelMap>,
    pub tracks: Vec<TrackRecord>,
    pub timings: StageTimings,
}

impl RunReport {
    /// Deterministic text form; timings are excluded (see
    /// [`RunReport::timing_text`]).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "SMAT-REPORT v1").unwrap();
        writeln!(s, "mode {}", self.mode).unwrap();
        writeln!(s, "frames {}", self.frames.len()).unwrap();
        match &self.final_map {
            Some(m) => writeln!(s, "final_map_voxels {}", m.len()).unwrap(),
            None => writeln!(s, "final_map_voxels none").unwrap(),
        }
        writeln!(s, "map_versions {}", self.map_versions.len()).unwrap();
        writeln!(s, "submaps {}", self.submaps.len()).unwrap();
        writeln!(s, "track_records {}", self.tracks.len()).unwrap();
        for f in &self.frames {
            writeln!(
                s,
                "frame {} t {:.6} points {} static {} dynamic {} out_of_bound {} boxes {} map_version {}",
                f.index,
                f.timestamp,
                f.points,
                f.static_count,
                f.dynamic_indices.len(),
                f.out_of_bound,
                f.boxes.len(),
                f.map_version_read
            )
            .unwrap();
        }
        for v in &self.map_versions {
            writeln!(s, "version {} frame {} submaps {} voxels {}", v.version, v.frame, v.submaps, v.voxels).unwrap();
        }
        for (i, sm) in self.submaps.iter().enumerate() {
            let p = sm.origin.position();
            writeln!(
                s,
                "submap {i} origin {:.6} {:.6} {:.6} scans {} voxels {} occupied {}",
                p.x,
                p.y,
                p.z,
                sm.scan_seqs.len(),
                sm.counters.len(),
                sm.occupied().len()
            )
            .unwrap();
        }
        s
    }

    pub fn timing_text(&self) -> String {
        let t = &self.timings;
        let mut s = String::new();
        writeln!(s, "total_ms {:.3}", t.total_ms).unwrap();
        writeln!(s, "mean_front_end_ms {:.3}", t.mean_front_end_ms()).unwrap();
        writeln!(s, "mean_back_end_ms {:.3}", t.mean_back_end_ms()).unwrap();
        for (i, (fe, be)) in t.front_end_ms.iter().zip(&t.back_end_ms).enumerate() {
            writeln!(s, "frame {i} front_end_ms {fe:.3} back_end_ms {be:.3}").unwrap();
        }
        s
    }
}

/// Front-end output handed to the mapping stage.
struct Handoff {
    timestamp: f64,
    pose: PoseSE3,
    points: Arc<Vec<crate::geometry::Point3>>,
}

/// The mapping side of one run, shared by both executions.
struct Mapper {
    mode: Mode,
    back_end: Option<BackEnd>,
    stacked: VoxelMap,
    stacked_version: u64,
    published: Arc<GlobalStaticMap>,
}

impl Mapper {
    fn new(config: &PipelineConfig) -> Result<Self> {
        let back_end = match config.mode {
            Mode::FrontEndOnly => None,
            m => Some(BackEnd::new(m.back_end_params(&config.back_end))?),
        };
        Ok(Mapper {
            mode: config.mode,
            back_end,
            stacked: VoxelMap::new(config.back_end.map_resolution)?,
            stacked_version: 0,
            published: Arc::new(GlobalStaticMap::empty(config.back_end.map_resolution)),
        })
    }

    /// Consumes one handoff; returns the back-end time and whether a new
    /// version was published.
    fn consume(&mut self, h: Handoff) -> Result<(f64, bool)> {
        let started = Instant::now();
        let published = match self.back_end.as_mut() {
            Some(be) => {
                be.push_scan(h.timestamp, h.pose, h.points)?;
                let changed = be.iterate(&h.pose)?;
                if changed {
                    self.published = be.published();
                }
                changed
            }
            None => {
                for p in h.points.iter() {
                    self.stacked.insert_point(p);
                }
                self.stacked_version += 1;
                self.published = Arc::new(GlobalStaticMap {
                    submaps: Vec::new(),
                    merged: self.stacked.clone(),
                    version: self.stacked_version,
                });
                true
            }
        };
        let ms = if self.mode == Mode::FrontEndOnly { 0.0 } else { started.elapsed().as_secs_f64() * 1e3 };
        Ok((ms, published))
    }

    fn submaps(&self) -> Vec<Arc<OccupancySubmap>> {
        self.back_end.as_ref().map(|b| b.submaps()).unwrap_or_default()
    }
}

/// Per-scan front-end work; returns the summary and the handoff.
fn detect(
    front_end: Option<&mut FrontEnd>,
    index: usize,
    frame: &PosedScan,
    map: &GlobalStaticMap,
    tracks: &mut Vec<TrackRecord>,
) -> Result<(FrameSummary, Handoff, f64)> {
    let scan = &frame.scan;
    match front_end {
        Some(fe) => {
            let out = fe.step(scan, &frame.pose, &map.merged)?;
            for b in &out.boxes {
                tracks.push(TrackRecord { frame: index as u32, id: b.id as u32, bbox: b.bbox });
            }
            let points = Arc::new(out.static_points());
            let summary = FrameSummary {
                index,
                timestamp: scan.timestamp,
                points: scan.len(),
                static_count: out.static_indices.len(),
                dynamic_indices: out.dynamic.iter().map(|&(i, _)| i as u32).collect(),
                out_of_bound: out.out_of_bound,
                boxes: out.boxes.clone(),
                map_version_read: map.version,
            };
            Ok((summary, Handoff { timestamp: scan.timestamp, pose: frame.pose, points }, out.elapsed_ms))
        }
        None => {
            if !frame.pose.is_valid() {
                return Err(Error::InvalidPose(format!("scan {index} has an invalid pose")));
            }
            crate::geometry::check_finite(&scan.points)?;
            let points = Arc::new(scan.points.iter().map(|p| frame.pose.apply(p)).collect());
            let summary = FrameSummary {
                index,
                timestamp: scan.timestamp,
                points: scan.len(),
                static_count: scan.len(),
                dynamic_indices: Vec::new(),
                out_of_bound: 0,
                boxes: Vec::new(),
                map_version_read: map.version,
            };
            Ok((summary, Handoff { timestamp: scan.timestamp, pose: frame.pose, points }, 0.0))
        }
    }
}

fn check_order(frames: &[PosedScan]) -> Result<()> {
    for (i, w) in frames.windows(2).enumerate() {
        if w[1].scan.timestamp <= w[0].scan.timestamp {
            return Err(Error::OutOfOrder { index: i + 1 });
        }
    }
    Ok(())
}

pub fn run_sequence(frames: &[PosedScan], config: &PipelineConfig) -> Result<RunReport> {
    config.front_end.validate()?;
    config.back_end.validate()?;
    check_order(frames)?;
    let started = Instant::now();
    let mut report = RunReport {
        mode: config.mode,
        frames: Vec::with_capacity(frames.len()),
        map_versions: Vec::new(),
        submaps: Vec::new(),
        final_map: None,
        tracks: Vec::new(),
        timings: StageTimings::default(),
    };
    let mut front_end = if config.mode.runs_front_end() { Some(FrontEnd::new(config.front_end.clone())?) } else { None };
    let mut mapper = Mapper::new(config)?;

    match config.execution {
        Execution::Interleaved => {
            for (i, f) in frames.iter().enumerate() {
                let map = mapper.published.clone();
                let (summary, handoff, fe_ms) = detect(front_end.as_mut(), i, f, &map, &mut report.tracks)?;
                let (be_ms, changed) = mapper.consume(handoff)?;
                record(&mut report, summary, fe_ms, be_ms, changed.then(|| mapper.published.clone()), i);
            }
        }
        Execution::TwoWorker => {
            let (to_mapper, inbox) = mpsc::channel::<Handoff>();
            let (reply, replies) = mpsc::channel::<Result<(f64, bool, Arc<GlobalStaticMap>)>>();
            let mapper_ref = &mut mapper;
            std::thread::scope(|scope| -> Result<()> {
                scope.spawn(move || {
                    for h in inbox {
                        let r = mapper_ref.consume(h).map(|(ms, changed)| (ms, changed, mapper_ref.published.clone()));
                        let failed = r.is_err();
                        if reply.send(r).is_err() || failed {
                            break;
                        }
                    }
                });
                let mut map = Arc::new(GlobalStaticMap::empty(config.back_end.map_resolution));
                let result = (|| {
                    for (i, f) in frames.iter().enumerate() {
                        let (summary, handoff, fe_ms) = detect(front_end.as_mut(), i, f, &map, &mut report.tracks)?;
                        to_mapper.send(handoff).map_err(|_| Error::config("mapping worker stopped"))?;
                        // lockstep: the next scan reads the map this scan produced
                        let (be_ms, changed, latest) =
                            replies.recv().map_err(|_| Error::config("mapping worker stopped"))??;
                        map = latest;
                        record(&mut report, summary, fe_ms, be_ms, changed.then(|| map.clone()), i);
                    }
                    Ok(())
                })();
                drop(to_mapper);
                result
            })?;
        }
    }

    if !frames.is_empty() {
        report.final_map = Some(mapper.published.merged.clone());
    }
    report.submaps = mapper.submaps();
    report.timings.total_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

fn record(
    report: &mut RunReport,
    summary: FrameSummary,
    fe_ms: f64,
    be_ms: f64,
    published: Option<Arc<GlobalStaticMap>>,
    frame: usize,
) {
    report.frames.push(summary);
    report.timings.front_end_ms.push(fe_ms);
    report.timings.back_end_ms.push(be_ms);
    if let Some(m) = published {
        report.map_versions.push(MapVersionRecord {
            version: m.version,
            frame,
            submaps: m.submaps.len(),
            voxels: m.merged.len(),
        });
    }
}

/// Per-scan voxel sets from labels: static = voxels holding a static
/// point, dynamic = voxels holding only dynamic points.
fn labeled_voxels<'a>(
    points: impl Iterator<Item = (crate::geometry::Point3, Label)> + 'a,
    resolution: f64,
) -> (VoxelMap, VoxelMap) {
    let mut s = VoxelMap::new(resolution).expect("valid resolution");
    let mut d = VoxelMap::new(resolution).expect("valid resolution");
    for (p, l) in points {
        match l {
            Label::Static => s.insert_point(&p),
            Label::Dynamic => d.insert_point(&p),
        };
    }
    let d = VoxelMap::from_keys(resolution, d.iter().copied().filter(|k| !s.contains(k))).expect("valid resolution");
    (s, d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePoint {
    pub frame: usize,
    pub timestamp: f64,
    pub score: MapScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmapPoint {
    pub submap: usize,
    /// Timestamp of the scan at which the query pose was chosen.
    pub timestamp: f64,
    pub score: MapScore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub front_end: Vec<FramePoint>,
    pub back_end: Vec<SubmapPoint>,
}

/// Radius around each query pose used for the back-end series.
pub const SUBMAP_EVAL_RADIUS: f64 = 6.0;

/// Front-end static-scan PR/RR per frame and back-end PR/RR per submap
/// (within [`SUBMAP_EVAL_RADIUS`] of its query pose), at the map
/// resolution. Fails when any frame lacks labels.
pub fn snapshot_metrics_over_time(report: &RunReport, frames: &[PosedScan], resolution: f64) -> Result<MetricSeries> {
    if report.frames.len() != frames.len() {
        return Err(Error::config("report and ground-truth frame counts differ"));
    }
    let labels_of = |i: usize| -> Result<&Vec<Label>> {
        frames[i].scan.labels.as_ref().ok_or_else(|| Error::config(format!("frame {i} carries no labels; series unavailable")))
    };
    let mut front_end = Vec::with_capacity(frames.len());
    for (i, (f, summary)) in frames.iter().zip(&report.frames).enumerate() {
        let labels = labels_of(i)?;
        let world: Vec<_> = f.scan.points.iter().map(|p| f.pose.apply(p)).collect();
        let (gt_s, gt_d) = labeled_voxels(world.iter().copied().zip(labels.iter().copied()), resolution);
        let dynamic: FxHashSet<u32> = summary.dynamic_indices.iter().copied().collect();
        let est = VoxelMap::from_points(
            resolution,
            world.iter().enumerate().filter(|(j, _)| !dynamic.contains(&(*j as u32))).map(|(_, p)| p),
        )?;
        front_end.push(FramePoint { frame: i, timestamp: f.scan.timestamp, score: score_map(&est, &gt_s, &gt_d)? });
    }

    let mut back_end = Vec::with_capacity(report.submaps.len());
    for (k, sm) in report.submaps.iter().enumerate() {
        let origin = sm.origin.position();
        let near = |key: &VoxelKey| (key.center(resolution) - origin).norm() < SUBMAP_EVAL_RADIUS;
        let mut pts = Vec::new();
        for &seq in &sm.scan_seqs {
            let i = seq as usize;
            let labels = labels_of(i)?;
            let f = &frames[i];
            pts.extend(f.scan.points.iter().map(|p| f.pose.apply(p)).zip(labels.iter().copied()));
        }
        let (gt_s, gt_d) = labeled_voxels(pts.into_iter(), resolution);
        let restrict = |m: &VoxelMap| VoxelMap::from_keys(resolution, m.iter().copied().filter(&near)).expect("valid");
        let est = VoxelMap::from_keys(resolution, sm.occupied().iter().copied().filter(&near))?;
        let query_time = frames.get(sm.query_seq as usize).map_or(0.0, |f| f.scan.timestamp);
        back_end.push(SubmapPoint {
            submap: k,
            timestamp: query_time,
            score: score_map(&est, &restrict(&gt_s), &restrict(&gt_d))?,
        });
    }
    Ok(MetricSeries { front_end, back_end })
}

/// Scans with their poses, for callers holding the two separately.
pub fn pair_frames(scans: Vec<LabeledScan>, poses: Vec<PoseSE3>) -> Result<Vec<PosedScan>> {
    if scans.len() != poses.len() {
        return Err(Error::config(format!("{} scans but {} poses", scans.len(), poses.len())));
    }
    Ok(scans.into_iter().zip(poses).map(|(scan, pose)| PosedScan { scan, pose }).collect())
}
