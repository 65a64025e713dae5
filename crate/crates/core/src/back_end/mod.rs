//! Static scans to occupancy-filtered submaps and the published map.
//!
//! Every scan near a query pose is projected into that pose's frame and
//! turned into a range image. A voxel of the accumulated scans counts as
//! observed-free by scan `i` when its centroid lies closer than `γ` times
//! the range scan `i` recorded along the same pixel; voxels whose
//! occupancy ratio stays above the threshold survive. Submaps are merged
//! by letting the nearest submap decide each voxel.

mod raycast;

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use nalgebra::Vector3;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};
use crate::geometry::{pixel_of, range, voxel_key_unchecked, Point3, PoseSE3, RangeImage, RangeImageConfig, VoxelKey};
use crate::voxel_map::VoxelMap;

pub use raycast::{traverse, traversed_voxels};

/// How `n_free` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeSpaceModel {
    /// Range-image comparison `d < γ·I`.
    Visibility,
    /// Exact voxel traversal of every ray, counted once per scan.
    RayTraversal,
}

/// How counters become an occupied/free decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccupancyRule {
    /// `n_occ / (n_occ + n_free) > occ_threshold`.
    Ratio,
    /// Free as soon as any scan observed it free.
    AnyFree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackEndParams {
    pub r_query: f64,
    pub map_resolution: f64,
    pub gamma: f64,
    pub occ_threshold: f64,
    pub submap_spacing: f64,
    /// Buffered scans required before the first publish.
    pub cold_start_scans: usize,
    /// Binning of the per-scan range images in the query frame.
    pub range_image: RangeImageConfig,
    pub free_space: FreeSpaceModel,
    pub rule: OccupancyRule,
}

impl Default for BackEndParams {
    fn default() -> Self {
        BackEndParams {
            r_query: 5.0,
            map_resolution: 0.2,
            gamma: 0.9,
            occ_threshold: 0.5,
            submap_spacing: 2.0,
            cold_start_scans: 3,
            range_image: RangeImageConfig {
                rows: 128,
                cols: 720,
                v_fov: (-45f64.to_radians(), 19f64.to_radians()),
                h_fov: (-PI, PI),
            },
            free_space: FreeSpaceModel::Visibility,
            rule: OccupancyRule::Ratio,
        }
    }
}

impl BackEndParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r_query", self.r_query),
            ("map_resolution", self.map_resolution),
            ("submap_spacing", self.submap_spacing),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.occ_threshold) {
            return Err(Error::config(format!("occ_threshold must lie in [0, 1), got {}", self.occ_threshold)));
        }
        self.range_image.validate()
    }
}

/// One static scan in the world frame with the pose that produced it.
#[derive(Debug)]
pub struct BufferedScan {
    pub seq: u64,
    pub timestamp: f64,
    pub pose: PoseSE3,
    pub points: Arc<Vec<Point3>>,
    traversal: OnceLock<Arc<Vec<VoxelKey>>>,
}

impl BufferedScan {
    /// Voxels traversed by this scan's rays, computed once.
    pub fn traversal(&self, resolution: f64) -> Arc<Vec<VoxelKey>> {
        self.traversal
            .get_or_init(|| Arc::new(traversed_voxels(&self.pose.position(), &self.points, resolution)))
            .clone()
    }
}

#[derive(Debug, Default)]
pub struct StaticScanBuffer {
    entries: VecDeque<BufferedScan>,
    next_seq: u64,
}

impl StaticScanBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a scan; timestamps must increase.
    pub fn push(&mut self, timestamp: f64, pose: PoseSE3, points: Arc<Vec<Point3>>) -> Result<u64> {
        if let Some(last) = self.entries.back() {
            if timestamp <= last.timestamp {
                return Err(Error::OutOfOrder { index: self.next_seq as usize });
            }
        }
        if !pose.is_valid() {
            return Err(Error::InvalidPose("buffered scan pose is not a rigid transform".into()));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.push_back(BufferedScan { seq, timestamp, pose, points, traversal: OnceLock::new() });
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scans ever pushed.
    pub fn pushed(&self) -> u64 {
        self.next_seq
    }

    pub fn iter(&self) -> impl Iterator<Item = &BufferedScan> {
        self.entries.iter()
    }

    /// Drops entries whose pose lies farther than `radius` from `position`.
    pub fn prune(&mut self, position: &Point3, radius: f64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| (e.pose.position() - position).norm() <= radius);
        before - self.entries.len()
    }

    fn within<'a>(&'a self, query: &'a PoseSE3, r_query: f64) -> impl Iterator<Item = &'a BufferedScan> + 'a {
        let q = query.position();
        self.entries.iter().filter(move |e| (e.pose.position() - q).norm() < r_query)
    }
}

/// A buffered scan expressed in a query frame.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryScan {
    pub seq: u64,
    /// Sensor origin in the query frame.
    pub origin: Point3,
    pub points: Vec<Point3>,
}

/// Entries with `‖p_i − p_Q‖ < R_query`, transformed into the query frame.
pub fn query_scans(buffer: &StaticScanBuffer, query_pose: &PoseSE3, params: &BackEndParams) -> Vec<QueryScan> {
    let to_query = query_pose.inverse();
    buffer
        .within(query_pose, params.r_query)
        .map(|e| QueryScan {
            seq: e.seq,
            origin: to_query.apply(&e.pose.position()),
            points: e.points.iter().map(|p| to_query.apply(p)).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelCounts {
    /// Distinct scans with at least one point in the voxel.
    pub n_occ: u32,
    pub n_free: u32,
    /// Mean of the voxel's points in the world frame.
    pub centroid: Point3,
}

impl VoxelCounts {
    pub fn probability(&self) -> f64 {
        self.n_occ as f64 / (self.n_occ + self.n_free) as f64
    }
}

/// Counters keyed on the world voxel lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySubmap {
    pub origin: PoseSE3,
    pub resolution: f64,
    pub counters: FxHashMap<VoxelKey, VoxelCounts>,
    occupied: FxHashSet<VoxelKey>,
    /// Buffer sequence numbers of the contributing scans, ascending.
    pub scan_seqs: Vec<u64>,
    /// Newest buffered scan when the query pose was chosen.
    pub query_seq: u64,
}

impl OccupancySubmap {
    pub fn is_occupied(&self, key: &VoxelKey) -> bool {
        self.occupied.contains(key)
    }

    pub fn occupied(&self) -> &FxHashSet<VoxelKey> {
        &self.occupied
    }

    pub fn occupied_map(&self) -> VoxelMap {
        VoxelMap::from_keys(self.resolution, self.occupied.iter().copied()).expect("valid resolution")
    }
}

#[derive(Debug, Clone)]
struct VoxelAccum {
    key: VoxelKey,
    n_occ: u32,
    last_scan: u64,
    sum: Vector3<f64>,
    count: u32,
    /// Visibility free count against every image added so far.
    free: u32,
    /// Pixel index and range of the centroid in the query frame.
    probe: Option<(usize, f64)>,
}

impl VoxelAccum {
    fn centroid(&self) -> Point3 {
        Point3::from(self.sum / self.count as f64)
    }
}

/// Incrementally accumulates scans for one query pose.
#[derive(Debug, Clone)]
pub struct SubmapBuilder {
    origin: PoseSE3,
    query_seq: u64,
    to_query: PoseSE3,
    params: BackEndParams,
    seqs: FxHashSet<u64>,
    slots: FxHashMap<VoxelKey, usize>,
    voxels: Vec<VoxelAccum>,
    images: Vec<RangeImage>,
    traversed: FxHashMap<VoxelKey, u32>,
}

impl SubmapBuilder {
    pub fn new(origin: PoseSE3, query_seq: u64, params: BackEndParams) -> Self {
        SubmapBuilder {
            query_seq,
            to_query: origin.inverse(),
            origin,
            params,
            seqs: FxHashSet::default(),
            slots: FxHashMap::default(),
            voxels: Vec::new(),
            images: Vec::new(),
            traversed: FxHashMap::default(),
        }
    }

    pub fn origin(&self) -> &PoseSE3 {
        &self.origin
    }

    pub fn contains_scan(&self, seq: u64) -> bool {
        self.seqs.contains(&seq)
    }

    pub fn scan_count(&self) -> usize {
        self.seqs.len()
    }

    fn probe(&self, centroid: &Point3) -> Option<(usize, f64)> {
        let q = self.to_query.apply(centroid);
        let cfg = &self.params.range_image;
        pixel_of(&q, cfg).map(|(r, c)| (r * cfg.cols + c, range(&q)))
    }

    /// Adds one scan given in the world frame. `traversal` supplies the
    /// scan's traversed voxels when the ray-traversal model is active;
    /// `None` computes them from `sensor`.
    pub fn add_scan(&mut self, seq: u64, sensor: &Point3, world_points: &[Point3], traversal: Option<&[VoxelKey]>) {
        if !self.seqs.insert(seq) {
            return;
        }
        let res = self.params.map_resolution;
        let mut touched = Vec::new();
        for p in world_points {
            let key = voxel_key_unchecked(p, res);
            let slot = *self.slots.entry(key).or_insert_with(|| {
                self.voxels.push(VoxelAccum {
                    key,
                    n_occ: 0,
                    last_scan: u64::MAX,
                    sum: Vector3::zeros(),
                    count: 0,
                    free: 0,
                    probe: None,
                });
                self.voxels.len() - 1
            });
            let acc = &mut self.voxels[slot];
            if acc.last_scan != seq {
                acc.last_scan = seq;
                acc.n_occ += 1;
                touched.push(slot);
            }
            acc.sum += p.coords;
            acc.count += 1;
        }
        match self.params.free_space {
            FreeSpaceModel::Visibility => {
                let mut image = RangeImage::empty(self.params.range_image);
                for p in world_points {
                    image.insert(&self.to_query.apply(p));
                }
                let gamma = self.params.gamma;
                // voxels this scan left alone keep their centroid: one new check each
                for acc in &mut self.voxels {
                    if acc.last_scan == seq {
                        continue;
                    }
                    if let Some((idx, d)) = acc.probe {
                        // NaN (empty pixel) fails the comparison
                        if d < gamma * image.raw(idx) {
                            acc.free += 1;
                        }
                    }
                }
                self.images.push(image);
                // moved centroids are checked again against every image,
                // image-major with probes sorted by pixel for locality
                let mut probes: Vec<(usize, f64, usize)> = Vec::with_capacity(touched.len());
                for slot in touched {
                    let probe = self.probe(&self.voxels[slot].centroid());
                    let acc = &mut self.voxels[slot];
                    acc.probe = probe;
                    acc.free = 0;
                    if let Some((idx, d)) = probe {
                        probes.push((idx, d, slot));
                    }
                }
                probes.sort_unstable_by_key(|&(idx, _, slot)| (idx, slot));
                for image in &self.images {
                    for &(idx, d, slot) in &probes {
                        if d < gamma * image.raw(idx) {
                            self.voxels[slot].free += 1;
                        }
                    }
                }
            }
            FreeSpaceModel::RayTraversal => {
                let owned;
                let keys = match traversal {
                    Some(k) => k,
                    None => {
                        owned = traversed_voxels(sensor, world_points, res);
                        &owned
                    }
                };
                for k in keys {
                    *self.traversed.entry(*k).or_insert(0) += 1;
                }
            }
        }
    }

    /// Counters and the occupancy decision over everything added so far.
    pub fn build(&self) -> OccupancySubmap {
        let p = &self.params;
        let mut counters = FxHashMap::with_capacity_and_hasher(self.voxels.len(), Default::default());
        let mut occupied = FxHashSet::default();
        for a in &self.voxels {
            let n_free = match p.free_space {
                FreeSpaceModel::Visibility => a.free,
                FreeSpaceModel::RayTraversal => self.traversed.get(&a.key).copied().unwrap_or(0),
            };
            let c = VoxelCounts { n_occ: a.n_occ, n_free, centroid: a.centroid() };
            let occ = match p.rule {
                OccupancyRule::Ratio => c.probability() > p.occ_threshold,
                OccupancyRule::AnyFree => c.n_free == 0,
            };
            if occ {
                occupied.insert(a.key);
            }
            counters.insert(a.key, c);
        }
        OccupancySubmap {
            origin: self.origin,
            resolution: p.map_resolution,
            counters,
            occupied,
            query_seq: self.query_seq,
            scan_seqs: {
                let mut v: Vec<u64> = self.seqs.iter().copied().collect();
                v.sort_unstable();
                v
            },
        }
    }
}

/// Submap from scans already expressed in the query frame. Voxel keys are
/// taken on the world lattice.
pub fn build_submap(query_pose: &PoseSE3, scans: &[QueryScan], params: &BackEndParams) -> OccupancySubmap {
    let newest = scans.iter().map(|s| s.seq).max().unwrap_or(0);
    let mut b = SubmapBuilder::new(*query_pose, newest, params.clone());
    for s in scans {
        let world: Vec<Point3> = s.points.iter().map(|p| query_pose.apply(p)).collect();
        b.add_scan(s.seq, &query_pose.apply(&s.origin), &world, None);
    }
    b.build()
}

/// Index of the submap that decides `key`: the one with the nearest origin
/// among those that observed it, ties to the lowest index.
fn deciding_submap(submaps: &[&OccupancySubmap], key: &VoxelKey) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, s) in submaps.iter().enumerate() {
        if !s.counters.contains_key(key) {
            continue;
        }
        let d = (s.origin.position() - key.center(s.resolution)).norm();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

pub fn merge_submaps<'a>(submaps: impl IntoIterator<Item = &'a OccupancySubmap>) -> Result<VoxelMap> {
    let submaps: Vec<&OccupancySubmap> = submaps.into_iter().collect();
    let Some(first) = submaps.first() else {
        return Err(Error::config("merging needs at least one submap"));
    };
    let mut all: FxHashSet<VoxelKey> = FxHashSet::default();
    for s in &submaps {
        all.extend(s.counters.keys().copied());
    }
    let mut out = VoxelMap::new(first.resolution)?;
    for key in all {
        if let Some(i) = deciding_submap(&submaps, &key) {
            if submaps[i].is_occupied(&key) {
                out.insert(key);
            }
        }
    }
    Ok(out)
}

/// `base` with the keys of `changed` decided again. Exact when `changed`
/// is the only submap that differs from those `base` was merged from and
/// its keys are a superset of its previous keys.
fn remerge(base: &VoxelMap, submaps: &[&OccupancySubmap], changed: &OccupancySubmap) -> VoxelMap {
    let mut out = base.clone();
    for key in changed.counters.keys() {
        let occupied = deciding_submap(submaps, key).is_some_and(|i| submaps[i].is_occupied(key));
        if occupied {
            out.insert(*key);
        } else {
            out.remove(key);
        }
    }
    out
}

/// An immutable published map.
#[derive(Debug, Clone)]
pub struct GlobalStaticMap {
    pub submaps: Vec<Arc<OccupancySubmap>>,
    pub merged: VoxelMap,
    pub version: u64,
}

impl GlobalStaticMap {
    pub fn empty(resolution: f64) -> Self {
        GlobalStaticMap {
            submaps: Vec::new(),
            merged: VoxelMap::new(resolution).expect("validated resolution"),
            version: 0,
        }
    }
}

/// Back-end worker state: buffer, submaps and the latest published map.
#[derive(Debug)]
pub struct BackEnd {
    params: BackEndParams,
    buffer: StaticScanBuffer,
    finalized: Vec<Arc<OccupancySubmap>>,
    latest: Option<SubmapBuilder>,
    latest_built: Option<Arc<OccupancySubmap>>,
    published: Arc<GlobalStaticMap>,
    iteration_ms: Vec<f64>,
}

impl BackEnd {
    pub fn new(params: BackEndParams) -> Result<Self> {
        params.validate()?;
        Ok(BackEnd {
            published: Arc::new(GlobalStaticMap::empty(params.map_resolution)),
            params,
            buffer: StaticScanBuffer::new(),
            finalized: Vec::new(),
            latest: None,
            latest_built: None,
            iteration_ms: Vec::new(),
        })
    }

    pub fn params(&self) -> &BackEndParams {
        &self.params
    }

    pub fn buffer(&self) -> &StaticScanBuffer {
        &self.buffer
    }

    pub fn push_scan(&mut self, timestamp: f64, pose: PoseSE3, world_points: Arc<Vec<Point3>>) -> Result<u64> {
        self.buffer.push(timestamp, pose, world_points)
    }

    pub fn published(&self) -> Arc<GlobalStaticMap> {
        self.published.clone()
    }

    /// Wall-clock duration of every iteration that did work.
    pub fn iteration_ms(&self) -> &[f64] {
        &self.iteration_ms
    }

    /// All submaps, finalized first then the one being extended.
    pub fn submaps(&self) -> Vec<Arc<OccupancySubmap>> {
        let mut v = self.finalized.clone();
        v.extend(self.latest_built.clone());
        v
    }

    fn feed(&mut self, builder_is_new: bool) -> bool {
        let Some(builder) = self.latest.as_mut() else { return false };
        let origin = *builder.origin();
        let res = self.params.map_resolution;
        let ray = self.params.free_space == FreeSpaceModel::RayTraversal;
        let mut added = false;
        for e in self.buffer.within(&origin, self.params.r_query) {
            if builder.contains_scan(e.seq) {
                continue;
            }
            let traversal = ray.then(|| e.traversal(res));
            builder.add_scan(e.seq, &e.pose.position(), &e.points, traversal.as_deref().map(|v| v.as_slice()));
            added = true;
        }
        added || builder_is_new
    }

    /// One back-end iteration at the robot's current pose; returns whether
    /// a new map version was published.
    pub fn iterate(&mut self, current_pose: &PoseSE3) -> Result<bool> {
        if !current_pose.is_valid() {
            return Err(Error::InvalidPose("back-end iteration rejected an invalid pose".into()));
        }
        if self.buffer.len() < self.params.cold_start_scans.max(1) && self.latest.is_none() {
            return Ok(false);
        }
        let started = Instant::now();
        let traveled = self
            .latest
            .as_ref()
            .map(|b| (b.origin().position() - current_pose.position()).norm());
        // 1e-9 absorbs the rounding of positions accumulated along a path
        let new_submap = traveled.is_none_or(|d| d >= self.params.submap_spacing - 1e-9);
        if new_submap {
            if let Some(done) = self.latest_built.take() {
                self.finalized.push(done);
            }
            self.buffer.prune(&current_pose.position(), 2.0 * self.params.r_query);
            let newest = self.buffer.pushed().saturating_sub(1);
            self.latest = Some(SubmapBuilder::new(*current_pose, newest, self.params.clone()));
        }
        if !self.feed(new_submap) {
            return Ok(false);
        }
        let builder = self.latest.as_ref().expect("latest submap exists");
        if builder.scan_count() == 0 {
            return Ok(false);
        }
        let built = Arc::new(builder.build());
        self.latest_built = Some(built.clone());
        let submaps = self.submaps();
        let refs: Vec<&OccupancySubmap> = submaps.iter().map(|s| s.as_ref()).collect();
        let merged = remerge(&self.published.merged, &refs, &built);
        self.published = Arc::new(GlobalStaticMap { submaps, merged, version: self.published.version + 1 });
        let ms = started.elapsed().as_secs_f64() * 1e3;
        log::debug!("back-end iteration published version {} in {ms:.1} ms", self.published.version);
        self.iteration_ms.push(ms);
        Ok(true)
    }
}
