//! Per-scan moving-object detection and tracking.
//!
//! Each scan is compared against the latest published static map (background
//! subtraction), the candidate dynamic points are clustered into object
//! hypotheses, hypotheses are associated with existing tracklets, and only
//! tracklets that pass the stability test keep their points dynamic. Stable
//! tracklets that lose their detection are recovered by predicting their box
//! forward and reclaiming the static points inside it.

mod cluster;
mod tracking;

use std::time::Instant;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{horizontal_radius, voxel_key_unchecked, LabeledScan, Point3, PoseSE3};
use crate::sim::SCAN_RATE_HZ;
use crate::voxel_map::VoxelMap;

pub use cluster::{euclidean_clusters, Clustering};
pub use tracking::{
    associate, ekf_predict, ekf_update, stable_check, window_stats, Association,
    ConstantVelocityEkf, HistoryRecord, Tracklet, WindowStats,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FrontEndParams {
    /// Planar radius of the detection area around the sensor.
    pub r_bound: f64,
    pub bs_resolution: f64,
    pub cluster_dist: f64,
    pub cluster_min_points: usize,
    pub assoc_gate: f64,
    /// Length of the stability window in seconds.
    pub t_val: f64,
    pub rho_min: f64,
    pub v_min: f64,
    /// Upper bound on the volume spread over the window, m³.
    pub dv_min: f64,
    pub miss_limit: usize,
    pub meas_sigma: f64,
    pub accel_sigma: f64,
    pub init_velocity_sigma: f64,
    pub scan_rate_hz: f64,
}

impl Default for FrontEndParams {
    fn default() -> Self {
        FrontEndParams {
            r_bound: 20.0,
            bs_resolution: 0.2,
            cluster_dist: 0.5,
            cluster_min_points: 5,
            assoc_gate: 1.0,
            t_val: 1.0,
            rho_min: 0.7,
            v_min: 1.0,
            dv_min: 3.0,
            miss_limit: 3,
            meas_sigma: 0.1,
            accel_sigma: 1.0,
            init_velocity_sigma: 2.0,
            scan_rate_hz: SCAN_RATE_HZ,
        }
    }
}

impl FrontEndParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r_bound", self.r_bound),
            ("bs_resolution", self.bs_resolution),
            ("cluster_dist", self.cluster_dist),
            ("assoc_gate", self.assoc_gate),
            ("t_val", self.t_val),
            ("v_min", self.v_min),
            ("dv_min", self.dv_min),
            ("scan_rate_hz", self.scan_rate_hz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rho_min > 0.0 && self.rho_min <= 1.0) {
            return Err(Error::config(format!("rho_min must lie in (0, 1], got {}", self.rho_min)));
        }
        if self.cluster_min_points == 0 || self.miss_limit == 0 {
            return Err(Error::config("cluster_min_points and miss_limit must be positive"));
        }
        if !(self.meas_sigma >= 0.0 && self.accel_sigma >= 0.0 && self.init_velocity_sigma > 0.0) {
            return Err(Error::config("tracker noise parameters must be non-negative"));
        }
        Ok(())
    }

    /// Number of frames in the stability window, `⌈t_val · rate⌉`.
    pub fn window_len(&self) -> usize {
        ((self.t_val * self.scan_rate_hz) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Axis-aligned box in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point3,
    pub max: Point3,
}

impl BoundingBox {
    pub fn new(min: Point3, max: Point3) -> Self {
        BoundingBox { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Some(BoundingBox::new(lo, hi))
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i] <= self.max[i])
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x.max(0.0) * e.y.max(0.0) * e.z.max(0.0)
    }

    pub fn center(&self) -> Point3 {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn translated(&self, by: &Vector3<f64>) -> Self {
        BoundingBox::new(self.min + by, self.max + by)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }

    pub fn intersection_volume(&self, other: &BoundingBox) -> f64 {
        let lo = self.min.sup(&other.min);
        let hi = self.max.inf(&other.max);
        (0..3).map(|i| (hi[i] - lo[i]).max(0.0)).product()
    }

    /// Axis-aligned volume IoU; two identical degenerate boxes score 1.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_volume(other);
        let union = self.volume() + other.volume() - inter;
        if union > 0.0 {
            (inter / union).clamp(0.0, 1.0)
        } else if self == other {
            1.0
        } else {
            0.0
        }
    }
}

/// World-lattice keys of the published map whose cell centers lie within
/// `r_bound` (planar radius) of the sensor.
///
/// The keys stay on the world lattice rather than being re-voxelized in the
/// sensor frame, so that subtraction compares a scan point against exactly
/// the cells the back end published.
pub fn crop_local_static_map(global_map: &VoxelMap, pose: &PoseSE3, params: &FrontEndParams) -> VoxelMap {
    let to_sensor = pose.inverse();
    let res = global_map.resolution();
    let mut local = VoxelMap::new(params.bs_resolution).expect("validated resolution");
    for key in global_map.iter() {
        let center = key.center(res);
        if horizontal_radius(&to_sensor.apply(&center)) < params.r_bound {
            local.insert_point(&center);
        }
    }
    local
}

/// Per-point outcome of background subtraction, as scan indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Subtraction {
    pub static_init: Vec<usize>,
    pub dynamic_init: Vec<usize>,
    /// Points at or beyond `r_bound`; passed through as static.
    pub out_of_bound: Vec<usize>,
}

/// A point is static when its world voxel is in the local map; with an empty
/// local map every in-bound point is a dynamic candidate.
pub fn background_subtract(
    scan: &LabeledScan,
    pose: &PoseSE3,
    local_map: &VoxelMap,
    params: &FrontEndParams,
) -> Subtraction {
    let mut out = Subtraction::default();
    let res = local_map.resolution();
    for (i, p) in scan.points.iter().enumerate() {
        if horizontal_radius(p) >= params.r_bound {
            out.out_of_bound.push(i);
        } else if !local_map.is_empty() && local_map.contains(&voxel_key_unchecked(&pose.apply(p), res)) {
            out.static_init.push(i);
        } else {
            out.dynamic_init.push(i);
        }
    }
    out
}

/// An object hypothesis: the tight box around one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub bbox: BoundingBox,
    pub centroid: Point3,
    /// Indices into the point slice passed to [`cluster_dynamic`].
    pub members: Vec<usize>,
}

/// Clusters world-frame candidate points; returns the hypotheses and the
/// indices of points in undersized clusters.
pub fn cluster_dynamic(points: &[Point3], params: &FrontEndParams) -> (Vec<Hypothesis>, Vec<usize>) {
    let c = euclidean_clusters(points, params.cluster_dist, params.cluster_min_points);
    let hyps = c
        .clusters
        .into_iter()
        .map(|members| {
            let bbox = BoundingBox::from_points(members.iter().map(|&i| &points[i])).expect("non-empty");
            let sum = members.iter().fold(Vector3::zeros(), |acc, &i| acc + points[i].coords);
            Hypothesis { bbox, centroid: Point3::from(sum / members.len() as f64), members }
        })
        .collect();
    (hyps, c.rejected)
}

/// Outcome of predicting one lost tracklet forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub tracklet_id: u64,
    pub predicted_box: BoundingBox,
    /// Indices into the candidate point slice; empty when not recovered.
    pub reclaimed: Vec<usize>,
}

impl Recovery {
    pub fn recovered(&self) -> bool {
        !self.reclaimed.is_empty()
    }
}

/// Detection by tracking for tracklets that were stable last frame and went
/// unmatched this frame. `motion` is the displacement `v·dt` per tracklet.
/// Candidate points already claimed by an earlier recovery are skipped.
pub fn detect_by_tracking(
    lost: &[(&Tracklet, Vector3<f64>)],
    candidates: &[Point3],
    params: &FrontEndParams,
) -> Vec<Recovery> {
    let mut claimed = vec![false; candidates.len()];
    let mut out = Vec::with_capacity(lost.len());
    for (t, motion) in lost {
        let predicted_box = t.bbox.translated(motion);
        let inside: Vec<usize> = candidates
            .iter()
            .enumerate()
            .filter(|(i, p)| !claimed[*i] && predicted_box.contains(p))
            .map(|(i, _)| i)
            .collect();
        let reclaimed = if inside.len() >= params.cluster_min_points {
            for &i in &inside {
                claimed[i] = true;
            }
            inside
        } else {
            Vec::new()
        };
        out.push(Recovery { tracklet_id: t.id, predicted_box, reclaimed });
    }
    out
}

/// A tracked moving object reported for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedBox {
    pub id: u64,
    pub bbox: BoundingBox,
    pub velocity: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontEndOutput {
    pub timestamp: f64,
    /// Every scan point in the world frame, in scan order.
    pub world_points: Vec<Point3>,
    /// Scan indices classified static, ascending; includes out-of-bound
    /// pass-through points.
    pub static_indices: Vec<usize>,
    /// `(scan index, owning tracklet id)`, ascending by index.
    pub dynamic: Vec<(usize, u64)>,
    pub boxes: Vec<TrackedBox>,
    pub out_of_bound: usize,
    pub elapsed_ms: f64,
}

impl FrontEndOutput {
    pub fn static_points(&self) -> Vec<Point3> {
        self.static_indices.iter().map(|&i| self.world_points[i]).collect()
    }

    pub fn dynamic_points(&self) -> Vec<Point3> {
        self.dynamic.iter().map(|&(i, _)| self.world_points[i]).collect()
    }
}

/// Tracking state carried across scans.
#[derive(Debug, Clone)]
pub struct FrontEnd {
    params: FrontEndParams,
    tracklets: Vec<Tracklet>,
    next_id: u64,
    last_timestamp: Option<f64>,
    frames: usize,
}

impl FrontEnd {
    pub fn new(params: FrontEndParams) -> Result<Self> {
        params.validate()?;
        Ok(FrontEnd { params, tracklets: Vec::new(), next_id: 0, last_timestamp: None, frames: 0 })
    }

    pub fn params(&self) -> &FrontEndParams {
        &self.params
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    /// Runs crop → subtract → cluster → associate → update → stability →
    /// detection by tracking on one scan. On error the state is unchanged.
    pub fn step(&mut self, scan: &LabeledScan, pose: &PoseSE3, published: &VoxelMap) -> Result<FrontEndOutput> {
        let started = Instant::now();
        let params = self.params.clone();
        if !pose.is_valid() {
            return Err(Error::InvalidPose("front-end step rejected an invalid pose".into()));
        }
        crate::geometry::check_finite(&scan.points)?;
        let dt = match self.last_timestamp {
            Some(prev) if scan.timestamp <= prev => return Err(Error::OutOfOrder { index: self.frames }),
            Some(prev) => Some(scan.timestamp - prev),
            None => None,
        };

        let world_points: Vec<Point3> = scan.points.iter().map(|p| pose.apply(p)).collect();
        let local = crop_local_static_map(published, pose, &params);
        let sub = background_subtract(scan, pose, &local, &params);

        let dyn_world: Vec<Point3> = sub.dynamic_init.iter().map(|&i| world_points[i]).collect();
        let (hypotheses, rejected) = cluster_dynamic(&dyn_world, &params);

        // static candidates for detection by tracking: subtraction statics
        // plus members of undersized clusters
        let mut candidates: Vec<usize> = sub.static_init.clone();
        candidates.extend(rejected.iter().map(|&k| sub.dynamic_init[k]));
        candidates.sort_unstable();

        let mut tracklets = self.tracklets.clone();
        let prev_positions: Vec<Point3> = tracklets.iter().map(|t| t.position()).collect();
        let was_stable: Vec<bool> = tracklets.iter().map(|t| t.stable).collect();
        if let Some(dt) = dt {
            for t in tracklets.iter_mut() {
                t.filter.predict(dt, params.accel_sigma);
            }
        }

        let centroids: Vec<Point3> = hypotheses.iter().map(|h| h.centroid).collect();
        let assoc = associate(&centroids, &tracklets, params.assoc_gate);
        let window = params.window_len();

        let mut dynamic: Vec<(usize, u64)> = Vec::new();
        let mut boxes: Vec<TrackedBox> = Vec::new();

        for &(ti, hi) in &assoc.matches {
            let h = &hypotheses[hi];
            let t = &mut tracklets[ti];
            t.filter.update(&h.centroid, params.meas_sigma);
            t.bbox = h.bbox;
            t.push_history(HistoryRecord::hit(h.centroid, h.bbox.volume()), window);
            t.consecutive_misses = 0;
            t.last_update = scan.timestamp;
            t.stable = stable_check(t, &params);
            if t.stable {
                dynamic.extend(h.members.iter().map(|&k| (sub.dynamic_init[k], t.id)));
                boxes.push(TrackedBox { id: t.id, bbox: t.bbox, velocity: t.velocity() });
            }
        }

        // detection by tracking for tracklets stable last frame
        let lost: Vec<usize> = assoc.unmatched_tracklets.iter().copied().filter(|&ti| was_stable[ti]).collect();
        let cand_points: Vec<Point3> = candidates.iter().map(|&i| world_points[i]).collect();
        let lost_refs: Vec<(&Tracklet, Vector3<f64>)> = lost
            .iter()
            .map(|&ti| (&tracklets[ti], tracklets[ti].position() - prev_positions[ti]))
            .collect();
        let recoveries = detect_by_tracking(&lost_refs, &cand_points, &params);
        let mut flipped = vec![false; candidates.len()];
        for (rec, &ti) in recoveries.iter().zip(&lost) {
            let t = &mut tracklets[ti];
            if rec.recovered() {
                let sum = rec.reclaimed.iter().fold(Vector3::zeros(), |acc, &k| acc + cand_points[k].coords);
                let centroid = Point3::from(sum / rec.reclaimed.len() as f64);
                t.filter.update(&centroid, params.meas_sigma);
                t.bbox = rec.predicted_box;
                t.push_history(HistoryRecord::hit(centroid, rec.predicted_box.volume()), window);
                t.consecutive_misses = 0;
                t.last_update = scan.timestamp;
                t.stable = stable_check(t, &params);
                for &k in &rec.reclaimed {
                    flipped[k] = true;
                    dynamic.push((candidates[k], t.id));
                }
                boxes.push(TrackedBox { id: t.id, bbox: t.bbox, velocity: t.velocity() });
            } else {
                t.push_history(HistoryRecord::miss(), window);
                t.consecutive_misses += 1;
                t.stable = stable_check(t, &params);
            }
        }
        for &ti in &assoc.unmatched_tracklets {
            if !was_stable[ti] {
                let t = &mut tracklets[ti];
                t.push_history(HistoryRecord::miss(), window);
                t.consecutive_misses += 1;
                t.stable = false;
            }
        }

        tracklets.retain(|t| t.consecutive_misses < params.miss_limit);
        let mut next_id = self.next_id;
        for &hi in &assoc.unmatched_hypotheses {
            let h = &hypotheses[hi];
            tracklets.push(Tracklet::new(next_id, h.bbox, h.centroid, scan.timestamp, &params));
            next_id += 1;
        }

        dynamic.sort_unstable();
        let mut is_dynamic = vec![false; scan.points.len()];
        for &(i, _) in &dynamic {
            is_dynamic[i] = true;
        }
        let static_indices: Vec<usize> = (0..scan.points.len()).filter(|&i| !is_dynamic[i]).collect();
        boxes.sort_by_key(|b| b.id);

        self.tracklets = tracklets;
        self.next_id = next_id;
        self.last_timestamp = Some(scan.timestamp);
        self.frames += 1;
        Ok(FrontEndOutput {
            timestamp: scan.timestamp,
            world_points,
            static_indices,
            dynamic,
            boxes,
            out_of_bound: sub.out_of_bound.len(),
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}
