//! Synthetic corridor world and a ray-casting LiDAR.
//!
//! The world is a ground plane at `z = 0`, four axis-aligned wall boxes
//! enclosing a `length × width` corridor, and a set of box-shaped agents
//! walking back and forth along the corridor axis at constant speed. Every
//! quantity is a deterministic function of the configuration (including the
//! seed) and the query time.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{Label, LabeledScan, Point3, PoseSE3, RangeImageConfig};
use crate::voxel_map::VoxelMap;

/// Fixed sensor rate.
pub const SCAN_RATE_HZ: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub corridor_length: f64,
    pub corridor_width: f64,
    pub wall_height: f64,
    pub wall_thickness: f64,
    pub agent_count: usize,
    pub agent_speed_min: f64,
    pub agent_speed_max: f64,
    /// Agent box extent `(w, d, h)` along `(x, y, z)`.
    pub agent_size: [f64; 3],
    /// Half-width of the band around `y = 0` kept free of agent lanes so the
    /// sensor never sits inside an agent.
    pub lane_clearance: f64,
    /// Minimum gap between an agent lane and a side wall.
    pub wall_margin: f64,
    /// Minimum gap between an agent's turnaround point and an end wall.
    pub end_margin: f64,
    pub sensor_height: f64,
    /// Planar polyline followed by the sensor at `robot_speed`.
    pub path_waypoints: Vec<[f64; 2]>,
    pub robot_speed: f64,
    pub scan_count: usize,
    pub beam_rows: usize,
    pub beam_cols: usize,
    pub beam_v_fov_deg: [f64; 2],
    pub beam_h_fov_deg: [f64; 2],
    pub max_range: f64,
    /// Standard deviation of additive range noise; 0 disables noise.
    pub range_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let beams = RangeImageConfig::default();
        SceneConfig {
            corridor_length: 20.0,
            corridor_width: 10.0,
            wall_height: 4.0,
            wall_thickness: 0.2,
            agent_count: 15,
            agent_speed_min: 1.2,
            agent_speed_max: 1.8,
            agent_size: [0.5, 0.5, 1.8],
            lane_clearance: 0.8,
            wall_margin: 1.25,
            end_margin: 3.0,
            sensor_height: 1.0,
            path_waypoints: vec![[2.5, 0.0], [17.5, 0.0]],
            robot_speed: 0.5,
            scan_count: 300,
            beam_rows: beams.rows,
            beam_cols: beams.cols,
            beam_v_fov_deg: [beams.v_fov.0.to_degrees(), beams.v_fov.1.to_degrees()],
            beam_h_fov_deg: [beams.h_fov.0.to_degrees(), beams.h_fov.1.to_degrees()],
            max_range: 50.0,
            range_noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SceneConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("scene config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn beam_config(&self) -> RangeImageConfig {
        RangeImageConfig {
            rows: self.beam_rows,
            cols: self.beam_cols,
            v_fov: (self.beam_v_fov_deg[0].to_radians(), self.beam_v_fov_deg[1].to_radians()),
            h_fov: (self.beam_h_fov_deg[0].to_radians(), self.beam_h_fov_deg[1].to_radians()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("corridor_length", self.corridor_length),
            ("corridor_width", self.corridor_width),
            ("wall_height", self.wall_height),
            ("wall_thickness", self.wall_thickness),
            ("agent_speed_min", self.agent_speed_min),
            ("agent_speed_max", self.agent_speed_max),
            ("agent_size.w", self.agent_size[0]),
            ("agent_size.d", self.agent_size[1]),
            ("agent_size.h", self.agent_size[2]),
            ("sensor_height", self.sensor_height),
            ("max_range", self.max_range),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.agent_speed_min > self.agent_speed_max {
            return Err(Error::config("agent_speed_min exceeds agent_speed_max"));
        }
        if !(self.robot_speed >= 0.0) || !(self.range_noise_sigma >= 0.0) {
            return Err(Error::config("robot_speed and range_noise_sigma must be non-negative"));
        }
        if self.path_waypoints.is_empty() {
            return Err(Error::config("sensor path needs at least one waypoint"));
        }
        let half_w = self.corridor_width / 2.0;
        for w in &self.path_waypoints {
            if !(0.0..=self.corridor_length).contains(&w[0]) || w[1].abs() > half_w {
                return Err(Error::config(format!("waypoint {w:?} lies outside the corridor")));
            }
        }
        if self.sensor_height >= self.wall_height {
            log::warn!("sensor above the walls: upward beams will mostly miss");
        }
        self.beam_config().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        Aabb { min, max }
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }

    /// Slab test; entry distance along `dir` if the ray starts outside and
    /// hits, `None` otherwise.
    #[inline]
    pub fn ray_entry(&self, origin: &Point3, inv_dir: &Vector3<f64>) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            let t1 = (self.min[i] - origin[i]) * inv_dir[i];
            let t2 = (self.max[i] - origin[i]) * inv_dir[i];
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            // NaN arises from 0 * inf when the ray lies in a slab plane
            if lo.is_nan() || hi.is_nan() {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            t_near = t_near.max(lo);
            t_far = t_far.min(hi);
        }
        (t_near <= t_far && t_near > 0.0).then_some(t_near)
    }
}

/// A walking agent: a box shuttling between `x_min` and `x_max` in lane `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: u32,
    pub lane_y: f64,
    pub x_min: f64,
    pub x_max: f64,
    /// Arc-length phase along the out-and-back loop at `t = 0`.
    pub phase: f64,
    pub speed: f64,
    pub size: [f64; 3],
}

impl Agent {
    fn loop_length(&self) -> f64 {
        2.0 * (self.x_max - self.x_min)
    }

    pub fn center_x(&self, t: f64) -> f64 {
        let span = self.x_max - self.x_min;
        if span <= 0.0 {
            return self.x_min;
        }
        let s = (self.phase + self.speed * t).rem_euclid(self.loop_length());
        if s < span {
            self.x_min + s
        } else {
            self.x_max - (s - span)
        }
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        let span = self.x_max - self.x_min;
        let s = (self.phase + self.speed * t).rem_euclid(self.loop_length());
        let dir = if s < span { 1.0 } else { -1.0 };
        Vector3::new(dir * self.speed, 0.0, 0.0)
    }

    pub fn bounds(&self, t: f64) -> Aabb {
        let cx = self.center_x(t);
        let [w, d, h] = self.size;
        Aabb::new(
            Point3::new(cx - w / 2.0, self.lane_y - d / 2.0, 0.0),
            Point3::new(cx + w / 2.0, self.lane_y + d / 2.0, h),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub walls: Vec<Aabb>,
    pub agents: Vec<Agent>,
}

/// What a ray struck.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Ground,
    Wall(usize),
    Agent(u32),
}

pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let l = config.corridor_length;
    let half_w = config.corridor_width / 2.0;
    let th = config.wall_thickness;
    let h = config.wall_height;
    let walls = vec![
        Aabb::new(Point3::new(-th, -half_w - th, 0.0), Point3::new(l + th, -half_w, h)),
        Aabb::new(Point3::new(-th, half_w, 0.0), Point3::new(l + th, half_w + th, h)),
        Aabb::new(Point3::new(-th, -half_w, 0.0), Point3::new(0.0, half_w, h)),
        Aabb::new(Point3::new(l, -half_w, 0.0), Point3::new(l + th, half_w, h)),
    ];

    let [aw, ad, _] = config.agent_size;
    let lane_lo = config.lane_clearance + ad / 2.0;
    let lane_hi = half_w - config.wall_margin;
    let x_min = config.end_margin;
    let x_max = l - config.end_margin;
    if config.agent_count > 0 && (lane_lo > lane_hi || x_min > x_max) {
        return Err(Error::config("corridor too narrow for agent lanes"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agents: Vec<Agent> = Vec::with_capacity(config.agent_count);
    const ATTEMPTS: usize = 1000;
    for id in 0..config.agent_count {
        let mut placed = None;
        for _ in 0..ATTEMPTS {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let lane_y = side * rng.random_range(lane_lo..=lane_hi);
            let speed = rng.random_range(config.agent_speed_min..=config.agent_speed_max);
            let loop_len = 2.0 * (x_max - x_min);
            let phase = if loop_len > 0.0 { rng.random_range(0.0..loop_len) } else { 0.0 };
            let cand = Agent {
                id: id as u32,
                lane_y,
                x_min,
                x_max,
                phase,
                speed,
                size: config.agent_size,
            };
            let b = cand.bounds(0.0);
            if agents.iter().all(|a| !a.bounds(0.0).overlaps(&b)) {
                placed = Some(cand);
                break;
            }
        }
        match placed {
            Some(a) => agents.push(a),
            None => {
                return Err(Error::config(format!(
                    "could not place agent {id} of {} without overlap (footprint {aw}×{ad} m)",
                    config.agent_count
                )))
            }
        }
    }
    Ok(Scene { config: config.clone(), walls, agents })
}

impl Scene {
    pub fn scan_count(&self) -> usize {
        self.config.scan_count
    }

    pub fn scan_time(&self, index: usize) -> f64 {
        index as f64 / SCAN_RATE_HZ
    }

    /// Sensor pose at time `t`: constant speed along the waypoint polyline,
    /// heading along the current segment, parked at the last waypoint.
    pub fn sensor_pose(&self, t: f64) -> PoseSE3 {
        let wps = &self.config.path_waypoints;
        let z = self.config.sensor_height;
        let mut remaining = self.config.robot_speed * t.max(0.0);
        let mut yaw = 0.0;
        for seg in wps.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if len == 0.0 {
                continue;
            }
            yaw = (b[1] - a[1]).atan2(b[0] - a[0]);
            if remaining <= len {
                let f = remaining / len;
                return PoseSE3::from_xyz_yaw(
                    a[0] + f * (b[0] - a[0]),
                    a[1] + f * (b[1] - a[1]),
                    z,
                    yaw,
                );
            }
            remaining -= len;
        }
        let last = wps[wps.len() - 1];
        PoseSE3::from_xyz_yaw(last[0], last[1], z, yaw)
    }

    /// Nearest surface hit along a world-frame ray with unit `dir`.
    pub fn cast_ray(&self, origin: &Point3, dir: &Vector3<f64>, t: f64) -> Option<(f64, Surface)> {
        let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<(f64, Surface)> = None;
        let mut consider = |dist: f64, s: Surface| {
            if dist <= self.config.max_range && best.is_none_or(|(b, _)| dist < b) {
                best = Some((dist, s));
            }
        };
        if dir.z < 0.0 && origin.z > 0.0 {
            consider(-origin.z / dir.z, Surface::Ground);
        }
        for (i, w) in self.walls.iter().enumerate() {
            if let Some(d) = w.ray_entry(origin, &inv) {
                consider(d, Surface::Wall(i));
            }
        }
        for a in &self.agents {
            if let Some(d) = a.bounds(t).ray_entry(origin, &inv) {
                consider(d, Surface::Agent(a.id));
            }
        }
        best
    }

    /// One ray per pixel center of the beam geometry. Returns the labeled
    /// scan and, per point, the surface that produced it.
    pub fn simulate_scan_with_surfaces(
        &self,
        pose: &PoseSE3,
        t: f64,
    ) -> (LabeledScan, Vec<Surface>) {
        let beams = self.config.beam_config();
        let rot = pose.rotation_matrix();
        let origin = pose.position();
        let mut noise = (self.config.range_noise_sigma > 0.0).then(|| {
            let frame = (t * SCAN_RATE_HZ).round() as u64;
            let rng = ChaCha8Rng::seed_from_u64(
                self.config.seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(frame + 1),
            );
            (rng, Normal::new(0.0, self.config.range_noise_sigma).expect("sigma validated"))
        });
        let mut points = Vec::with_capacity(beams.rows * beams.cols);
        let mut labels = Vec::with_capacity(beams.rows * beams.cols);
        let mut surfaces = Vec::with_capacity(beams.rows * beams.cols);
        for row in 0..beams.rows {
            for col in 0..beams.cols {
                let local_dir = beams.pixel_direction(row, col);
                let world_dir = rot * local_dir;
                if let Some((mut dist, surface)) = self.cast_ray(&origin, &world_dir, t) {
                    if let Some((rng, normal)) = noise.as_mut() {
                        dist = (dist + normal.sample(rng)).max(1e-3);
                    }
                    points.push(Point3::from(local_dir * dist));
                    labels.push(match surface {
                        Surface::Agent(_) => Label::Dynamic,
                        _ => Label::Static,
                    });
                    surfaces.push(surface);
                }
            }
        }
        let scan = LabeledScan { timestamp: t, points, labels: Some(labels) };
        (scan, surfaces)
    }
}

pub fn simulate_scan(scene: &Scene, sensor_pose: &PoseSE3, t: f64) -> LabeledScan {
    scene.simulate_scan_with_surfaces(sensor_pose, t).0
}

/// A pose-stamped labeled scan.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedScan {
    pub scan: LabeledScan,
    pub pose: PoseSE3,
}

/// Simulated scans plus the agent hit counts needed for tracking ground
/// truth.
#[derive(Debug, Clone)]
pub struct SimulatedRun {
    pub frames: Vec<PosedScan>,
    /// Per frame: `(agent id, number of returned points on it)`.
    pub agent_hits: Vec<Vec<(u32, usize)>>,
}

pub fn simulate_run(scene: &Scene) -> SimulatedRun {
    let mut frames = Vec::with_capacity(scene.scan_count());
    let mut agent_hits = Vec::with_capacity(scene.scan_count());
    for i in 0..scene.scan_count() {
        let t = scene.scan_time(i);
        let pose = scene.sensor_pose(t);
        let (scan, surfaces) = scene.simulate_scan_with_surfaces(&pose, t);
        let mut counts = vec![0usize; scene.agents.len()];
        for s in &surfaces {
            if let Surface::Agent(id) = s {
                counts[*id as usize] += 1;
            }
        }
        agent_hits.push(
            counts.into_iter().enumerate().filter(|(_, c)| *c > 0).map(|(i, c)| (i as u32, c)).collect(),
        );
        frames.push(PosedScan { scan, pose });
    }
    SimulatedRun { frames, agent_hits }
}

/// Voxel-level ground truth accumulated from labeled scans.
#[derive(Debug, Clone)]
pub struct GroundTruthMaps {
    pub static_map: VoxelMap,
    pub dynamic_map: VoxelMap,
}

/// Static = voxels holding any static-labeled point; dynamic = voxels
/// holding dynamic-labeled points and no static ones.
pub fn ground_truth_from_frames(frames: &[PosedScan], resolution: f64) -> Result<GroundTruthMaps> {
    let mut stat = VoxelMap::new(resolution)?;
    let mut dyn_any = VoxelMap::new(resolution)?;
    for f in frames {
        let labels = f.scan.labels.as_ref().ok_or_else(|| {
            Error::config(format!("scan at t={} carries no labels", f.scan.timestamp))
        })?;
        for (p, l) in f.scan.points.iter().zip(labels) {
            let w = f.pose.apply(p);
            match l {
                Label::Static => stat.insert_point(&w),
                Label::Dynamic => dyn_any.insert_point(&w),
            };
        }
    }
    let dynamic_map =
        VoxelMap::from_keys(resolution, dyn_any.iter().copied().filter(|k| !stat.contains(k)))?;
    Ok(GroundTruthMaps { static_map: stat, dynamic_map })
}

pub fn ground_truth_maps(scene: &Scene, resolution: f64) -> Result<GroundTruthMaps> {
    ground_truth_from_frames(&simulate_run(scene).frames, resolution)
}

/// Fraction of all returned points that are labeled dynamic.
pub fn dynamic_point_fraction(frames: &[PosedScan]) -> f64 {
    let (mut dynamic, mut total) = (0usize, 0usize);
    for f in frames {
        if let Some(labels) = &f.scan.labels {
            dynamic += labels.iter().filter(|l| **l == Label::Dynamic).count();
            total += labels.len();
        }
    }
    if total == 0 {
        0.0
    } else {
        dynamic as f64 / total as f64
    }
}

/// Ground-truth agent boxes for frames where the agent returned at least
/// `min_points` points.
pub fn ground_truth_tracks(
    scene: &Scene,
    run: &SimulatedRun,
    min_points: usize,
) -> Vec<crate::eval::TrackRecord> {
    let mut out = Vec::new();
    for (frame, hits) in run.agent_hits.iter().enumerate() {
        let t = run.frames[frame].scan.timestamp;
        for &(id, count) in hits {
            if count >= min_points {
                let b = scene.agents[id as usize].bounds(t);
                out.push(crate::eval::TrackRecord {
                    frame: frame as u32,
                    id,
                    bbox: crate::front_end::BoundingBox::new(b.min, b.max),
                });
            }
        }
    }
    out
}
