//! Constant-velocity Kalman tracking, greedy association, and the stability
//! test that decides whether a tracklet is a genuine moving object.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Matrix3x6, Matrix6, SymmetricEigen, Vector3, Vector6};

use super::{BoundingBox, FrontEndParams};
use crate::geometry::Point3;

/// State `(x, y, z, vx, vy, vz)` with covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantVelocityEkf {
    pub state: Vector6<f64>,
    pub covariance: Matrix6<f64>,
}

impl ConstantVelocityEkf {
    pub fn new(position: Point3, position_sigma: f64, velocity_sigma: f64) -> Self {
        let mut covariance = Matrix6::zeros();
        for i in 0..3 {
            covariance[(i, i)] = position_sigma * position_sigma;
            covariance[(i + 3, i + 3)] = velocity_sigma * velocity_sigma;
        }
        let mut state = Vector6::zeros();
        state.fixed_rows_mut::<3>(0).copy_from(&position.coords);
        ConstantVelocityEkf { state, covariance }
    }

    pub fn position(&self) -> Point3 {
        Point3::from(self.state.fixed_rows::<3>(0).into_owned())
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.state.fixed_rows::<3>(3).into_owned()
    }

    /// `p ← p + v·dt`, `v ← v`, with white-noise acceleration of standard
    /// deviation `accel_sigma`.
    pub fn predict(&mut self, dt: f64, accel_sigma: f64) {
        let mut f = Matrix6::identity();
        for i in 0..3 {
            f[(i, i + 3)] = dt;
        }
        let q = accel_sigma * accel_sigma;
        let (dt2, dt3, dt4) = (dt * dt, dt * dt * dt, dt * dt * dt * dt);
        let mut noise = Matrix6::zeros();
        for i in 0..3 {
            noise[(i, i)] = q * dt4 / 4.0;
            noise[(i, i + 3)] = q * dt3 / 2.0;
            noise[(i + 3, i)] = q * dt3 / 2.0;
            noise[(i + 3, i + 3)] = q * dt2;
        }
        self.state = f * self.state;
        self.covariance = f * self.covariance * f.transpose() + noise;
        self.condition();
    }

    /// Position-only measurement update.
    pub fn update(&mut self, measured: &Point3, meas_sigma: f64) {
        let h = Matrix3x6::new(
            1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
        );
        let r = Matrix3::identity() * (meas_sigma * meas_sigma);
        let innovation = measured.coords - h * self.state;
        let s = h * self.covariance * h.transpose() + r;
        // singular only with zero measurement noise and a collapsed prior
        let s_inv = s.try_inverse().unwrap_or_else(|| {
            s.pseudo_inverse(1e-15).expect("pseudo-inverse of a 3x3 matrix")
        });
        let gain = self.covariance * h.transpose() * s_inv;
        self.state += gain * innovation;
        // Joseph form keeps the covariance symmetric PSD
        let i_kh = Matrix6::identity() - gain * h;
        self.covariance = i_kh * self.covariance * i_kh.transpose() + gain * r * gain.transpose();
        self.condition();
    }

    fn condition(&mut self) {
        self.covariance = (self.covariance + self.covariance.transpose()) * 0.5;
        let eig = SymmetricEigen::new(self.covariance);
        if eig.eigenvalues.iter().any(|&v| v < 0.0) {
            let min = eig.eigenvalues.min();
            if min < -1e-12 {
                log::warn!("tracker covariance lost positive semidefiniteness (λ_min = {min:.3e}); clamping");
            }
            let clamped = eig.eigenvalues.map(|v| v.max(0.0));
            self.covariance =
                eig.eigenvectors * Matrix6::from_diagonal(&clamped) * eig.eigenvectors.transpose();
            self.covariance = (self.covariance + self.covariance.transpose()) * 0.5;
        }
    }
}

/// One frame of a tracklet's validation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub associated: bool,
    pub centroid: Option<Point3>,
    pub volume: Option<f64>,
}

impl HistoryRecord {
    pub fn hit(centroid: Point3, volume: f64) -> Self {
        HistoryRecord { associated: true, centroid: Some(centroid), volume: Some(volume) }
    }

    pub fn miss() -> Self {
        HistoryRecord { associated: false, centroid: None, volume: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: u64,
    pub filter: ConstantVelocityEkf,
    pub bbox: BoundingBox,
    pub history: VecDeque<HistoryRecord>,
    pub consecutive_misses: usize,
    pub stable: bool,
    pub last_update: f64,
}

impl Tracklet {
    pub fn new(id: u64, bbox: BoundingBox, centroid: Point3, t: f64, params: &FrontEndParams) -> Self {
        let mut history = VecDeque::with_capacity(params.window_len());
        history.push_back(HistoryRecord::hit(centroid, bbox.volume()));
        Tracklet {
            id,
            filter: ConstantVelocityEkf::new(centroid, params.meas_sigma, params.init_velocity_sigma),
            bbox,
            history,
            consecutive_misses: 0,
            stable: false,
            last_update: t,
        }
    }

    pub fn position(&self) -> Point3 {
        self.filter.position()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.filter.velocity()
    }

    pub fn push_history(&mut self, record: HistoryRecord, window_len: usize) {
        self.history.push_back(record);
        while self.history.len() > window_len {
            self.history.pop_front();
        }
    }
}

pub fn ekf_predict(tracklet: &Tracklet, dt: f64, params: &FrontEndParams) -> Tracklet {
    let mut out = tracklet.clone();
    out.filter.predict(dt, params.accel_sigma);
    out
}

pub fn ekf_update(tracklet: &Tracklet, measured: &Point3, params: &FrontEndParams) -> Tracklet {
    let mut out = tracklet.clone();
    out.filter.update(measured, params.meas_sigma);
    out
}

/// Window statistics behind [`stable_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub association_rate: f64,
    pub displacement: f64,
    pub speed: f64,
    pub volume_change: f64,
}

pub fn window_stats(tracklet: &Tracklet, params: &FrontEndParams) -> Option<WindowStats> {
    let window = &tracklet.history;
    if window.len() < params.window_len() {
        return None;
    }
    let hits: Vec<&HistoryRecord> = window.iter().filter(|r| r.associated).collect();
    let rho = hits.len() as f64 / window.len() as f64;
    let first = hits.iter().find_map(|r| r.centroid);
    let last = hits.iter().rev().find_map(|r| r.centroid);
    let displacement = match (first, last) {
        (Some(a), Some(b)) => (b - a).norm(),
        _ => 0.0,
    };
    let speed = if rho > 0.0 { displacement / (params.t_val * rho) } else { 0.0 };
    let volumes = hits.iter().filter_map(|r| r.volume);
    let (vmin, vmax) = volumes.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let volume_change = if vmax >= vmin { vmax - vmin } else { 0.0 };
    Some(WindowStats { association_rate: rho, displacement, speed, volume_change })
}

/// `ρ > ρ_min`, `v > v_min` and `ΔV < ΔV_min` over a full window.
pub fn stable_check(tracklet: &Tracklet, params: &FrontEndParams) -> bool {
    match window_stats(tracklet, params) {
        Some(s) => {
            s.association_rate > params.rho_min
                && s.speed > params.v_min
                && s.volume_change < params.dv_min
        }
        None => false,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(tracklet index, hypothesis index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_hypotheses: Vec<usize>,
    pub unmatched_tracklets: Vec<usize>,
}

/// Greedy nearest-neighbour matching on L2 centroid distance within `gate`.
/// Candidate pairs are taken in ascending distance, ties broken by tracklet
/// id and then hypothesis index.
pub fn associate(
    hypothesis_centroids: &[Point3],
    tracklets: &[Tracklet],
    gate: f64,
) -> Association {
    let mut pairs: Vec<(f64, u64, usize, usize)> = Vec::new();
    for (ti, t) in tracklets.iter().enumerate() {
        let pred = t.position();
        for (hi, c) in hypothesis_centroids.iter().enumerate() {
            let d = (c - pred).norm();
            if d <= gate {
                pairs.push((d, t.id, hi, ti));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut t_used = vec![false; tracklets.len()];
    let mut h_used = vec![false; hypothesis_centroids.len()];
    let mut out = Association::default();
    for (_, _, hi, ti) in pairs {
        if !t_used[ti] && !h_used[hi] {
            t_used[ti] = true;
            h_used[hi] = true;
            out.matches.push((ti, hi));
        }
    }
    out.unmatched_hypotheses = (0..hypothesis_centroids.len()).filter(|&i| !h_used[i]).collect();
    out.unmatched_tracklets = (0..tracklets.len()).filter(|&i| !t_used[i]).collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn params() -> FrontEndParams {
        FrontEndParams::default()
    }

    fn unit_box_at(c: Point3) -> BoundingBox {
        BoundingBox::new(c - Vector3::repeat(0.25), c + Vector3::repeat(0.25))
    }

    fn tracklet_at(id: u64, c: Point3) -> Tracklet {
        Tracklet::new(id, unit_box_at(c), c, 0.0, &params())
    }

    #[test]
    fn predict_shifts_by_velocity() {
        let mut f = ConstantVelocityEkf::new(Point3::origin(), 0.1, 1.0);
        f.state[3] = 1.0;
        f.predict(0.1, 1.0);
        assert!((f.position() - Point3::new(0.1, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn noise_free_track_recovers_velocity() {
        let v = Vector3::new(1.2, -0.4, 0.05);
        let p0 = Point3::new(3.0, 1.0, 0.9);
        let mut f = ConstantVelocityEkf::new(p0, 0.0, 2.0);
        for k in 1..=5 {
            f.predict(0.1, 0.0);
            f.update(&(p0 + v * (0.1 * k as f64)), 0.0);
        }
        assert!((f.velocity() - v).norm() < 1e-6, "{}", f.velocity());
    }

    fn mean_noisy_velocity_error(accel_sigma: f64) -> f64 {
        let v = Vector3::new(1.5, 0.3, 0.0);
        let p = params();
        let mut total = 0.0;
        for seed in 0..100 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.05).unwrap();
            let mut sample = |c: Point3| {
                c + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            };
            let p0 = Point3::origin();
            let mut f = ConstantVelocityEkf::new(sample(p0), 0.05, p.init_velocity_sigma);
            for k in 1..=10 {
                f.predict(0.1, accel_sigma);
                f.update(&sample(p0 + v * (0.1 * k as f64)), 0.05);
            }
            total += (f.velocity() - v).norm();
        }
        total / 100.0
    }

    #[test]
    fn noisy_track_velocity_error_small() {
        // the track has no acceleration, so the filter is told so
        let err = mean_noisy_velocity_error(0.1);
        assert!(err < 0.1, "mean velocity error {err}");
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        let p = params();
        let mut f = ConstantVelocityEkf::new(Point3::origin(), 0.1, 2.0);
        for k in 0..50 {
            f.predict(0.1, p.accel_sigma);
            f.update(&Point3::new(0.1 * k as f64, 0.0, 0.0), 1e-4);
            assert!((f.covariance - f.covariance.transpose()).abs().max() < 1e-12);
            assert!(SymmetricEigen::new(f.covariance).eigenvalues.min() >= 0.0);
        }
    }

    fn history_tracklet(records: &[HistoryRecord]) -> Tracklet {
        let mut t = tracklet_at(1, Point3::origin());
        t.history = records.iter().copied().collect();
        t
    }

    #[test]
    fn stable_when_all_criteria_hold() {
        // ρ = 0.9, d = 1.35 m → v = 1.5 m/s; ΔV = 0.5 m³
        let mut recs = vec![HistoryRecord::miss()];
        for i in 0..9 {
            let x = 1.35 * i as f64 / 8.0;
            let vol = if i == 4 { 0.9 } else { 0.4 };
            recs.push(HistoryRecord::hit(Point3::new(x, 0.0, 0.0), vol));
        }
        let t = history_tracklet(&recs);
        let s = window_stats(&t, &params()).unwrap();
        assert!((s.association_rate - 0.9).abs() < 1e-12);
        assert!((s.speed - 1.5).abs() < 1e-12);
        assert!((s.volume_change - 0.5).abs() < 1e-12);
        assert!(stable_check(&t, &params()));
    }

    #[test]
    fn low_association_rate_is_unstable() {
        let mut recs = vec![HistoryRecord::miss(); 4];
        for i in 0..6 {
            recs.push(HistoryRecord::hit(Point3::new(2.0 * i as f64, 0.0, 0.0), 0.4));
        }
        assert!(!stable_check(&history_tracklet(&recs), &params()));
    }

    #[test]
    fn loitering_object_is_unstable() {
        let recs: Vec<_> = (0..10)
            .map(|i| HistoryRecord::hit(Point3::new(0.5 * i as f64 / 9.0, 0.0, 0.0), 0.4))
            .collect();
        let t = history_tracklet(&recs);
        assert!((window_stats(&t, &params()).unwrap().speed - 0.5).abs() < 1e-12);
        assert!(!stable_check(&t, &params()));
    }

    #[test]
    fn partial_window_is_not_stable() {
        let recs: Vec<_> = (0..5)
            .map(|i| HistoryRecord::hit(Point3::new(i as f64, 0.0, 0.0), 0.4))
            .collect();
        assert!(!stable_check(&history_tracklet(&recs), &params()));
    }

    #[test]
    fn association_within_gate() {
        let t = vec![tracklet_at(0, Point3::origin())];
        let a = associate(&[Point3::new(0.2, 0.0, 0.0)], &t, 1.0);
        assert_eq!(a.matches, vec![(0, 0)]);
        let a = associate(&[Point3::new(1.5, 0.0, 0.0)], &t, 1.0);
        assert!(a.matches.is_empty());
        assert_eq!(a.unmatched_hypotheses, vec![0]);
        assert_eq!(a.unmatched_tracklets, vec![0]);
    }

    #[test]
    fn greedy_takes_shortest_pair_first() {
        // T0 at 0, T1 at 1; H0 at 0.55, H1 at 1.6
        let tr = vec![tracklet_at(0, Point3::origin()), tracklet_at(1, Point3::new(1.0, 0.0, 0.0))];
        let hyps = [Point3::new(0.55, 0.0, 0.0), Point3::new(1.6, 0.0, 0.0)];
        // enumerate both full assignments within the gate
        let d = |t: usize, h: usize| (hyps[h] - tr[t].position()).norm();
        let straight = [d(0, 0), d(1, 1)];
        let crossed = [d(0, 1), d(1, 0)];
        assert!(crossed[0] > 1.0, "T0–H1 lies outside the gate");
        // greedy must start from the globally shortest candidate, T1–H0
        let shortest = [d(0, 0), d(1, 0), d(1, 1)].into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(shortest, crossed[1]);
        let a = associate(&hyps, &tr, 1.0);
        assert_eq!(a.matches[0], (1, 0));
        assert!(straight.iter().all(|v| *v <= 1.0));
        // T0's only candidate H0 is taken, so it stays unmatched
        assert_eq!(a.unmatched_tracklets, vec![0]);
        assert_eq!(a.unmatched_hypotheses, vec![1]);
    }

    #[test]
    fn ties_break_by_tracklet_id() {
        let tr = vec![tracklet_at(7, Point3::new(-0.5, 0.0, 0.0)), tracklet_at(3, Point3::new(0.5, 0.0, 0.0))];
        let a = associate(&[Point3::origin()], &tr, 1.0);
        assert_eq!(a.matches, vec![(1, 0)]);
    }
}
