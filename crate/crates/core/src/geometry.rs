//! Points, rigid transforms, voxel indexing and spherical range images.
//!
//! Two distances are used throughout the crate and are kept distinct:
//! [`range`] is the full Euclidean norm used by range images, and
//! [`horizontal_radius`] is the planar `sqrt(x² + y²)` used for the
//! detection boundary crop.

use std::f64::consts::{PI, TAU};

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Rigid transform taking points from a body frame into a reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3(Isometry3<f64>);

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3(Isometry3::identity())
    }

    pub fn from_isometry(iso: Isometry3<f64>) -> Self {
        PoseSE3(iso)
    }

    /// Builds a pose from a rotation matrix, rejecting matrices that are not
    /// proper rotations within 1e-9.
    pub fn from_matrix(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > 1e-9 {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (|RᵀR - I| = {ortho_err:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPose(format!("rotation determinant {det}")));
        }
        let rot = Rotation3::from_matrix_unchecked(rotation);
        Ok(PoseSE3(Isometry3::from_parts(
            Translation3::from(translation),
            UnitQuaternion::from_rotation_matrix(&rot),
        )))
    }

    /// Quaternion components in `(x, y, z, w)` order; the quaternion must be
    /// unit length within 1e-6.
    pub fn from_quaternion(translation: Vector3<f64>, q: [f64; 4]) -> Result<Self> {
        if !q.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let quat = nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm = quat.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidPose(format!("quaternion norm {norm}")));
        }
        Ok(PoseSE3(Isometry3::from_parts(
            Translation3::from(translation),
            UnitQuaternion::from_quaternion(quat),
        )))
    }

    /// Planar pose: position plus heading about +z.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        PoseSE3(Isometry3::new(Vector3::new(x, y, z), Vector3::z() * yaw))
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.0
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.0.rotation.to_rotation_matrix().matrix()
    }

    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.0.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.translation.vector
    }

    pub fn position(&self) -> Point3 {
        Point3::from(self.0.translation.vector)
    }

    pub fn yaw(&self) -> f64 {
        self.0.rotation.euler_angles().2
    }

    pub fn inverse(&self) -> Self {
        PoseSE3(self.0.inverse())
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        PoseSE3(self.0 * other.0)
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        self.0.transform_point(p)
    }

    pub fn is_valid(&self) -> bool {
        let r = self.rotation_matrix();
        let t = self.translation();
        r.iter().chain(t.iter()).all(|v| v.is_finite())
            && ((r.transpose() * r) - Matrix3::identity()).abs().max() <= 1e-9
            && (r.determinant() - 1.0).abs() <= 1e-9
    }

    pub fn distance_to(&self, other: &PoseSE3) -> f64 {
        (self.translation() - other.translation()).norm()
    }
}

pub fn check_finite(points: &[Point3]) -> Result<()> {
    match points.iter().position(|p| !p.coords.iter().all(|v| v.is_finite())) {
        Some(index) => Err(Error::NonFinitePoint { index }),
        None => Ok(()),
    }
}

/// Applies `pose` to every point, preserving order.
pub fn transform_points(pose: &PoseSE3, points: &[Point3]) -> Result<Vec<Point3>> {
    if !pose.is_valid() {
        return Err(Error::InvalidPose("rotation is not a proper rotation".into()));
    }
    check_finite(points)?;
    Ok(points.iter().map(|p| pose.apply(p)).collect())
}

#[inline]
pub fn range(p: &Point3) -> f64 {
    p.coords.norm()
}

#[inline]
pub fn horizontal_radius(p: &Point3) -> f64 {
    p.x.hypot(p.y)
}

/// Integer voxel index, `floor(coord / resolution)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl VoxelKey {
    pub const fn new(ix: i32, iy: i32, iz: i32) -> Self {
        VoxelKey { ix, iy, iz }
    }

    /// Geometric center of the cell.
    pub fn center(&self, resolution: f64) -> Point3 {
        Point3::new(
            (self.ix as f64 + 0.5) * resolution,
            (self.iy as f64 + 0.5) * resolution,
            (self.iz as f64 + 0.5) * resolution,
        )
    }

    pub fn offset(&self, dx: i32, dy: i32, dz: i32) -> Self {
        VoxelKey::new(self.ix + dx, self.iy + dy, self.iz + dz)
    }
}

impl std::fmt::Display for VoxelKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.ix, self.iy, self.iz)
    }
}

pub fn voxel_key(p: &Point3, resolution: f64) -> Result<VoxelKey> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::config(format!("voxel resolution must be positive, got {resolution}")));
    }
    Ok(voxel_key_unchecked(p, resolution))
}

/// Cell-unit slack absorbed before flooring, so a coordinate that lands a
/// rounding error below a cell boundary still belongs to the upper cell.
const KEY_SNAP: f64 = 1e-9;

/// [`voxel_key`] without the resolution check, for hot loops that validated
/// the resolution up front.
#[inline]
pub fn voxel_key_unchecked(p: &Point3, resolution: f64) -> VoxelKey {
    let axis = |v: f64| (v / resolution + KEY_SNAP).floor() as i32;
    VoxelKey::new(axis(p.x), axis(p.y), axis(p.z))
}

/// Angular binning of a spherical range image.
///
/// Rows run bottom-up from `v_fov.0`, columns run from `h_fov.0` in the
/// direction of increasing azimuth. Both use floor binning, so an angle
/// exactly on a cell boundary belongs to the cell that starts there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeImageConfig {
    pub rows: usize,
    pub cols: usize,
    /// Elevation interval `[min, max)` in radians.
    pub v_fov: (f64, f64),
    /// Azimuth interval `[min, max)` in radians.
    pub h_fov: (f64, f64),
}

impl Default for RangeImageConfig {
    /// 32 beams over ±16°, 900 columns over a full turn.
    fn default() -> Self {
        RangeImageConfig {
            rows: 32,
            cols: 900,
            v_fov: (-16f64.to_radians(), 16f64.to_radians()),
            h_fov: (-PI, PI),
        }
    }
}

impl RangeImageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::config("range image needs at least one row and one column"));
        }
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi;
        if !ordered(self.v_fov) || !ordered(self.h_fov) {
            return Err(Error::config("range image field of view must be strictly ordered"));
        }
        if self.h_fov.1 - self.h_fov.0 > TAU + 1e-12 {
            return Err(Error::config("horizontal field of view exceeds a full turn"));
        }
        Ok(())
    }

    pub fn row_step(&self) -> f64 {
        (self.v_fov.1 - self.v_fov.0) / self.rows as f64
    }

    pub fn col_step(&self) -> f64 {
        (self.h_fov.1 - self.h_fov.0) / self.cols as f64
    }

    fn full_turn(&self) -> bool {
        self.h_fov.1 - self.h_fov.0 >= TAU - 1e-12
    }

    /// Unit direction through the center of pixel `(row, col)`.
    pub fn pixel_direction(&self, row: usize, col: usize) -> Vector3<f64> {
        let elev = self.v_fov.0 + (row as f64 + 0.5) * self.row_step();
        let az = self.h_fov.0 + (col as f64 + 0.5) * self.col_step();
        Vector3::new(elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin())
    }

    /// Pixel for a point already known to be non-zero.
    #[inline]
    fn bin(&self, p: &Point3) -> Option<(usize, usize)> {
        let elev = p.z.atan2((p.x * p.x + p.y * p.y).sqrt());
        let mut az = p.y.atan2(p.x);
        if self.full_turn() {
            // fold atan2's (-π, π] into [h_min, h_min + 2π)
            while az < self.h_fov.0 {
                az += TAU;
            }
            while az >= self.h_fov.0 + TAU {
                az -= TAU;
            }
        }
        if elev < self.v_fov.0 || elev >= self.v_fov.1 || az < self.h_fov.0 || az >= self.h_fov.1 {
            return None;
        }
        let row = ((elev - self.v_fov.0) / self.row_step()).floor() as usize;
        let col = ((az - self.h_fov.0) / self.col_step()).floor() as usize;
        // guard against rounding at the open upper edge
        if row >= self.rows || col >= self.cols {
            return None;
        }
        Some((row, col))
    }
}

/// The pixel whose angular cone contains `p`, or `None` outside the field
/// of view or for a point at the origin.
pub fn pixel_of(p: &Point3, config: &RangeImageConfig) -> Option<(usize, usize)> {
    if range(p) == 0.0 {
        log::debug!("pixel_of: point at the sensor origin has no direction");
        return None;
    }
    config.bin(p)
}

/// Dense range image; `get` returns `None` for pixels that received no
/// point.
#[derive(Debug, Clone)]
pub struct RangeImage {
    config: RangeImageConfig,
    /// NaN marks an empty pixel, so any `d < γ·I` test against it fails.
    pixels: Vec<f64>,
}

impl PartialEq for RangeImage {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.pixels.len() == other.pixels.len()
            && self.pixels.iter().zip(&other.pixels).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl RangeImage {
    pub fn empty(config: RangeImageConfig) -> Self {
        RangeImage { pixels: vec![f64::NAN; config.rows * config.cols], config }
    }

    pub fn config(&self) -> &RangeImageConfig {
        &self.config
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.pixels[row * self.config.cols + col];
        (!v.is_nan()).then_some(v)
    }

    /// Raw pixel value with NaN for empty, indexed `row * cols + col`.
    #[inline]
    pub fn raw(&self, index: usize) -> f64 {
        self.pixels[index]
    }

    pub fn non_empty_count(&self) -> usize {
        self.pixels.iter().filter(|p| !p.is_nan()).count()
    }

    /// Keeps the minimum range per pixel.
    pub fn insert(&mut self, p: &Point3) {
        let r = range(p);
        if r == 0.0 || !r.is_finite() {
            return;
        }
        if let Some((row, col)) = self.config.bin(p) {
            let slot = &mut self.pixels[row * self.config.cols + col];
            if slot.is_nan() || r < *slot {
                *slot = r;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let cols = self.config.cols;
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_nan())
            .map(move |(i, &r)| ((i / cols, i % cols), r))
    }
}

pub fn project_range_image(points: &[Point3], config: &RangeImageConfig) -> Result<RangeImage> {
    config.validate()?;
    let mut image = RangeImage::empty(*config);
    for p in points {
        image.insert(p);
    }
    Ok(image)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Static,
    Dynamic,
}

/// One sweep in the sensor frame, optionally with per-point ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScan {
    pub timestamp: f64,
    pub points: Vec<Point3>,
    pub labels: Option<Vec<Label>>,
}

impl LabeledScan {
    pub fn new(timestamp: f64, points: Vec<Point3>, labels: Option<Vec<Label>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::config(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
        }
        check_finite(&points)?;
        Ok(LabeledScan { timestamp, points, labels })
    }

    pub fn unlabeled(timestamp: f64, points: Vec<Point3>) -> Result<Self> {
        Self::new(timestamp, points, None)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rot_z(angle: f64) -> Matrix3<f64> {
        let (s, c) = angle.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn identity_leaves_points_alone() {
        let pts = vec![Point3::new(1.0, -2.0, 3.5), Point3::new(0.0, 0.0, 0.0)];
        assert_eq!(transform_points(&PoseSE3::identity(), &pts).unwrap(), pts);
    }

    #[test]
    fn pure_translation() {
        let pose = PoseSE3::from_xyz_yaw(1.0, 0.0, 0.0, 0.0);
        let out = transform_points(&pose, &[Point3::origin()]).unwrap();
        assert_eq!(out[0], Point3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn yaw_quarter_turn_matches_hand_built_matrix() {
        let pose = PoseSE3::from_xyz_yaw(0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let out = transform_points(&pose, &[Point3::new(1.0, 0.0, 0.0)]).unwrap();
        let oracle = rot_z(std::f64::consts::FRAC_PI_2) * Vector3::new(1.0, 0.0, 0.0);
        assert!((out[0].coords - oracle).norm() < 1e-9);
        assert!((out[0] - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn non_finite_point_names_index() {
        let pts = vec![Point3::origin(), Point3::new(f64::NAN, 0.0, 0.0)];
        match transform_points(&PoseSE3::identity(), &pts) {
            Err(Error::NonFinitePoint { index }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn from_matrix_rejects_reflection() {
        let mut m = Matrix3::identity();
        m[(2, 2)] = -1.0;
        assert!(PoseSE3::from_matrix(m, Vector3::zeros()).is_err());
        assert!(PoseSE3::from_matrix(rot_z(0.3), Vector3::zeros()).is_ok());
    }

    #[test]
    fn voxel_keys_floor() {
        let k = |x, y, z| voxel_key(&Point3::new(x, y, z), 0.2).unwrap();
        assert_eq!(k(0.05, 0.05, 0.05), VoxelKey::new(0, 0, 0));
        assert_eq!(k(-0.01, 0.0, 0.39), VoxelKey::new(-1, 0, 1));
        assert_eq!(k(2.0, 2.0, 2.0), VoxelKey::new(10, 10, 10));
        assert_eq!(k(-1e-13, 1.0 - 1e-14, 0.0), VoxelKey::new(0, 5, 0));
        assert!(voxel_key(&Point3::origin(), 0.0).is_err());
        assert!(voxel_key(&Point3::origin(), -1.0).is_err());
    }

    #[test]
    fn single_point_single_pixel() {
        let cfg = RangeImageConfig::default();
        let img = project_range_image(&[Point3::new(5.0, 0.0, 0.0)], &cfg).unwrap();
        let filled: Vec<_> = img.iter().collect();
        assert_eq!(filled.len(), 1);
        assert_eq!(filled[0].1, 5.0);
    }

    #[test]
    fn pixel_keeps_minimum_range() {
        let cfg = RangeImageConfig::default();
        let img = project_range_image(
            &[Point3::new(7.0, 0.0, 0.07), Point3::new(3.0, 0.0, 0.03)],
            &cfg,
        )
        .unwrap();
        let filled: Vec<_> = img.iter().collect();
        assert_eq!(filled.len(), 1);
        assert!((filled[0].1 - (9.0f64 + 0.0009).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn above_fov_is_dropped() {
        let cfg = RangeImageConfig::default();
        let img = project_range_image(&[Point3::new(1.0, 0.0, 1.0)], &cfg).unwrap();
        assert_eq!(img.non_empty_count(), 0);
        assert_eq!(pixel_of(&Point3::new(1.0, 0.0, 1.0), &cfg), None);
    }

    #[test]
    fn straight_ahead_is_center_pixel() {
        let cfg = RangeImageConfig::default();
        assert_eq!(pixel_of(&Point3::new(4.0, 0.0, 0.0), &cfg), Some((16, 450)));
    }

    #[test]
    fn column_boundary_uses_floor() {
        // 4 columns over a full turn: boundaries at -π, -π/2, 0, π/2
        let cfg = RangeImageConfig { rows: 1, cols: 4, v_fov: (-0.5, 0.5), h_fov: (-PI, PI) };
        assert_eq!(pixel_of(&Point3::new(1.0, 0.0, 0.0), &cfg), Some((0, 2)));
        assert_eq!(pixel_of(&Point3::new(0.0, 1.0, 0.0), &cfg), Some((0, 3)));
        // atan2 returns +π straight behind; it folds onto the -π column
        assert_eq!(pixel_of(&Point3::new(-1.0, 0.0, 0.0), &cfg), Some((0, 0)));
    }

    #[test]
    fn origin_has_no_pixel() {
        assert_eq!(pixel_of(&Point3::origin(), &RangeImageConfig::default()), None);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = RangeImageConfig::default();
        cfg.rows = 0;
        assert!(project_range_image(&[], &cfg).is_err());
        let mut cfg = RangeImageConfig::default();
        cfg.v_fov = (0.2, 0.1);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pixel_of_agrees_with_projection() {
        use rand::{Rng, SeedableRng};
        let cfg = RangeImageConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let elev = rng.random_range(cfg.v_fov.0..cfg.v_fov.1);
            let az = rng.random_range(-PI..PI);
            let r = rng.random_range(0.5..40.0);
            let p = Point3::new(
                r * elev.cos() * az.cos(),
                r * elev.cos() * az.sin(),
                r * elev.sin(),
            );
            let img = project_range_image(&[p], &cfg).unwrap();
            let filled: Vec<_> = img.iter().map(|(px, _)| px).collect();
            assert_eq!(pixel_of(&p, &cfg).into_iter().collect::<Vec<_>>(), filled);
        }
    }

    fn arb_pose() -> impl Strategy<Value = PoseSE3> {
        (
            prop::array::uniform3(-50.0f64..50.0),
            prop::array::uniform3(-PI..PI),
        )
            .prop_map(|(t, r)| {
                PoseSE3::from_isometry(Isometry3::new(
                    Vector3::from(t),
                    Vector3::from(r),
                ))
            })
    }

    proptest! {
        #[test]
        fn inverse_round_trip(pose in arb_pose(), pts in prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 1..20)) {
            let pts: Vec<Point3> = pts.into_iter().map(Point3::from).collect();
            let fwd = transform_points(&pose, &pts).unwrap();
            let back = transform_points(&pose.inverse(), &fwd).unwrap();
            for (a, b) in pts.iter().zip(&back) {
                prop_assert!((a - b).abs().max() < 1e-7);
            }
        }

        #[test]
        fn pose_inverse_composes_to_identity(pose in arb_pose()) {
            let id = pose.compose(&pose.inverse());
            prop_assert!((id.rotation_matrix() - Matrix3::identity()).abs().max() < 1e-9);
            prop_assert!(id.translation().norm() < 1e-9);
        }

        #[test]
        fn voxel_key_translation_consistent(
            p in prop::array::uniform3(-20.0f64..20.0),
            shift in prop::array::uniform3(-50i32..50),
        ) {
            // power-of-two resolution keeps the shift exact in floating point
            let r = 0.25;
            let p = Point3::from(p);
            let q = p + Vector3::new(shift[0] as f64, shift[1] as f64, shift[2] as f64) * r;
            let kp = voxel_key(&p, r).unwrap();
            prop_assert_eq!(voxel_key(&q, r).unwrap(), kp.offset(shift[0], shift[1], shift[2]));
        }

        #[test]
        fn projection_is_order_independent(
            pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 1..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let cfg = RangeImageConfig { rows: 8, cols: 16, ..RangeImageConfig::default() };
            let pts: Vec<Point3> = pts.into_iter().map(Point3::from).collect();
            let mut shuffled = pts.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                project_range_image(&pts, &cfg).unwrap(),
                project_range_image(&shuffled, &cfg).unwrap()
            );
        }
    }
}
