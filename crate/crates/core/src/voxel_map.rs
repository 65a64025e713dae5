use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::geometry::{voxel_key_unchecked, Point3, VoxelKey};

/// Sparse set of occupied voxels at a fixed resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelMap {
    resolution: f64,
    keys: FxHashSet<VoxelKey>,
}

impl VoxelMap {
    pub fn new(resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::config(format!("voxel resolution must be positive, got {resolution}")));
        }
        Ok(VoxelMap { resolution, keys: FxHashSet::default() })
    }

    pub fn from_keys(resolution: f64, keys: impl IntoIterator<Item = VoxelKey>) -> Result<Self> {
        let mut map = Self::new(resolution)?;
        map.keys.extend(keys);
        Ok(map)
    }

    pub fn from_points<'a>(resolution: f64, points: impl IntoIterator<Item = &'a Point3>) -> Result<Self> {
        let mut map = Self::new(resolution)?;
        for p in points {
            map.insert_point(p);
        }
        Ok(map)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn insert(&mut self, key: VoxelKey) -> bool {
        self.keys.insert(key)
    }

    pub fn insert_point(&mut self, p: &Point3) -> VoxelKey {
        let key = voxel_key_unchecked(p, self.resolution);
        self.keys.insert(key);
        key
    }

    pub fn remove(&mut self, key: &VoxelKey) -> bool {
        self.keys.remove(key)
    }

    #[inline]
    pub fn contains(&self, key: &VoxelKey) -> bool {
        self.keys.contains(key)
    }

    pub fn contains_point(&self, p: &Point3) -> bool {
        self.keys.contains(&voxel_key_unchecked(p, self.resolution))
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VoxelKey> {
        self.keys.iter()
    }

    /// Keys in ascending `(ix, iy, iz)` order.
    pub fn sorted_keys(&self) -> Vec<VoxelKey> {
        let mut keys: Vec<_> = self.keys.iter().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn centers(&self) -> impl Iterator<Item = Point3> + '_ {
        self.keys.iter().map(|k| k.center(self.resolution))
    }

    pub fn intersection_count(&self, other: &VoxelMap) -> usize {
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        small.keys.iter().filter(|k| large.keys.contains(k)).count()
    }

    pub fn extend(&mut self, other: &VoxelMap) {
        self.keys.extend(other.keys.iter().copied());
    }
}
