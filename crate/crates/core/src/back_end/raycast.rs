//! Exact voxel traversal along a segment (Amanatides–Woo).

use crate::geometry::{voxel_key_unchecked, Point3, VoxelKey};

/// Calls `visit` for every voxel the segment `origin → end` passes through,
/// starting with the origin's voxel and stopping before the endpoint's
/// voxel. Nothing is visited when both lie in the same voxel.
pub fn traverse(origin: &Point3, end: &Point3, resolution: f64, mut visit: impl FnMut(VoxelKey)) {
    let start = voxel_key_unchecked(origin, resolution);
    let stop = voxel_key_unchecked(end, resolution);
    if start == stop {
        return;
    }
    let dir = end - origin;
    let cur = [start.ix, start.iy, start.iz];
    let target = [stop.ix, stop.iy, stop.iz];
    let mut cur = cur;
    let mut step = [0i32; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        if dir[a] > 0.0 {
            step[a] = 1;
            t_max[a] = ((cur[a] as f64 + 1.0) * resolution - origin[a]) / dir[a];
            t_delta[a] = resolution / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            t_max[a] = (cur[a] as f64 * resolution - origin[a]) / dir[a];
            t_delta[a] = -resolution / dir[a];
        }
    }
    // a monotone walk reaches the target in exactly this many steps; the
    // bound also stops rounding disagreements with the key snap
    let budget: i32 = (0..3).map(|a| (target[a] - cur[a]).abs()).sum();
    for _ in 0..budget {
        visit(VoxelKey::new(cur[0], cur[1], cur[2]));
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        cur[a] += step[a];
        t_max[a] += t_delta[a];
        if cur == target {
            return;
        }
        // stepping along an axis that is already aligned with the target
        // means the walk left the segment's cell sequence
        if (target[a] - cur[a]) * step[a] < 0 {
            return;
        }
    }
}

/// Unique voxels traversed by rays from `origin` to each point, sorted.
pub fn traversed_voxels(origin: &Point3, points: &[Point3], resolution: f64) -> Vec<VoxelKey> {
    let mut seen = rustc_hash::FxHashSet::default();
    for p in points {
        traverse(origin, p, resolution, |k| {
            seen.insert(k);
        });
    }
    let mut out: Vec<VoxelKey> = seen.into_iter().collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn collect(a: Point3, b: Point3, res: f64) -> Vec<VoxelKey> {
        let mut v = Vec::new();
        traverse(&a, &b, res, |k| v.push(k));
        v
    }

    #[test]
    fn axis_aligned_walk() {
        let v = collect(Point3::new(0.1, 0.1, 0.1), Point3::new(1.1, 0.1, 0.1), 0.2);
        let xs: Vec<i32> = v.iter().map(|k| k.ix).collect();
        assert_eq!(xs, vec![0, 1, 2, 3, 4]);
        assert!(v.iter().all(|k| k.iy == 0 && k.iz == 0));
    }

    #[test]
    fn same_voxel_visits_nothing() {
        assert!(collect(Point3::new(0.01, 0.01, 0.01), Point3::new(0.1, 0.1, 0.1), 0.2).is_empty());
    }

    #[test]
    fn negative_direction() {
        let v = collect(Point3::new(0.1, 0.1, 0.1), Point3::new(-0.5, 0.1, 0.1), 0.2);
        let xs: Vec<i32> = v.iter().map(|k| k.ix).collect();
        assert_eq!(xs, vec![0, -1, -2]);
    }

    /// Dense sampling along the segment never finds a voxel the walk missed
    /// (away from cell corners, where sampling itself is ambiguous).
    #[test]
    fn walk_covers_sampled_cells() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut p = || Point3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..2.0));
            let (a, b) = (p(), p());
            let walk = collect(a, b, 0.2);
            let set: rustc_hash::FxHashSet<VoxelKey> = walk.iter().copied().collect();
            assert_eq!(set.len(), walk.len(), "a cell is visited twice");
            let end = voxel_key_unchecked(&b, 0.2);
            let n = 20_000;
            for i in 0..n {
                let q = a + (b - a) * (i as f64 / n as f64);
                let k = voxel_key_unchecked(&q, 0.2);
                if k != end {
                    assert!(set.contains(&k), "sample {i} in {k} missed");
                }
            }
            // consecutive cells are face neighbors
            for w in walk.windows(2) {
                let d = (w[0].ix - w[1].ix).abs() + (w[0].iy - w[1].iy).abs() + (w[0].iz - w[1].iz).abs();
                assert_eq!(d, 1);
            }
        }
    }
}
