//! Single-linkage Euclidean clustering over a voxel-hash neighborhood.

use rustc_hash::FxHashMap;

use crate::geometry::{voxel_key_unchecked, Point3, VoxelKey};

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Clustering {
    /// Member indices of each kept cluster, ascending; clusters ordered by
    /// their smallest member.
    pub clusters: Vec<Vec<usize>>,
    /// Points in components smaller than the minimum size, ascending.
    pub rejected: Vec<usize>,
}

/// Connected components of the graph linking points at distance
/// `<= link_dist`; components with fewer than `min_points` members are
/// rejected.
pub fn euclidean_clusters(points: &[Point3], link_dist: f64, min_points: usize) -> Clustering {
    let n = points.len();
    if n == 0 {
        return Clustering::default();
    }
    let mut grid: FxHashMap<VoxelKey, Vec<usize>> = FxHashMap::default();
    for (i, p) in points.iter().enumerate() {
        grid.entry(voxel_key_unchecked(p, link_dist)).or_default().push(i);
    }
    let d2 = link_dist * link_dist;
    let mut sets = DisjointSet::new(n);
    for (i, p) in points.iter().enumerate() {
        let key = voxel_key_unchecked(p, link_dist);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cell) = grid.get(&key.offset(dx, dy, dz)) else { continue };
                    for &j in cell {
                        if j > i && (points[j] - p).norm_squared() <= d2 {
                            sets.union(i, j);
                        }
                    }
                }
            }
        }
    }

    let mut by_root: FxHashMap<usize, usize> = FxHashMap::default();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let root = sets.find(i);
        let slot = *by_root.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(i);
    }
    let mut out = Clustering::default();
    for g in groups {
        if g.len() >= min_points {
            out.clusters.push(g);
        } else {
            out.rejected.extend(g);
        }
    }
    out.rejected.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Components by breadth-first search over the full distance matrix.
    fn brute_force(points: &[Point3], link: f64, min_points: usize) -> Vec<Vec<usize>> {
        let n = points.len();
        let mut label = vec![usize::MAX; n];
        let mut comps = Vec::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut stack = vec![s];
            let mut members = Vec::new();
            label[s] = id;
            while let Some(i) = stack.pop() {
                members.push(i);
                for j in 0..n {
                    if label[j] == usize::MAX && (points[i] - points[j]).norm() <= link {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps.retain(|c| c.len() >= min_points);
        comps.sort();
        comps
    }

    #[test]
    fn close_pair_links() {
        let pts = [Point3::new(0.0, 0.0, 0.0), Point3::new(0.3, 0.0, 0.0)];
        let c = euclidean_clusters(&pts, 0.5, 2);
        assert_eq!(c.clusters, vec![vec![0, 1]]);
        assert!(c.rejected.is_empty());
    }

    #[test]
    fn separated_blobs_split() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let f = i as f64 * 0.05;
            pts.push(Point3::new(f, f, 0.0));
            pts.push(Point3::new(5.0 + f, f, 0.0));
        }
        let c = euclidean_clusters(&pts, 0.5, 5);
        assert_eq!(c.clusters.len(), 2);
        assert!(c.clusters.iter().all(|m| m.len() == 10));
    }

    #[test]
    fn small_components_rejected() {
        let pts = [Point3::new(0.0, 0.0, 0.0), Point3::new(3.0, 0.0, 0.0)];
        let c = euclidean_clusters(&pts, 0.5, 2);
        assert!(c.clusters.is_empty());
        assert_eq!(c.rejected, vec![0, 1]);
    }

    #[test]
    fn matches_distance_matrix_components() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        for trial in 0..20 {
            let pts: Vec<Point3> = (0..200)
                .map(|_| {
                    Point3::new(
                        rng.random_range(0.0..6.0),
                        rng.random_range(0.0..6.0),
                        rng.random_range(0.0..2.0),
                    )
                })
                .collect();
            let min_points = 1 + trial % 4;
            let mut got = euclidean_clusters(&pts, 0.5, min_points).clusters;
            got.sort();
            assert_eq!(got, brute_force(&pts, 0.5, min_points), "trial {trial}");
        }
    }
}
