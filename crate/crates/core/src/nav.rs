//! Long-range direction selection: terrain cost grid, frontier extraction
//! and a viewpoint graph scored by discounted max-aggregation.

use std::collections::VecDeque;

use nalgebra::{Point2, Vector2};
use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};
use crate::geometry::Point3;

pub type Cell = (i32, i32);

#[derive(Debug, Clone, PartialEq)]
pub struct NavParams {
    pub cell_size: f64,
    /// A cell is an obstacle once any point rises this far above its
    /// reference height.
    pub obstacle_threshold: f64,
    pub gamma_nav: f64,
    pub viewpoint_spacing: f64,
}

impl Default for NavParams {
    fn default() -> Self {
        NavParams { cell_size: 0.2, obstacle_threshold: 0.3, gamma_nav: 0.9, viewpoint_spacing: 2.0 }
    }
}

impl NavParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.obstacle_threshold > 0.0 && self.viewpoint_spacing > 0.0) {
            return Err(Error::config("cell size, obstacle threshold and viewpoint spacing must be positive"));
        }
        if !(self.gamma_nav > 0.0 && self.gamma_nav < 1.0) {
            return Err(Error::config(format!("gamma_nav must lie in (0, 1), got {}", self.gamma_nav)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainCell {
    /// Lower quartile (nearest rank) of the point heights.
    pub reference: f64,
    /// Per-point `height − reference`, in input order.
    pub costs: Vec<f64>,
}

impl TerrainCell {
    pub fn max_cost(&self) -> f64 {
        self.costs.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerrainGrid {
    pub cell_size: f64,
    pub obstacle_threshold: f64,
    pub cells: FxHashMap<Cell, TerrainCell>,
    /// Cells observed free without any point in them.
    pub observed_free: FxHashSet<Cell>,
}

impl TerrainGrid {
    pub fn cell_of(&self, x: f64, y: f64) -> Cell {
        ((x / self.cell_size).floor() as i32, (y / self.cell_size).floor() as i32)
    }

    pub fn cell_center(&self, c: Cell) -> Point2<f64> {
        Point2::new((c.0 as f64 + 0.5) * self.cell_size, (c.1 as f64 + 0.5) * self.cell_size)
    }

    pub fn is_known(&self, c: Cell) -> bool {
        self.cells.contains_key(&c) || self.observed_free.contains(&c)
    }

    pub fn is_traversable(&self, c: Cell) -> bool {
        match self.cells.get(&c) {
            Some(cell) => cell.max_cost() < self.obstacle_threshold,
            None => self.observed_free.contains(&c),
        }
    }

    pub fn mark_observed_free(&mut self, c: Cell) {
        self.observed_free.insert(c);
    }
}

/// Nearest-rank percentile `q ∈ (0, 1]` of unsorted values.
fn nearest_rank(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

pub fn terrain_cost(points: &[Point3], params: &NavParams) -> Result<TerrainGrid> {
    params.validate()?;
    let mut heights: FxHashMap<Cell, Vec<f64>> = FxHashMap::default();
    let s = params.cell_size;
    for p in points {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            continue;
        }
        let c = ((p.x / s).floor() as i32, (p.y / s).floor() as i32);
        heights.entry(c).or_default().push(p.z);
    }
    let cells = heights
        .into_iter()
        .map(|(c, h)| {
            let reference = nearest_rank(&h, 0.25);
            (c, TerrainCell { reference, costs: h.iter().map(|z| z - reference).collect() })
        })
        .collect();
    Ok(TerrainGrid {
        cell_size: s,
        obstacle_threshold: params.obstacle_threshold,
        cells,
        observed_free: FxHashSet::default(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierCluster {
    /// Sorted member cells.
    pub cells: Vec<Cell>,
    pub centroid: Point2<f64>,
}

const FOUR: [Cell; 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

pub fn is_frontier_cell(grid: &TerrainGrid, c: Cell) -> bool {
    grid.is_known(c)
        && grid.is_traversable(c)
        && FOUR.iter().any(|d| !grid.is_known((c.0 + d.0, c.1 + d.1)))
}

/// Frontier cells clustered by 8-adjacency, ordered by their smallest cell.
pub fn extract_frontiers(grid: &TerrainGrid) -> Vec<FrontierCluster> {
    let mut known: Vec<Cell> = grid.cells.keys().chain(grid.observed_free.iter()).copied().collect();
    known.sort_unstable();
    known.dedup();
    let frontier: FxHashSet<Cell> = known.iter().copied().filter(|&c| is_frontier_cell(grid, c)).collect();
    let mut seeds: Vec<Cell> = frontier.iter().copied().collect();
    seeds.sort_unstable();
    let mut seen: FxHashSet<Cell> = FxHashSet::default();
    let mut out = Vec::new();
    for s in seeds {
        if !seen.insert(s) {
            continue;
        }
        let mut members = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(c) = queue.pop_front() {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let n = (c.0 + dx, c.1 + dy);
                    if frontier.contains(&n) && seen.insert(n) {
                        members.push(n);
                        queue.push_back(n);
                    }
                }
            }
        }
        members.sort_unstable();
        let sum = members.iter().fold(Vector2::zeros(), |acc, &c| acc + grid.cell_center(c).coords);
        out.push(FrontierCluster { centroid: Point2::from(sum / members.len() as f64), cells: members });
    }
    out
}

/// `(1 + ⟨normalize(frontier − viewpoint), normalize(reference)⟩) / 2`.
pub fn score_frontier(viewpoint: &Point2<f64>, frontier: &Point2<f64>, reference: &Vector2<f64>) -> Result<f64> {
    let rn = reference.norm();
    if !(rn > 0.0 && rn.is_finite()) {
        return Err(Error::config("reference direction must be a non-zero vector"));
    }
    let drive = frontier - viewpoint;
    let dn = drive.norm();
    if dn == 0.0 {
        return Err(Error::config("frontier coincides with its viewpoint"));
    }
    let dot = (drive / dn).dot(&(reference / rn)).clamp(-1.0, 1.0);
    Ok((1.0 + dot) / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewpointNode {
    pub position: Point2<f64>,
    pub score: f64,
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierNode {
    pub position: Point2<f64>,
    pub score: f64,
    pub viewpoint: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavGraph {
    pub viewpoints: Vec<ViewpointNode>,
    pub frontiers: Vec<FrontierNode>,
    pub spacing: f64,
    pub gamma: f64,
    last_sampled: Option<usize>,
}

impl NavGraph {
    pub fn new(params: &NavParams) -> Result<Self> {
        params.validate()?;
        Ok(NavGraph {
            viewpoints: Vec::new(),
            frontiers: Vec::new(),
            spacing: params.viewpoint_spacing,
            gamma: params.gamma_nav,
            last_sampled: None,
        })
    }

    /// Adds a viewpoint joined to `parent`.
    pub fn add_viewpoint(&mut self, position: Point2<f64>, parent: Option<usize>) -> usize {
        let id = self.viewpoints.len();
        self.viewpoints.push(ViewpointNode { position, score: 0.0, neighbors: Vec::new() });
        if let Some(p) = parent {
            self.viewpoints[p].neighbors.push(id);
            self.viewpoints[id].neighbors.push(p);
        }
        self.last_sampled = Some(id);
        id
    }

    pub fn nearest_viewpoint(&self, p: &Point2<f64>) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, v) in self.viewpoints.iter().enumerate() {
            let d = (v.position - p).norm();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        best.map(|(_, i)| i)
    }

    fn hop_path(&self, from: usize, to: usize) -> Vec<usize> {
        let mut prev = vec![usize::MAX; self.viewpoints.len()];
        prev[from] = from;
        let mut queue = VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            if v == to {
                break;
            }
            for &n in &self.viewpoints[v].neighbors {
                if prev[n] == usize::MAX {
                    prev[n] = v;
                    queue.push_back(n);
                }
            }
        }
        if prev[to] == usize::MAX {
            return Vec::new();
        }
        let mut path = vec![to];
        let mut v = to;
        while v != from {
            v = prev[v];
            path.push(v);
        }
        path.reverse();
        path
    }
}

/// Samples a viewpoint once the robot is `spacing` away from the last one
/// and rebuilds the frontier nodes against the updated viewpoints.
pub fn extend_graph(
    graph: &mut NavGraph,
    robot: &Point2<f64>,
    frontiers: &[FrontierCluster],
    reference: &Vector2<f64>,
) -> Result<()> {
    let sample = match graph.last_sampled {
        None => true,
        // the tolerance absorbs rounding of positions accumulated along a path
        Some(last) => (graph.viewpoints[last].position - robot).norm() >= graph.spacing - 1e-9,
    };
    if sample {
        let parent = graph.nearest_viewpoint(robot);
        graph.add_viewpoint(*robot, parent);
    }
    graph.frontiers.clear();
    for f in frontiers {
        let vp = graph.nearest_viewpoint(&f.centroid).expect("graph has a viewpoint");
        let score = match score_frontier(&graph.viewpoints[vp].position, &f.centroid, reference) {
            Ok(s) => s,
            // a frontier exactly at its viewpoint has no driving direction
            Err(_) if (f.centroid - graph.viewpoints[vp].position).norm() == 0.0 => 0.5,
            Err(e) => return Err(e),
        };
        graph.frontiers.push(FrontierNode { position: f.centroid, score, viewpoint: vp });
    }
    Ok(())
}

/// Initializes each viewpoint with its best frontier score, then applies
/// `s_i ← max(s_i, γ·max_{j∈N(i)} s_j)` in synchronous sweeps until no
/// score changes. Returns the number of sweeps, including the final one
/// that changed nothing.
pub fn aggregate_scores(graph: &mut NavGraph) -> usize {
    let mut s = vec![0.0f64; graph.viewpoints.len()];
    for f in &graph.frontiers {
        s[f.viewpoint] = s[f.viewpoint].max(f.score);
    }
    aggregate_from(graph, s)
}

/// [`aggregate_scores`] from explicit initial viewpoint scores.
pub fn aggregate_from(graph: &mut NavGraph, mut s: Vec<f64>) -> usize {
    let gamma = graph.gamma;
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let next: Vec<f64> = (0..s.len())
            .map(|i| {
                let best = graph.viewpoints[i].neighbors.iter().map(|&j| s[j]).fold(0.0, f64::max);
                s[i].max(gamma * best)
            })
            .collect();
        let changed = next != s;
        s = next;
        if !changed {
            break;
        }
    }
    for (v, score) in graph.viewpoints.iter_mut().zip(s) {
        v.score = score;
    }
    sweeps
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub viewpoint: usize,
    /// Index into `graph.frontiers`.
    pub frontier: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectError {
    /// No frontier remains anywhere in the graph.
    ExplorationExhausted,
}

impl std::fmt::Display for SelectError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exploration exhausted: no frontier remains")
    }
}

impl std::error::Error for SelectError {}

fn best_frontier_of(graph: &NavGraph, vp: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, f) in graph.frontiers.iter().enumerate() {
        if f.viewpoint == vp && best.is_none_or(|b| f.score > graph.frontiers[b].score) {
            best = Some(i);
        }
    }
    best
}

/// Nearest viewpoint (to the robot) among those within 1e-9 of the top
/// score, with its best frontier. When that viewpoint has no frontier, the
/// best frontier of the highest-scored viewpoint on the hop path from the
/// robot's viewpoint is used instead.
pub fn select_best(graph: &NavGraph, robot: &Point2<f64>) -> std::result::Result<Selection, SelectError> {
    if graph.frontiers.is_empty() || graph.viewpoints.is_empty() {
        return Err(SelectError::ExplorationExhausted);
    }
    let top = graph.viewpoints.iter().map(|v| v.score).fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<(f64, usize)> = None;
    for (i, v) in graph.viewpoints.iter().enumerate() {
        if v.score >= top - 1e-9 {
            let d = (v.position - robot).norm();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
    }
    let vp = best.expect("at least one viewpoint").1;
    if let Some(f) = best_frontier_of(graph, vp) {
        return Ok(Selection { viewpoint: vp, frontier: f });
    }
    let start = graph.nearest_viewpoint(robot).expect("at least one viewpoint");
    let mut path = graph.hop_path(start, vp);
    path.sort_by(|&a, &b| graph.viewpoints[b].score.total_cmp(&graph.viewpoints[a].score).then(a.cmp(&b)));
    for node in path {
        if let Some(f) = best_frontier_of(graph, node) {
            return Ok(Selection { viewpoint: vp, frontier: f });
        }
    }
    let f = (0..graph.frontiers.len())
        .max_by(|&a, &b| graph.frontiers[a].score.total_cmp(&graph.frontiers[b].score).then(b.cmp(&a)))
        .expect("non-empty");
    Ok(Selection { viewpoint: vp, frontier: f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn params() -> NavParams {
        NavParams::default()
    }

    #[test]
    fn flat_plane_is_traversable() {
        let pts: Vec<Point3> = (0..100).map(|i| Point3::new(0.1 * (i % 10) as f64, 0.1 * (i / 10) as f64, 0.0)).collect();
        let g = terrain_cost(&pts, &params()).unwrap();
        assert!(g.cells.values().all(|c| c.max_cost() == 0.0));
        assert!(g.cells.keys().all(|&c| g.is_traversable(c)));
    }

    #[test]
    fn lower_quartile_reference() {
        let pts: Vec<Point3> = [0.0, 0.0, 0.0, 1.0].iter().map(|&z| Point3::new(0.05, 0.05, z)).collect();
        let g = terrain_cost(&pts, &params()).unwrap();
        let c = &g.cells[&(0, 0)];
        assert_eq!(c.reference, 0.0);
        assert_eq!(c.costs[3], 1.0);
    }

    #[test]
    fn agent_cell_is_an_obstacle() {
        let mut pts: Vec<Point3> = (0..10).map(|i| Point3::new(0.05, 0.05, 0.0 + 0.001 * i as f64)).collect();
        pts.extend((0..10).map(|i| Point3::new(0.1, 0.1, 0.18 * (i + 1) as f64)));
        let g = terrain_cost(&pts, &params()).unwrap();
        assert!(!g.is_traversable((0, 0)));
    }

    fn grid_from_mask(mask: &[Vec<bool>]) -> TerrainGrid {
        let mut g = terrain_cost(&[], &params()).unwrap();
        for (x, row) in mask.iter().enumerate() {
            for (y, &k) in row.iter().enumerate() {
                if k {
                    g.mark_observed_free((x as i32, y as i32));
                }
            }
        }
        g
    }

    #[test]
    fn fully_known_region_has_no_interior_frontier() {
        // known everywhere the test looks: frontier only on the outer rim
        let g = grid_from_mask(&vec![vec![true; 10]; 10]);
        for c in extract_frontiers(&g).iter().flat_map(|f| &f.cells) {
            assert!(c.0 == 0 || c.1 == 0 || c.0 == 9 || c.1 == 9);
        }
    }

    #[test]
    fn half_plane_seam_is_one_cluster() {
        let mask: Vec<Vec<bool>> = (0..20).map(|x| (0..20).map(|_| x < 10).collect()).collect();
        let mut g = grid_from_mask(&mask);
        // pad the known half so only the seam borders unknown space
        for x in -5..10 {
            for y in -5..25 {
                g.mark_observed_free((x, y));
            }
        }
        let f = extract_frontiers(&g);
        let seam = f.iter().find(|c| c.cells.contains(&(9, 0))).expect("seam cluster");
        assert!((0..20).all(|y| seam.cells.contains(&(9, y))));
        // nothing strictly inside the known block is a frontier
        for c in f.iter().flat_map(|c| &c.cells) {
            assert!(c.0 == -5 || c.0 == 9 || c.1 == -5 || c.1 == 24, "{c:?}");
        }
    }

    #[test]
    fn frontier_cells_match_brute_force_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mask: Vec<Vec<bool>> = (0..50).map(|_| (0..50).map(|_| rng.random_bool(0.6)).collect()).collect();
        let g = grid_from_mask(&mask);
        let known = |x: i32, y: i32| (0..50).contains(&x) && (0..50).contains(&y) && mask[x as usize][y as usize];
        let mut want = Vec::new();
        for x in 0..50 {
            for y in 0..50 {
                if known(x, y) && (!known(x + 1, y) || !known(x - 1, y) || !known(x, y + 1) || !known(x, y - 1)) {
                    want.push((x, y));
                }
            }
        }
        let mut got: Vec<Cell> = extract_frontiers(&g).into_iter().flat_map(|f| f.cells).collect();
        got.sort_unstable();
        assert_eq!(got, want);
        assert!(got.iter().all(|&c| g.is_known(c)));
    }

    #[test]
    fn score_transform() {
        let o = Point2::origin();
        let r = Vector2::new(1.0, 0.0);
        assert_eq!(score_frontier(&o, &Point2::new(3.0, 0.0), &r).unwrap(), 1.0);
        assert_eq!(score_frontier(&o, &Point2::new(-3.0, 0.0), &r).unwrap(), 0.0);
        assert!((score_frontier(&o, &Point2::new(0.0, 2.0), &r).unwrap() - 0.5).abs() < 1e-15);
        assert!(score_frontier(&o, &Point2::new(1.0, 0.0), &Vector2::zeros()).is_err());
    }

    fn graph() -> NavGraph {
        NavGraph::new(&params()).unwrap()
    }

    #[test]
    fn single_node_converges_immediately() {
        let mut g = graph();
        g.add_viewpoint(Point2::origin(), None);
        assert_eq!(aggregate_from(&mut g, vec![0.4]), 1);
        assert_eq!(g.viewpoints[0].score, 0.4);
    }

    #[test]
    fn chain_of_two() {
        let mut g = graph();
        g.gamma = 0.5;
        let a = g.add_viewpoint(Point2::origin(), None);
        g.add_viewpoint(Point2::new(2.0, 0.0), Some(a));
        aggregate_from(&mut g, vec![0.2, 1.0]);
        assert_eq!(g.viewpoints[0].score, 0.5);
        assert_eq!(g.viewpoints[1].score, 1.0);
    }

    #[test]
    fn random_trees_reach_closed_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let n = rng.random_range(1..=40);
            let mut g = graph();
            g.gamma = rng.random_range(0.1..0.99);
            for i in 0..n {
                let parent = (i > 0).then(|| rng.random_range(0..i));
                g.add_viewpoint(Point2::new(i as f64, 0.0), parent);
            }
            let init: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { 0.0 }).collect();
            let sweeps = aggregate_from(&mut g, init.clone());
            assert!(sweeps <= n);
            for i in 0..n {
                let want = (0..n)
                    .map(|j| g.gamma.powi(g.hop_path(i, j).len() as i32 - 1) * init[j])
                    .fold(0.0, f64::max);
                assert!((g.viewpoints[i].score - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn straight_path_samples_a_chain() {
        let mut g = graph();
        for i in 0..=20 {
            extend_graph(&mut g, &Point2::new(0.5 * i as f64, 0.0), &[], &Vector2::new(1.0, 0.0)).unwrap();
        }
        assert_eq!(g.viewpoints.len(), 6);
        for (i, v) in g.viewpoints.iter().enumerate().skip(1) {
            assert!(v.neighbors.contains(&(i - 1)));
        }
        let n = g.viewpoints.len();
        extend_graph(&mut g, &Point2::new(10.0, 0.0), &[], &Vector2::new(1.0, 0.0)).unwrap();
        assert_eq!(g.viewpoints.len(), n);
    }

    #[test]
    fn frontier_edges_go_to_nearest_viewpoint() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let mut g = graph();
        for i in 0..8 {
            let p = Point2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let parent = (i > 0).then(|| i - 1);
            g.add_viewpoint(p, parent);
        }
        let clusters: Vec<FrontierCluster> = (0..100)
            .map(|_| FrontierCluster {
                cells: Vec::new(),
                centroid: Point2::new(rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)),
            })
            .collect();
        let robot = g.viewpoints[7].position;
        extend_graph(&mut g, &robot, &clusters, &Vector2::new(0.0, 1.0)).unwrap();
        for f in &g.frontiers {
            let d = (g.viewpoints[f.viewpoint].position - f.position).norm();
            assert!(g.viewpoints.iter().all(|v| (v.position - f.position).norm() >= d));
        }
    }

    #[test]
    fn single_viewpoint_picks_higher_frontier() {
        let mut g = graph();
        g.add_viewpoint(Point2::origin(), None);
        g.frontiers = vec![
            FrontierNode { position: Point2::new(1.0, 0.0), score: 0.9, viewpoint: 0 },
            FrontierNode { position: Point2::new(-1.0, 0.0), score: 0.4, viewpoint: 0 },
        ];
        aggregate_scores(&mut g);
        assert_eq!(select_best(&g, &Point2::origin()).unwrap(), Selection { viewpoint: 0, frontier: 0 });
    }

    #[test]
    fn ties_go_to_the_nearer_viewpoint() {
        let mut g = graph();
        let a = g.add_viewpoint(Point2::new(3.0, 0.0), None);
        g.add_viewpoint(Point2::new(-7.0, 0.0), Some(a));
        g.frontiers = vec![
            FrontierNode { position: Point2::new(4.0, 0.0), score: 0.8, viewpoint: 0 },
            FrontierNode { position: Point2::new(-8.0, 0.0), score: 0.8, viewpoint: 1 },
        ];
        aggregate_scores(&mut g);
        assert_eq!(select_best(&g, &Point2::origin()).unwrap().viewpoint, 0);
    }

    #[test]
    fn no_frontier_is_exhaustion() {
        let mut g = graph();
        g.add_viewpoint(Point2::origin(), None);
        assert_eq!(select_best(&g, &Point2::origin()), Err(SelectError::ExplorationExhausted));
    }

    #[test]
    fn scaling_initial_scores_keeps_the_argmax() {
        let mut g = graph();
        for i in 0..6usize {
            g.add_viewpoint(Point2::new(2.0 * i as f64, 0.0), i.checked_sub(1));
        }
        let init = vec![0.1, 0.0, 0.35, 0.0, 0.2, 0.0];
        aggregate_from(&mut g, init.clone());
        let argmax = |g: &NavGraph| {
            (0..g.viewpoints.len()).max_by(|&a, &b| g.viewpoints[a].score.total_cmp(&g.viewpoints[b].score)).unwrap()
        };
        let base = argmax(&g);
        aggregate_from(&mut g, init.iter().map(|s| s * 2.5).collect());
        assert_eq!(argmax(&g), base);
    }
}
