//! Compact geometric-photometric over-segmentation and cluster adjacency.
//!
//! Frames are over-segmented by k-means over `(x, y, z, intensity)` features
//! with seeds placed on a regular 3D grid over the back-projected cloud.
//! Each resulting cluster is compact enough to be treated as a rigid body by
//! the segmentation stage.

use crate::dataset::RgbdFrame;
use crate::geometry::{backproject, Pixel};
use crate::grid::Grid;
use nalgebra::Vector3;
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("frame has no valid-depth pixels")]
    EmptyCloud,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusteringParams {
    /// Seed grid pitch in meters.
    pub seed_resolution: f64,
    pub spatial_weight: f64,
    pub intensity_weight: f64,
    pub max_kmeans_iters: usize,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        Self {
            seed_resolution: 0.3,
            spatial_weight: 1.0,
            intensity_weight: 0.5,
            max_kmeans_iters: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterInfo {
    /// Pixel count.
    pub size: usize,
    /// Mean 3D position in camera coordinates (m).
    pub centroid: Vector3<f64>,
    /// Mean depth (m).
    pub mean_depth: f64,
    pub mean_intensity: f64,
}

/// Partition of the valid-depth pixels of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    labels: Grid<i32>,
    clusters: Vec<ClusterInfo>,
    seed_resolution: f64,
}

impl ClusterSet {
    /// Label image: cluster id per valid-depth pixel, -1 elsewhere.
    pub fn labels(&self) -> &Grid<i32> {
        &self.labels
    }

    pub fn label_at(&self, x: usize, y: usize) -> Option<usize> {
        let l = self.labels.get(x, y);
        (l >= 0).then_some(l as usize)
    }

    pub fn clusters(&self) -> &[ClusterInfo] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn seed_resolution(&self) -> f64 {
        self.seed_resolution
    }
}

/// Symmetric binary adjacency over cluster ids, no self-edges.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    node_count: usize,
    edges: BTreeSet<(u32, u32)>,
}

impl AdjacencyGraph {
    pub fn new(node_count: usize, mut pairs: Vec<(u32, u32)>) -> Self {
        pairs.retain(|(i, j)| i != j);
        let edges = pairs
            .into_iter()
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        Self { node_count, edges }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, i: u32, j: u32) -> bool {
        i != j && self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Edges as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.edges.iter().copied()
    }

    pub fn degree(&self, i: u32) -> usize {
        self.edges
            .iter()
            .filter(|(a, b)| *a == i || *b == i)
            .count()
    }
}

struct ValidPixel {
    x: u32,
    y: u32,
    pos: Vector3<f64>,
    intensity: f64,
    cell_index: u32,
}

#[derive(Clone)]
struct Seed {
    pos: Vector3<f64>,
    intensity: f64,
    members: usize,
}

type Cell = (i64, i64, i64);

fn cell_of(p: &Vector3<f64>, origin: &Vector3<f64>, res: f64) -> Cell {
    (
        ((p.x - origin.x) / res).floor() as i64,
        ((p.y - origin.y) / res).floor() as i64,
        ((p.z - origin.z) / res).floor() as i64,
    )
}

#[inline]
fn feature_distance(
    pos: &Vector3<f64>,
    intensity: f64,
    seed: &Seed,
    params: &ClusteringParams,
) -> f64 {
    let d = pos - seed.pos;
    let di = intensity - seed.intensity;
    params.spatial_weight * d.norm_squared() + params.intensity_weight * di * di
}

/// Over-segment a frame and also return the total assignment cost after each
/// k-means assignment step (non-increasing).
pub fn cluster_frame_with_costs(
    frame: &RgbdFrame,
    params: &ClusteringParams,
) -> Result<(ClusterSet, Vec<f64>), ClusterError> {
    let k = &frame.intrinsics;
    let res = params.seed_resolution;

    // Back-project the valid cloud.
    let mut pixels: Vec<ValidPixel> = Vec::new();
    for (x, y, &d) in frame.depth.iter_pixels() {
        if d > 0.0 {
            let pos = backproject(&Pixel::new(x as f64, y as f64), d, k)
                .expect("valid depth must backproject");
            pixels.push(ValidPixel {
                x: x as u32,
                y: y as u32,
                pos,
                intensity: frame.intensity.get(x, y),
                cell_index: 0,
            });
        }
    }
    if pixels.is_empty() {
        return Err(ClusterError::EmptyCloud);
    }

    let origin = {
        let mut m = pixels[0].pos;
        for p in &pixels {
            m.x = m.x.min(p.pos.x);
            m.y = m.y.min(p.pos.y);
            m.z = m.z.min(p.pos.z);
        }
        m
    };

    // Seed per occupied grid cell, initialized to the cell mean; seed order
    // follows sorted cell coordinates so ids are deterministic.
    let mut accum: BTreeMap<Cell, (Vector3<f64>, f64, usize)> = BTreeMap::new();
    for p in &pixels {
        let c = cell_of(&p.pos, &origin, res);
        let e = accum.entry(c).or_insert((Vector3::zeros(), 0.0, 0));
        e.0 += p.pos;
        e.1 += p.intensity;
        e.2 += 1;
    }
    let mut seeds: Vec<Seed> = accum
        .values()
        .map(|(pos, int, n)| Seed {
            pos: pos / *n as f64,
            intensity: int / *n as f64,
            members: 0,
        })
        .collect();

    // Distinct pixel cells and per-pixel cell indices (fixed across
    // iterations: pixel positions do not move).
    let cell_list: Vec<Cell> = accum.keys().copied().collect();
    let cell_lookup: HashMap<Cell, u32> = cell_list
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, i as u32))
        .collect();
    for p in &mut pixels {
        p.cell_index = cell_lookup[&cell_of(&p.pos, &origin, res)];
    }

    const UNASSIGNED: u32 = u32::MAX;
    let mut labels: Vec<u32> = vec![UNASSIGNED; pixels.len()];
    let mut costs: Vec<f64> = Vec::new();

    for _iter in 0..params.max_kmeans_iters.max(1) {
        // Seeds hashed by their current cell.
        let mut seeds_by_cell: HashMap<Cell, Vec<u32>> = HashMap::new();
        for (i, s) in seeds.iter().enumerate() {
            seeds_by_cell
                .entry(cell_of(&s.pos, &origin, res))
                .or_default()
                .push(i as u32);
        }

        // Candidate seeds per distinct pixel cell: the 3x3x3 cell
        // neighborhood, sorted by seed id so ties break to the lowest id.
        let candidates: Vec<Vec<u32>> = cell_list
            .iter()
            .map(|&(cx, cy, cz)| {
                let mut list = Vec::new();
                for dz in -1..=1 {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            if let Some(ids) = seeds_by_cell.get(&(cx + dx, cy + dy, cz + dz)) {
                                list.extend_from_slice(ids);
                            }
                        }
                    }
                }
                list.sort_unstable();
                list
            })
            .collect();

        // Assignment. Including the pixel's current seed in its candidate
        // set keeps the total cost non-increasing even when that seed drifts
        // out of the neighborhood.
        let new_labels: Vec<u32> = pixels
            .par_iter()
            .zip(labels.par_iter())
            .map(|(p, &current)| {
                let mut best = UNASSIGNED;
                let mut best_d = f64::INFINITY;
                if current != UNASSIGNED {
                    best = current;
                    best_d =
                        feature_distance(&p.pos, p.intensity, &seeds[current as usize], params);
                }
                for &sid in &candidates[p.cell_index as usize] {
                    if sid == best {
                        continue;
                    }
                    let d = feature_distance(&p.pos, p.intensity, &seeds[sid as usize], params);
                    if d < best_d || (d == best_d && sid < best) {
                        best = sid;
                        best_d = d;
                    }
                }
                if best == UNASSIGNED {
                    // No seed in the neighborhood; fall back to a full scan.
                    for (sid, s) in seeds.iter().enumerate() {
                        let d = feature_distance(&p.pos, p.intensity, s, params);
                        if d < best_d {
                            best = sid as u32;
                            best_d = d;
                        }
                    }
                }
                best
            })
            .collect();

        let cost: f64 = pixels
            .iter()
            .zip(&new_labels)
            .map(|(p, &l)| feature_distance(&p.pos, p.intensity, &seeds[l as usize], params))
            .sum();
        costs.push(cost);

        let changed = new_labels != labels;
        labels = new_labels;

        // Update step: means per cluster, accumulated in row-major pixel
        // order for reproducibility.
        let mut sums: Vec<(Vector3<f64>, f64, usize)> =
            vec![(Vector3::zeros(), 0.0, 0); seeds.len()];
        for (p, &l) in pixels.iter().zip(&labels) {
            let e = &mut sums[l as usize];
            e.0 += p.pos;
            e.1 += p.intensity;
            e.2 += 1;
        }
        for (s, (pos, int, n)) in seeds.iter_mut().zip(&sums) {
            s.members = *n;
            if *n > 0 {
                s.pos = pos / *n as f64;
                s.intensity = int / *n as f64;
            }
        }

        if !changed {
            break;
        }
    }

    // Compact: drop empty clusters, keep ascending seed order.
    let mut remap: Vec<i32> = vec![-1; seeds.len()];
    let mut clusters: Vec<ClusterInfo> = Vec::new();
    for (i, s) in seeds.iter().enumerate() {
        if s.members > 0 {
            remap[i] = clusters.len() as i32;
            clusters.push(ClusterInfo {
                size: s.members,
                centroid: s.pos,
                mean_depth: 0.0,
                mean_intensity: s.intensity,
            });
        }
    }
    // Mean depth per cluster from the assigned pixels.
    {
        let mut depth_sums = vec![0.0f64; clusters.len()];
        for (p, &l) in pixels.iter().zip(&labels) {
            depth_sums[remap[l as usize] as usize] += p.pos.z;
        }
        for (c, s) in clusters.iter_mut().zip(&depth_sums) {
            c.mean_depth = s / c.size as f64;
        }
    }

    let mut label_img = Grid::filled(frame.width(), frame.height(), -1i32);
    for (p, &l) in pixels.iter().zip(&labels) {
        label_img.set(p.x as usize, p.y as usize, remap[l as usize]);
    }

    Ok((
        ClusterSet {
            labels: label_img,
            clusters,
            seed_resolution: res,
        },
        costs,
    ))
}

/// Over-segment a frame's valid-depth pixels. Deterministic for identical
/// inputs and parameters.
pub fn cluster_frame(
    frame: &RgbdFrame,
    params: &ClusteringParams,
) -> Result<ClusterSet, ClusterError> {
    cluster_frame_with_costs(frame, params).map(|(c, _)| c)
}

/// Build the cluster adjacency graph: clusters are connected when they own
/// 4-neighbor pixel pairs in the label image and their centroids are within
/// `2 * seed_resolution`. The centroid guard prevents adjacency across depth
/// discontinuities, which would smear dynamic scores onto occluded
/// background.
pub fn build_adjacency(clusters: &ClusterSet) -> AdjacencyGraph {
    let labels = &clusters.labels;
    let (w, h) = (labels.width(), labels.height());
    let max_dist = 2.0 * clusters.seed_resolution;
    let mut pairs: BTreeSet<(u32, u32)> = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = labels.get(x, y);
            if a < 0 {
                continue;
            }
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx >= w || ny >= h {
                    continue;
                }
                let b = labels.get(nx, ny);
                if b < 0 || b == a {
                    continue;
                }
                let (i, j) = (a.min(b) as u32, a.max(b) as u32);
                pairs.insert((i, j));
            }
        }
    }
    let edges: Vec<(u32, u32)> = pairs
        .into_iter()
        .filter(|&(i, j)| {
            let d = clusters.clusters[i as usize].centroid - clusters.clusters[j as usize].centroid;
            d.norm() <= max_dist
        })
        .collect();
    AdjacencyGraph::new(clusters.len(), edges)
}

/// Debug dump of the label image as a 16-bit PNG (label + 1; unlabeled = 0).
pub fn write_label_png(
    clusters: &ClusterSet,
    path: &std::path::Path,
) -> Result<(), crate::dataset::DatasetError> {
    let labels = clusters.labels();
    let buf = image::ImageBuffer::from_fn(labels.width() as u32, labels.height() as u32, |x, y| {
        let l = labels.get(x as usize, y as usize);
        image::Luma([if l < 0 { 0u16 } else { (l + 1).min(65535) as u16 }])
    });
    buf.save(path)
        .map_err(|e| crate::dataset::DatasetError::ImageFormat {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PinholeIntrinsics;

    fn frame_from_depth(depth: Grid<f64>, intensity: Grid<f64>) -> RgbdFrame {
        let k = PinholeIntrinsics::new(
            100.0,
            100.0,
            depth.width() as f64 / 2.0,
            depth.height() as f64 / 2.0,
            depth.width(),
            depth.height(),
        )
        .unwrap();
        RgbdFrame::new(0.0, intensity, depth, k).unwrap()
    }

    #[test]
    fn constant_frame_with_huge_seed_is_one_cluster() {
        let frame = frame_from_depth(Grid::filled(32, 24, 2.0), Grid::filled(32, 24, 0.5));
        let params = ClusteringParams {
            seed_resolution: 100.0,
            ..Default::default()
        };
        let set = cluster_frame(&frame, &params).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.clusters()[0].size, 32 * 24);
        assert!(set.labels().as_slice().iter().all(|&l| l == 0));
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let frame = frame_from_depth(Grid::filled(8, 8, 0.0), Grid::filled(8, 8, 0.5));
        assert!(matches!(
            cluster_frame(&frame, &ClusteringParams::default()),
            Err(ClusterError::EmptyCloud)
        ));
    }

    fn two_plane_frame() -> RgbdFrame {
        // left half z=1, right half z=3
        let depth = Grid::from_fn(64, 48, |x, _| if x < 32 { 1.0 } else { 3.0 });
        let intensity = Grid::filled(64, 48, 0.5);
        frame_from_depth(depth, intensity)
    }

    #[test]
    fn clusters_do_not_straddle_separated_planes() {
        let frame = two_plane_frame();
        let params = ClusteringParams {
            seed_resolution: 0.5,
            ..Default::default()
        };
        let set = cluster_frame(&frame, &params).unwrap();
        let mut plane_of_cluster: Vec<Option<bool>> = vec![None; set.len()];
        for (x, _y, &l) in set.labels().iter_pixels() {
            if l < 0 {
                continue;
            }
            let left = x < 32;
            match plane_of_cluster[l as usize] {
                None => plane_of_cluster[l as usize] = Some(left),
                Some(p) => assert_eq!(p, left, "cluster {l} spans both planes"),
            }
        }
    }

    #[test]
    fn partition_covers_exactly_the_valid_pixels() {
        let mut depth = Grid::from_fn(40, 30, |x, y| 1.0 + 0.01 * ((x + y) % 7) as f64);
        depth.set(5, 5, 0.0);
        depth.set(20, 10, 0.0);
        let intensity = Grid::from_fn(40, 30, |x, y| ((x * y) % 13) as f64 / 13.0);
        let frame = frame_from_depth(depth, intensity);
        let params = ClusteringParams {
            seed_resolution: 0.2,
            ..Default::default()
        };
        let set = cluster_frame(&frame, &params).unwrap();
        let valid = frame.valid_depth_count();
        let total: usize = set.clusters().iter().map(|c| c.size).sum();
        assert_eq!(total, valid);
        for (x, y, &l) in set.labels().iter_pixels() {
            assert_eq!(l >= 0, frame.depth.get(x, y) > 0.0);
        }
        for c in set.clusters() {
            assert!(c.size >= 1);
            assert!(c.mean_depth > 0.0);
        }
    }

    #[test]
    fn assignment_cost_is_monotone_nonincreasing() {
        let depth = Grid::from_fn(64, 48, |x, y| {
            1.0 + 0.3 * (x as f64 / 64.0) + 0.2 * ((y / 8) % 2) as f64
        });
        let intensity = Grid::from_fn(64, 48, |x, y| ((x ^ y) % 17) as f64 / 17.0);
        let frame = frame_from_depth(depth, intensity);
        let params = ClusteringParams {
            seed_resolution: 0.15,
            ..Default::default()
        };
        let (_, costs) = cluster_frame_with_costs(&frame, &params).unwrap();
        assert!(costs.len() >= 2);
        for w in costs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "cost increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let depth = Grid::from_fn(48, 36, |x, y| 1.0 + ((x * 7 + y * 3) % 11) as f64 * 0.05);
        let intensity = Grid::from_fn(48, 36, |x, y| ((x + 2 * y) % 19) as f64 / 19.0);
        let frame = frame_from_depth(depth, intensity);
        let params = ClusteringParams {
            seed_resolution: 0.25,
            ..Default::default()
        };
        let a = cluster_frame(&frame, &params).unwrap();
        let b = cluster_frame(&frame, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_cluster_has_empty_graph() {
        let frame = frame_from_depth(Grid::filled(16, 16, 1.0), Grid::filled(16, 16, 0.5));
        let params = ClusteringParams {
            seed_resolution: 50.0,
            ..Default::default()
        };
        let set = cluster_frame(&frame, &params).unwrap();
        let g = build_adjacency(&set);
        assert_eq!(g.node_count(), 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn same_depth_halves_share_one_edge() {
        let depth = Grid::filled(64, 16, 1.0);
        let intensity = Grid::filled(64, 16, 0.5);
        let frame = frame_from_depth(depth, intensity);
        // cloud spans 0.64 m in x at z=1 with fx=100; a 0.35 m seed grid
        // yields exactly two side-by-side cells
        let params = ClusteringParams {
            seed_resolution: 0.35,
            ..Default::default()
        };
        let set = cluster_frame(&frame, &params).unwrap();
        assert_eq!(set.len(), 2, "expected a left/right split");
        let g = build_adjacency(&set);
        assert_eq!(g.edge_count(), 1);
        assert!(g.contains(0, 1));
        assert!(!g.contains(0, 0));
    }

    #[test]
    fn depth_gap_suppresses_adjacency() {
        let frame = two_plane_frame();
        let params = ClusteringParams {
            seed_resolution: 0.3,
            ..Default::default()
        };
        let set = cluster_frame(&frame, &params).unwrap();
        let g = build_adjacency(&set);
        // no edge may bridge the z=1 and z=3 planes: their centroids are
        // about 2 m apart in z, far beyond 2 * 0.3 m
        for (i, j) in g.edges() {
            let dz = (set.clusters()[i as usize].centroid.z
                - set.clusters()[j as usize].centroid.z)
                .abs();
            assert!(dz < 1.0, "edge ({i}, {j}) bridges the depth gap");
        }
        assert!(set.len() >= 4);
        assert!(g.edge_count() >= 1);
    }

    #[test]
    fn graph_edges_are_symmetric_and_irreflexive() {
        let g = AdjacencyGraph::new(4, vec![(1, 0), (2, 2), (3, 1), (0, 1)]);
        assert_eq!(g.edge_count(), 2);
        assert!(g.contains(0, 1) && g.contains(1, 0));
        assert!(!g.contains(2, 2));
    }
}
