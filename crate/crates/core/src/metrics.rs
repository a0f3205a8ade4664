//! Reconstruction metrics: Chamfer distance, F-score, and mesh boundary /
//! topology statistics.
//!
//! Chamfer distance here is the symmetric mean of squared nearest-neighbor
//! Euclidean distances over two point sets, in normalized-domain units;
//! reports scale it by 1e4. (The squared convention keeps sampled-cloud
//! comparisons meaningful at the default 100k samples: the unsquared mean
//! has a sampling-density floor orders of magnitude above the fitted
//! reconstruction error.) F-scores are reported in [0, 100] (the [0, 1]
//! harmonic mean scaled by 1e2).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flexicubes::TriangleMesh;
use crate::grid::PointCloud;
use crate::math::Vec3;
use crate::meshio::sample_surface;

const LEAF_SIZE: usize = 16;

enum KdNode {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: usize,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Exact nearest-neighbor index over a fixed point set (kd-tree with median
/// splits). Queries return the true minimum distance.
pub struct NearestIndex {
    points: Vec<Vec3>,
    order: Vec<u32>,
    nodes: Vec<KdNode>,
    root: u32,
}

impl NearestIndex {
    pub fn build(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cannot index an empty point set"));
        }
        let mut index = Self {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        let n = index.order.len();
        index.root = index.build_node(0, n);
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return (self.nodes.len() - 1) as u32;
        }
        // Split on the widest axis at the median.
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            let p = self.points[i as usize];
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        let ext = hi - lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis]
                .partial_cmp(&points[b as usize][axis])
                .unwrap()
        });
        let value = self.points[self.order[mid] as usize][axis];
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes.push(KdNode::Split {
            axis,
            value,
            left,
            right,
        });
        (self.nodes.len() - 1) as u32
    }

    /// Distance to and index of the nearest indexed point.
    pub fn nearest(&self, query: &Vec3) -> (f64, u32) {
        let mut best_d2 = f64::INFINITY;
        let mut best_idx = 0u32;
        self.search(self.root, query, &mut best_d2, &mut best_idx);
        (best_d2.sqrt(), best_idx)
    }

    fn search(&self, node: u32, q: &Vec3, best_d2: &mut f64, best_idx: &mut u32) {
        match &self.nodes[node as usize] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[*start as usize..*end as usize] {
                    let d2 = (self.points[i as usize] - q).norm_squared();
                    if d2 < *best_d2 {
                        *best_d2 = d2;
                        *best_idx = i;
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 { (*left, *right) } else { (*right, *left) };
                self.search(near, q, best_d2, best_idx);
                if diff * diff < *best_d2 {
                    self.search(far, q, best_d2, best_idx);
                }
            }
        }
    }
}

fn mean_nearest_sq(from: &PointCloud, to_index: &NearestIndex) -> f64 {
    let dists: Vec<f64> = from
        .points()
        .par_iter()
        .map(|p| {
            let d = to_index.nearest(p).0;
            d * d
        })
        .collect();
    dists.iter().sum::<f64>() / dists.len() as f64
}

/// Symmetric Chamfer distance over squared nearest-neighbor distances:
/// `0.5 * (mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2)`.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("chamfer distance needs two non-empty clouds"));
    }
    let ia = NearestIndex::build(a.points())?;
    let ib = NearestIndex::build(b.points())?;
    Ok(0.5 * (mean_nearest_sq(a, &ib) + mean_nearest_sq(b, &ia)))
}

/// F-score at distance threshold `tau`, in [0, 100]. Precision is the
/// fraction of `a` within `tau` of `b`; recall the reverse.
pub fn fscore(a: &PointCloud, b: &PointCloud, tau: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("f-score needs two non-empty clouds"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("f-score threshold must be positive"));
    }
    let ia = NearestIndex::build(a.points())?;
    let ib = NearestIndex::build(b.points())?;
    let within = |from: &PointCloud, idx: &NearestIndex| {
        let hits: Vec<bool> = from
            .points()
            .par_iter()
            .map(|p| idx.nearest(p).0 <= tau)
            .collect();
        hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
    };
    let precision = within(a, &ib);
    let recall = within(b, &ia);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Metric summary in the scaled reporting convention: Chamfer distance
/// multiplied by 1e4, F-scores by 1e2.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub cd_e4: f64,
    pub f1_001: f64,
    pub f1_01: f64,
    pub samples_a: usize,
    pub samples_b: usize,
    pub seed: u64,
}

/// Samples both meshes (`samples` points each, seeded) and evaluates the
/// standard report: scaled Chamfer distance plus F-scores at 0.001 and 0.01.
pub fn mesh_metric_report(
    a: &TriangleMesh,
    b: &TriangleMesh,
    samples: usize,
    seed: u64,
) -> Result<MetricReport> {
    let pa = sample_surface(a, samples, seed)?;
    let pb = sample_surface(b, samples, seed.wrapping_add(1))?;
    point_metric_report(&pa, &pb, seed)
}

pub fn point_metric_report(pa: &PointCloud, pb: &PointCloud, seed: u64) -> Result<MetricReport> {
    Ok(MetricReport {
        cd_e4: chamfer(pa, pb)? * 1e4,
        f1_001: fscore(pa, pb, 0.001)?,
        f1_01: fscore(pa, pb, 0.01)?,
        samples_a: pa.len(),
        samples_b: pb.len(),
        seed,
    })
}

/// Edge-incidence census of a triangle mesh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryStats {
    /// Edges incident to exactly one face.
    pub boundary_edges: usize,
    /// Connected components of the boundary-edge graph.
    pub boundary_loops: usize,
    /// V - E + F over referenced vertices, unique edges, and faces.
    pub euler_characteristic: i64,
    /// Connected components of the face-edge graph.
    pub connected_components: usize,
    /// Edges incident to three or more faces.
    pub nonmanifold_edges: usize,
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            self.parent[x as usize] = self.parent[self.parent[x as usize] as usize];
            x = self.parent[x as usize];
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra as usize] = rb;
        }
    }
}

pub fn boundary_stats(mesh: &TriangleMesh) -> BoundaryStats {
    use std::collections::HashMap;
    let mut edge_count: HashMap<(u32, u32), u32> = HashMap::new();
    let mut referenced = vec![false; mesh.vertices.len()];
    for t in &mesh.triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            referenced[a as usize] = true;
            *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }

    let n_ref = referenced.iter().filter(|&&r| r).count();
    let n_edges = edge_count.len();
    let n_faces = mesh.triangles.len();
    let boundary: Vec<(u32, u32)> = edge_count
        .iter()
        .filter(|(_, &c)| c == 1)
        .map(|(&e, _)| e)
        .collect();
    let nonmanifold = edge_count.values().filter(|&&c| c >= 3).count();

    // Boundary loops: components of the graph spanned by boundary edges.
    let mut uf = UnionFind::new(mesh.vertices.len());
    for &(a, b) in &boundary {
        uf.union(a, b);
    }
    let mut loop_roots = std::collections::HashSet::new();
    for &(a, _) in &boundary {
        let root = uf.find(a);
        loop_roots.insert(root);
    }

    // Mesh components over all (non-boundary and boundary) edges.
    let mut cf = UnionFind::new(mesh.vertices.len());
    for (&(a, b), _) in &edge_count {
        cf.union(a, b);
    }
    let mut comp_roots = std::collections::HashSet::new();
    for (v, &r) in referenced.iter().enumerate() {
        if r {
            comp_roots.insert(cf.find(v as u32));
        }
    }

    BoundaryStats {
        boundary_edges: boundary.len(),
        boundary_loops: loop_roots.len(),
        euler_characteristic: n_ref as i64 - n_edges as i64 + n_faces as i64,
        connected_components: comp_roots.len(),
        nonmanifold_edges: nonmanifold,
    }
}
