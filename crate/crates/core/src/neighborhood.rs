//! Per-vertex tangent frames, projected neighborhoods, local Delaunay
//! triangulations and one-rings.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::delaunay::{self, DelaunayOptions};
use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::model::{Config, PointCloud, Vec2, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame {
    pub origin: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    /// Estimated normal.
    pub e3: Vec3,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalRing {
    pub center: usize,
    /// Global index triples, each containing `center`.
    pub triangles: Vec<[usize; 3]>,
    /// Sorted non-center vertices of `triangles`.
    pub neighbors: Vec<usize>,
}

impl LocalRing {
    pub fn new(center: usize, triangles: Vec<[usize; 3]>) -> Self {
        let mut neighbors: Vec<usize> = triangles.iter().flat_map(|t| t.iter().copied()).filter(|&v| v != center).collect();
        neighbors.sort_unstable();
        neighbors.dedup();
        LocalRing { center, triangles, neighbors }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

/// Projected coordinates of a neighborhood; `indices[0]` is the center.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalChart {
    pub indices: Vec<usize>,
    pub coords: Vec<Vec2>,
}

impl LocalChart {
    pub fn pos(&self, global: usize) -> Option<Vec2> {
        self.indices.iter().position(|&g| g == global).map(|l| self.coords[l])
    }

    pub fn at(&self, global: usize) -> Vec2 {
        self.pos(global).expect("ring vertex missing from its chart")
    }
}

/// Everything the per-vertex stage produces for one vertex.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub frame: TangentFrame,
    pub chart: LocalChart,
    /// One-ring before the angle criterion.
    pub raw_ring: LocalRing,
    /// One-ring used for the Laplacian.
    pub ring: LocalRing,
}

/// Nearest-neighbor index over a cloud.
pub struct KnnIndex<'a> {
    tree: KdTree<'a>,
    n: usize,
}

impl<'a> KnnIndex<'a> {
    pub fn new(pc: &'a PointCloud) -> Self {
        KnnIndex {
            tree: KdTree::new(&pc.points),
            n: pc.points.len(),
        }
    }

    pub fn query(&self, pc: &PointCloud, i: usize, k: usize) -> Result<Vec<usize>> {
        if k >= self.n {
            return Err(Error::KTooLarge { k, n: self.n });
        }
        Ok(self.tree.nearest(&pc.points[i], k, Some(i)))
    }
}

/// The `k` nearest vertices of vertex `i`, excluding `i`; ties go to the
/// smaller index.
pub fn knn(pc: &PointCloud, i: usize, k: usize) -> Result<Vec<usize>> {
    KnnIndex::new(pc).query(pc, i, k)
}

/// kNN lists of every vertex.
pub fn knn_all(pc: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    let index = KnnIndex::new(pc);
    (0..pc.len()).into_par_iter().map(|i| index.query(pc, i, k)).collect()
}

fn canonical_sign(v: Vec3) -> Vec3 {
    if v[v.iamax()] < 0.0 {
        -v
    } else {
        v
    }
}

/// Principal directions of the neighbor covariance, origin at vertex `i`.
pub fn pca_frame(pc: &PointCloud, i: usize, nbrs: &[usize]) -> Result<TangentFrame> {
    if nbrs.len() < 3 {
        return Err(Error::DegenerateNeighborhood(i));
    }
    let m = nbrs.len() as f64;
    let mean = nbrs.iter().fold(Vec3::zeros(), |acc, &j| acc + pc.points[j]) / m;
    let mut cov = Matrix3::zeros();
    for &j in nbrs {
        let d = pc.points[j] - mean;
        cov += d * d.transpose();
    }
    cov /= m;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lam: Vec<f64> = order.iter().map(|&o| eig.eigenvalues[o]).collect();
    if !(lam[0] > 0.0) || (lam[1] < 1e-12 * lam[0] && lam[2] < 1e-12 * lam[0]) {
        return Err(Error::DegenerateNeighborhood(i));
    }
    let e3 = canonical_sign(eig.eigenvectors.column(order[2]).into_owned().normalize());
    let mut e1: Vec3 = eig.eigenvectors.column(order[0]).into_owned();
    e1 = canonical_sign((e1 - e3 * e3.dot(&e1)).normalize());
    let e2 = e3.cross(&e1);
    Ok(TangentFrame {
        origin: pc.points[i],
        e1,
        e2,
        e3,
    })
}

/// Tangent-plane coordinates of `nbrs` relative to the frame origin.
pub fn project_to_tangent(frame: &TangentFrame, nbrs: &[usize], pc: &PointCloud) -> Vec<Vec2> {
    nbrs.iter()
        .map(|&j| {
            let d = pc.points[j] - frame.origin;
            Vec2::new(d.dot(&frame.e1), d.dot(&frame.e2))
        })
        .collect()
}

/// Delaunay triangulation of projected points, indices local to `points2d`.
pub fn local_delaunay(points2d: &[Vec2]) -> Result<Vec<[usize; 3]>> {
    let keys: Vec<u64> = (0..points2d.len() as u64).collect();
    local_delaunay_keyed(points2d, &keys)
}

/// As [`local_delaunay`], resolving cocircular ties with the given keys.
pub fn local_delaunay_keyed(points2d: &[Vec2], keys: &[u64]) -> Result<Vec<[usize; 3]>> {
    delaunay::triangulate(points2d, keys, DelaunayOptions::default())
}

/// Triangles incident to vertex `i`.
pub fn one_ring(i: usize, tris: &[[usize; 3]]) -> Result<LocalRing> {
    let triangles: Vec<[usize; 3]> = tris.iter().filter(|t| t.contains(&i)).copied().collect();
    if triangles.is_empty() {
        return Err(Error::IsolatedVertex(i));
    }
    Ok(LocalRing::new(i, triangles))
}

/// Interior angle at `at` in the triangle (at, b, c), degrees.
fn angle_deg(at: Vec2, b: Vec2, c: Vec2) -> f64 {
    let u = b - at;
    let v = c - at;
    let cross = u.x * v.y - u.y * v.x;
    cross.abs().atan2(u.dot(&v)).to_degrees()
}

/// Angle of a ring triangle at the ring center in the projected plane, degrees.
pub fn center_angle(center: usize, tri: &[usize; 3], chart: &LocalChart) -> f64 {
    let others: Vec<usize> = tri.iter().copied().filter(|&v| v != center).collect();
    angle_deg(chart.at(center), chart.at(others[0]), chart.at(others[1]))
}

/// Removes ring triangles whose center angle fails c1 < θ < c2.
pub fn apply_angle_criterion(ring: &LocalRing, uv: &LocalChart, c1: f64, c2: f64) -> LocalRing {
    apply_angle_criterion_with(ring, uv, c1, c2, false)
}

/// Angle criterion; with `all_angles` every angle of the triangle is tested.
pub fn apply_angle_criterion_with(ring: &LocalRing, uv: &LocalChart, c1: f64, c2: f64, all_angles: bool) -> LocalRing {
    let inside = |theta: f64| c1 < theta && theta < c2;
    let kept = ring
        .triangles
        .iter()
        .filter(|t| {
            if all_angles {
                let p = [uv.at(t[0]), uv.at(t[1]), uv.at(t[2])];
                (0..3).all(|a| inside(angle_deg(p[a], p[(a + 1) % 3], p[(a + 2) % 3])))
            } else {
                inside(center_angle(ring.center, t, uv))
            }
        })
        .copied()
        .collect();
    LocalRing::new(ring.center, kept)
}

/// Frame, chart and (filtered) one-ring of vertex `i` from its kNN list.
pub fn build_neighborhood(pc: &PointCloud, i: usize, knn: &[usize], is_boundary: bool, cfg: &Config) -> Result<Neighborhood> {
    let mut indices = Vec::with_capacity(knn.len() + 1);
    indices.push(i);
    indices.extend(knn.iter().copied().filter(|&j| j != i));
    let frame = pca_frame(pc, i, &indices)?;
    let coords = project_to_tangent(&frame, &indices, pc);
    let keys: Vec<u64> = indices.iter().map(|&g| g as u64).collect();
    let local = local_delaunay_keyed(&coords, &keys)?;
    let global: Vec<[usize; 3]> = local.iter().map(|t| [indices[t[0]], indices[t[1]], indices[t[2]]]).collect();
    let raw_ring = one_ring(i, &global)?;
    let chart = LocalChart { indices, coords };
    let ring = if is_boundary {
        let filtered = apply_angle_criterion_with(&raw_ring, &chart, cfg.c1, cfg.c2, cfg.all_angles);
        if filtered.is_empty() {
            let best = raw_ring
                .triangles
                .iter()
                .copied()
                .max_by(|a, b| center_angle(i, a, &chart).total_cmp(&center_angle(i, b, &chart)))
                .expect("raw ring is nonempty");
            LocalRing::new(i, vec![best])
        } else {
            filtered
        }
    } else {
        raw_ring.clone()
    };
    Ok(Neighborhood { frame, chart, raw_ring, ring })
}

/// Per-vertex neighborhoods for a whole cloud, computed in parallel.
pub fn build_all(pc: &PointCloud, knn: &[Vec<usize>], cfg: &Config) -> Result<Vec<Neighborhood>> {
    let mask = pc.boundary_mask();
    (0..pc.len())
        .into_par_iter()
        .map(|i| build_neighborhood(pc, i, &knn[i], mask[i], cfg))
        .collect()
}
