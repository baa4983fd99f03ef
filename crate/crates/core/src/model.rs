//! Core domain types and input validation.

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;

/// Sampled surface with an oriented boundary loop.
///
/// The boundary is expected to run counterclockwise with respect to the
/// outward surface orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub boundary: Vec<usize>,
}

impl PointCloud {
    /// Builds a cloud and rejects it unless every invariant holds.
    pub fn new(points: Vec<Vec3>, boundary: Vec<usize>) -> Result<Self> {
        let pc = PointCloud { points, boundary };
        let report = validate_point_cloud(&pc);
        if report.ok {
            Ok(pc)
        } else {
            Err(Error::Data(report.messages.join("; ")))
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Per-vertex flag marking boundary membership.
    pub fn boundary_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.points.len()];
        for &b in &self.boundary {
            if b < mask.len() {
                mask[b] = true;
            }
        }
        mask
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Length of the bounding-box diagonal.
    pub fn bbox_diagonal(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }
}

/// Parameters of the per-vertex neighborhood construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Config {
    pub k: usize,
    /// Lower bound of the boundary angle criterion, degrees.
    pub c1: f64,
    /// Upper bound of the boundary angle criterion, degrees.
    pub c2: f64,
    /// Test all three triangle angles instead of only the center angle.
    pub all_angles: bool,
    /// Clamp cotangents to `COT_CLAMP`.
    pub clamp_cot: bool,
    /// Skip degenerate projected triangles when building stencils.
    pub skip_degenerate: bool,
    /// Weight per-triangle Beltrami coefficients by chart area.
    pub area_weighted_mu: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            k: 25,
            c1: 15.0,
            c2: 120.0,
            all_angles: false,
            clamp_cot: true,
            skip_degenerate: true,
            area_weighted_mu: true,
        }
    }
}

impl Config {
    pub fn with_angles(mut self, c1: f64, c2: f64) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 7 {
            return Err(Error::Config(format!("k must be at least 7, got {}", self.k)));
        }
        if !(self.c1.is_finite() && self.c2.is_finite()) {
            return Err(Error::Config("angle bounds must be finite".into()));
        }
        if !(0.0 <= self.c1 && self.c1 < self.c2 && self.c2 <= 180.0) {
            return Err(Error::Config(format!(
                "angle bounds must satisfy 0 <= c1 < c2 <= 180, got ({}, {})",
                self.c1, self.c2
            )));
        }
        Ok(())
    }
}

/// Planar coordinates per vertex, indexed like the source cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameterization {
    pub uv: Vec<Vec2>,
}

impl Parameterization {
    pub fn is_finite(&self) -> bool {
        self.uv.iter().all(|p| p.x.is_finite() && p.y.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub boundary: Vec<usize>,
}

impl TriangleMesh {
    /// Checks index ranges and face non-degeneracy.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::Data(format!("face {fi} has an index out of range")));
            }
            let a = self.vertices[f[1]] - self.vertices[f[0]];
            let b = self.vertices[f[2]] - self.vertices[f[0]];
            if a.cross(&b).norm() <= 0.0 {
                return Err(Error::DegenerateFace(fi));
            }
        }
        Ok(())
    }
}

/// Sparse matrix in coordinate form, kept sorted by (row, col) with
/// duplicates summed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseOperator {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseOperator {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    /// Sums duplicates in the order they appear in `triplets`.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            debug_assert!(r < rows && c < cols);
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        SparseOperator { rows, cols, entries }
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        match self.entries.binary_search_by_key(&(r, c), |&(er, ec, _)| (er, ec)) {
            Ok(i) => self.entries[i].2,
            Err(_) => 0.0,
        }
    }

    /// Entries of row `r` as (col, value).
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let start = self.entries.partition_point(|e| e.0 < r);
        self.entries[start..].iter().take_while(move |e| e.0 == r).map(|&(_, c, v)| (c, v))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let t = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        SparseOperator::from_triplets(self.cols, self.rows, t)
    }

    pub fn scaled(&self, s: f64) -> Self {
        SparseOperator {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|&(r, c, v)| (r, c, v * s)).collect(),
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.rows];
        for &(r, _, v) in &self.entries {
            s[r] += v;
        }
        s
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.2.is_finite())
    }

    /// Largest absolute deviation between `self` and its transpose.
    pub fn asymmetry(&self) -> f64 {
        self.entries.iter().map(|&(r, c, v)| (v - self.get(c, r)).abs()).fold(0.0, f64::max)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e.2 * e.2).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub ok: bool,
    pub messages: Vec<String>,
}

/// Diagnoses every violated invariant of a point cloud.
pub fn validate_point_cloud(pc: &PointCloud) -> ValidationReport {
    let n = pc.points.len();
    let mut messages = Vec::new();
    if n < 4 {
        messages.push(format!("too few points: {n} (need at least 4)"));
    }
    if pc.points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
        messages.push("non-finite coordinate".into());
    }
    let l = pc.boundary.len();
    if l < 3 {
        messages.push(format!("boundary loop too short: {l} (need at least 3)"));
    }
    let mut seen = vec![false; n];
    for &b in &pc.boundary {
        if b >= n {
            messages.push(format!("boundary index out of range: {b} (n = {n})"));
        } else if seen[b] {
            messages.push(format!("repeated boundary index: {b}"));
        } else {
            seen[b] = true;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let key = |i: usize| {
        let p = &pc.points[i];
        (p.x.to_bits(), p.y.to_bits(), p.z.to_bits())
    };
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&pc.points[a], &pc.points[b]);
        pa.x.total_cmp(&pb.x).then(pa.y.total_cmp(&pb.y)).then(pa.z.total_cmp(&pb.z))
    });
    for w in order.windows(2) {
        if pc.points[w[0]] == pc.points[w[1]] || key(w[0]) == key(w[1]) {
            let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
            messages.push(format!("duplicate point: vertices {a} and {b}"));
        }
    }
    ValidationReport {
        ok: messages.is_empty(),
        messages,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ]
    }

    #[test]
    fn tetrahedron_passes() {
        let pc = PointCloud {
            points: tetra(),
            boundary: vec![0, 1, 2],
        };
        let r = validate_point_cloud(&pc);
        assert!(r.ok, "{:?}", r.messages);
    }

    #[test]
    fn out_of_range_boundary_fails() {
        let pc = PointCloud {
            points: tetra(),
            boundary: vec![0, 1, 4],
        };
        let r = validate_point_cloud(&pc);
        assert!(!r.ok);
        assert!(r.messages.iter().any(|m| m.contains("index out of range")));
    }

    #[test]
    fn coincident_points_fail() {
        let mut pts = tetra();
        pts[3] = pts[1];
        let pc = PointCloud {
            points: pts,
            boundary: vec![0, 1, 2],
        };
        let r = validate_point_cloud(&pc);
        assert!(!r.ok);
        assert!(r.messages.iter().any(|m| m.contains("duplicate point")));
    }

    #[test]
    fn repeated_boundary_index_fails() {
        let pc = PointCloud {
            points: tetra(),
            boundary: vec![0, 1, 1],
        };
        assert!(!validate_point_cloud(&pc).ok);
    }

    #[test]
    fn config_bounds() {
        assert!(Config::default().validate().is_ok());
        assert!(Config::default().with_k(6).validate().is_err());
        assert!(Config::default().with_angles(20.0, 10.0).validate().is_err());
        assert!(Config::default().with_angles(0.0, 180.0).validate().is_ok());
    }

    #[test]
    fn sparse_duplicates_summed_and_sorted() {
        let op = SparseOperator::from_triplets(2, 2, vec![(1, 0, 1.0), (0, 1, 2.0), (1, 0, 3.0)]);
        assert_eq!(op.entries, vec![(0, 1, 2.0), (1, 0, 4.0)]);
        assert_eq!(op.get(1, 0), 4.0);
        assert_eq!(op.get(0, 0), 0.0);
        assert_eq!(op.mul_vec(&[1.0, 1.0]), vec![2.0, 4.0]);
        assert_eq!(op.row(1).collect::<Vec<_>>(), vec![(0, 4.0)]);
    }
}
