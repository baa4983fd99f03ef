//! Accumulated cotangent Laplacian of a point cloud and the classical mesh
//! cotangent Laplacian.

use crate::error::{Error, Result};
use crate::model::{SparseOperator, TriangleMesh, Vec2, Vec3};
use crate::neighborhood::{LocalChart, LocalRing};

/// Largest cotangent magnitude admitted when clamping is on.
pub const COT_CLAMP: f64 = 1e8;

/// Projected triangles with area at most this times the squared chart
/// diameter are skipped.
pub const DEGENERATE_AREA: f64 = 1e-14;

/// Cotangent stencil of one vertex's ring: 9 entries per triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentContribution {
    pub center: usize,
    pub entries: Vec<(usize, usize, f64)>,
    /// Triangles skipped as degenerate.
    pub skipped: usize,
}

fn cot(u: &Vec2, v: &Vec2, clamp: bool) -> f64 {
    let c = u.dot(v) / (u.x * v.y - u.y * v.x).abs();
    if clamp {
        c.clamp(-COT_CLAMP, COT_CLAMP)
    } else {
        c
    }
}

fn cot3(u: &Vec3, v: &Vec3) -> f64 {
    u.dot(v) / u.cross(v).norm()
}

/// Appends the 9-entry stencil of triangle `t` with cotangents `c`, where
/// `c[a]` is the cotangent of the angle at `t[a]`.
fn push_stencil(entries: &mut Vec<(usize, usize, f64)>, t: [usize; 3], c: [f64; 3]) {
    for a in 0..3 {
        let (i, j) = (t[(a + 1) % 3], t[(a + 2) % 3]);
        let w = 0.5 * c[a];
        entries.push((i, j, -w));
        entries.push((j, i, -w));
        entries.push((i, i, w));
        entries.push((j, j, w));
    }
}

fn chart_diameter(uv: &LocalChart) -> f64 {
    let mut lo = Vec2::repeat(f64::INFINITY);
    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
    for p in &uv.coords {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

/// Cotangent contribution of a ring, angles measured in its chart.
pub fn local_cotangent(ring: &LocalRing, uv: &LocalChart) -> CotangentContribution {
    local_cotangent_with(ring, uv, true, true)
}

pub fn local_cotangent_with(ring: &LocalRing, uv: &LocalChart, clamp: bool, skip_degenerate: bool) -> CotangentContribution {
    let diam2 = chart_diameter(uv).powi(2);
    let mut entries = Vec::with_capacity(12 * ring.triangles.len());
    let mut skipped = 0;
    for &t in &ring.triangles {
        let p: Vec<Vec2> = t.iter().map(|&g| uv.pos(g).expect("ring vertex missing from chart")).collect();
        let area = 0.5 * ((p[1] - p[0]).perp(&(p[2] - p[0]))).abs();
        if skip_degenerate && area <= DEGENERATE_AREA * diam2 {
            skipped += 1;
            continue;
        }
        let mut c = [0.0; 3];
        for a in 0..3 {
            let u = p[(a + 1) % 3] - p[a];
            let v = p[(a + 2) % 3] - p[a];
            c[a] = cot(&u, &v, clamp);
        }
        push_stencil(&mut entries, t, c);
    }
    CotangentContribution {
        center: ring.center,
        entries,
        skipped,
    }
}

/// Sums the contributions in (center, triangle, entry) order and divides by 3.
pub fn accumulate(contribs: &[CotangentContribution], n: usize) -> SparseOperator {
    let mut order: Vec<usize> = (0..contribs.len()).collect();
    order.sort_by_key(|&i| contribs[i].center);
    let total: usize = contribs.iter().map(|c| c.entries.len()).sum();
    let mut triplets = Vec::with_capacity(total);
    for &i in &order {
        triplets.extend_from_slice(&contribs[i].entries);
    }
    let mut op = SparseOperator::from_triplets(n, n, triplets);
    for e in &mut op.entries {
        e.2 /= 3.0;
    }
    op
}

/// Classical cotangent Laplacian with 3D angles.
pub fn mesh_cotangent(mesh: &TriangleMesh) -> Result<SparseOperator> {
    let n = mesh.vertices.len();
    let mut entries = Vec::with_capacity(12 * mesh.faces.len());
    for (fi, &t) in mesh.faces.iter().enumerate() {
        if t.iter().any(|&v| v >= n) {
            return Err(Error::Data(format!("face {fi} has an index out of range")));
        }
        let p = [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]];
        if (p[1] - p[0]).cross(&(p[2] - p[0])).norm() <= 0.0 {
            return Err(Error::DegenerateFace(fi));
        }
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = cot3(&(p[(a + 1) % 3] - p[a]), &(p[(a + 2) % 3] - p[a]));
        }
        push_stencil(&mut entries, t, c);
    }
    Ok(SparseOperator::from_triplets(n, n, entries))
}
