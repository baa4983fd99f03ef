//! Distortion measures: point-cloud Beltrami coefficients, Chi energy,
//! Delaunay ratio and report assembly.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::laplacian::COT_CLAMP;
use crate::model::{Parameterization, PointCloud, TriangleMesh, Vec2, Vec3};
use crate::neighborhood::{LocalRing, Neighborhood};
use crate::solver::Energies;

/// Magnitude reported for a triangle whose map has f_z = 0.
pub const FOLD_MU: f64 = 1e12;

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct BeltramiField {
    pub mu: Vec<Complex64>,
    /// Vertices with |μ| ≥ 1 on some ring triangle.
    pub folded: Vec<bool>,
    /// Vertices whose ring had no usable triangle.
    pub empty: usize,
}

impl BeltramiField {
    pub fn abs(&self) -> Vec<f64> {
        self.mu.iter().map(|m| m.norm()).collect()
    }

    pub fn mean_abs(&self) -> f64 {
        if self.mu.is_empty() {
            return 0.0;
        }
        self.mu.iter().map(|m| m.norm()).sum::<f64>() / self.mu.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.mu.iter().map(|m| m.norm()).fold(0.0, f64::max)
    }
}

/// Beltrami coefficient of the affine map sending chart triangle `p` to
/// image triangle `w`; `None` when either triangle is degenerate.
pub fn affine_beltrami(p: [Vec2; 3], w: [Vec2; 3]) -> Option<(Complex64, bool)> {
    let (d1, d2) = (p[1] - p[0], p[2] - p[0]);
    let det = d1.x * d2.y - d1.y * d2.x;
    let (g1, g2) = (w[1] - w[0], w[2] - w[0]);
    let img = g1.x * g2.y - g1.y * g2.x;
    let scale_p = d1.norm_squared().max(d2.norm_squared());
    let scale_w = g1.norm_squared().max(g2.norm_squared());
    if det.abs() <= 1e-14 * scale_p || img.abs() <= 1e-14 * scale_w || scale_w == 0.0 {
        return None;
    }
    // J = W D⁻¹ with columns F_x, F_y.
    let inv = [[d2.y / det, -d2.x / det], [-d1.y / det, d1.x / det]];
    let fx = Complex64::new(g1.x * inv[0][0] + g2.x * inv[1][0], g1.y * inv[0][0] + g2.y * inv[1][0]);
    let fy = Complex64::new(g1.x * inv[0][1] + g2.x * inv[1][1], g1.y * inv[0][1] + g2.y * inv[1][1]);
    let i = Complex64::i();
    let fz = 0.5 * (fx - i * fy);
    let fzb = 0.5 * (fx + i * fy);
    if fz.norm() <= 1e-12 * fzb.norm() {
        let phase = if fzb.norm() > 0.0 { fzb / fzb.norm() } else { Complex64::new(1.0, 0.0) };
        return Some((phase * FOLD_MU, true));
    }
    let mu = fzb / fz;
    Some((mu, mu.norm() >= 1.0))
}

/// Normals oriented consistently along a minimum spanning tree of the kNN
/// graph, then flipped globally so the boundary loop runs counterclockwise.
pub fn oriented_normals(pc: &PointCloud, hoods: &[Neighborhood]) -> Vec<Vec3> {
    let n = pc.len();
    let mut normals: Vec<Vec3> = hoods.iter().map(|h| h.frame.e3).collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, h) in hoods.iter().enumerate() {
        for &j in &h.chart.indices[1..] {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let key = |w: f64| (w.max(0.0) * 1e15) as u64;
    let mut visited = vec![false; n];
    for root in 0..n {
        if visited[root] {
            continue;
        }
        // Prim's algorithm with weight 1 − |n_i · n_j|.
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((0u64, root, root)));
        while let Some(Reverse((_, v, parent))) = heap.pop() {
            if visited[v] {
                continue;
            }
            visited[v] = true;
            if v != parent && normals[v].dot(&normals[parent]) < 0.0 {
                normals[v] = -normals[v];
            }
            for &u in &adj[v] {
                if !visited[u] {
                    heap.push(Reverse((key(1.0 - normals[v].dot(&normals[u]).abs()), u, v)));
                }
            }
        }
    }
    let l = pc.boundary.len();
    let mut vote = 0.0;
    for k in 0..l {
        let v = pc.boundary[k];
        let t = pc.points[pc.boundary[(k + 1) % l]] - pc.points[pc.boundary[(k + l - 1) % l]];
        let nb = &hoods[v].chart.indices[1..];
        if nb.is_empty() {
            continue;
        }
        let c = nb.iter().map(|&j| pc.points[j]).sum::<Vec3>() / nb.len() as f64;
        let s = normals[v].dot(&t.cross(&(c - pc.points[v])));
        vote += s.signum();
    }
    if vote < 0.0 {
        for nv in &mut normals {
            *nv = -*nv;
        }
    }
    normals
}

/// Tangent basis with e1 along the projected x axis (y axis if nearly normal).
fn chart_basis(n: &Vec3) -> (Vec3, Vec3) {
    let mut a = Vec3::x() - n * n.x;
    if a.norm() < 0.1 {
        a = Vec3::y() - n * n.y;
    }
    let e1 = a.normalize();
    (e1, n.cross(&e1))
}

pub fn pcbc(pc: &PointCloud, hoods: &[Neighborhood], f: &Parameterization) -> BeltramiField {
    pcbc_with(pc, hoods, f, true)
}

pub fn pcbc_with(pc: &PointCloud, hoods: &[Neighborhood], f: &Parameterization, area_weighted: bool) -> BeltramiField {
    let normals = oriented_normals(pc, hoods);
    let per: Vec<(Complex64, bool, bool)> = hoods
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            let (e1, e2) = chart_basis(&normals[i]);
            let o = pc.points[i];
            let chart = |g: usize| {
                let d = pc.points[g] - o;
                Vec2::new(d.dot(&e1), d.dot(&e2))
            };
            let mut sum = Complex64::new(0.0, 0.0);
            let mut wsum = 0.0;
            let mut folded = false;
            for t in &h.ring.triangles {
                let p = [chart(t[0]), chart(t[1]), chart(t[2])];
                let w = [f.uv[t[0]], f.uv[t[1]], f.uv[t[2]]];
                if let Some((mu, fold)) = affine_beltrami(p, w) {
                    let weight = if area_weighted { 0.5 * (p[1] - p[0]).perp(&(p[2] - p[0])).abs() } else { 1.0 };
                    sum += mu * weight;
                    wsum += weight;
                    folded |= fold;
                }
            }
            if wsum > 0.0 {
                (sum / wsum, folded, false)
            } else {
                (Complex64::new(0.0, 0.0), false, true)
            }
        })
        .collect();
    let empty = per.iter().filter(|p| p.2).count();
    if empty > 0 {
        log::warn!("{empty} vertices had no usable ring triangle; their μ is set to 0");
    }
    BeltramiField {
        mu: per.iter().map(|p| p.0).collect(),
        folded: per.iter().map(|p| p.1).collect(),
        empty,
    }
}

fn cot_clamped(u: Vec2, v: Vec2) -> f64 {
    (u.dot(&v) / u.perp(&v).abs()).clamp(-COT_CLAMP, COT_CLAMP)
}

/// Locally authalic energy; angles measured in each vertex's chart.
pub fn chi_energy(pc: &PointCloud, rings: &[&LocalRing], charts: &[&crate::neighborhood::LocalChart], f: &Parameterization) -> f64 {
    let per: Vec<f64> = rings
        .par_iter()
        .zip(charts.par_iter())
        .map(|(ring, chart)| {
            let i = ring.center;
            let mut e = 0.0;
            for t in &ring.triangles {
                let a = t.iter().position(|&v| v == i).expect("ring triangle contains center");
                for (j, k) in [(t[(a + 1) % 3], t[(a + 2) % 3]), (t[(a + 2) % 3], t[(a + 1) % 3])] {
                    let (pi, pj, pk) = (chart.at(i), chart.at(j), chart.at(k));
                    let c = cot_clamped(pi - pj, pk - pj);
                    let d2 = (pc.points[i] - pc.points[j]).norm_squared();
                    if d2 > 0.0 {
                        e += c / d2 * (f.uv[i] - f.uv[j]).norm_squared();
                    }
                }
            }
            e
        })
        .collect();
    per.iter().sum()
}

/// Chi energy over the filtered rings of a pipeline run.
pub fn chi_energy_of(pc: &PointCloud, hoods: &[Neighborhood], f: &Parameterization) -> f64 {
    let rings: Vec<&LocalRing> = hoods.iter().map(|h| &h.ring).collect();
    let charts: Vec<_> = hoods.iter().map(|h| &h.chart).collect();
    chi_energy(pc, &rings, &charts, f)
}

fn angle(at: Vec3, a: Vec3, b: Vec3) -> f64 {
    let (u, v) = (a - at, b - at);
    u.cross(&v).norm().atan2(u.dot(&v))
}

/// Edge → incident faces, keyed by the sorted vertex pair.
pub fn edge_faces(faces: &[[usize; 3]]) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (fi, t) in faces.iter().enumerate() {
        for a in 0..3 {
            let (u, v) = (t[a], t[(a + 1) % 3]);
            map.entry((u.min(v), u.max(v))).or_default().push(fi);
        }
    }
    map
}

/// Fraction of interior edges whose opposite angles sum to at most π.
pub fn delaunay_ratio(mesh: &TriangleMesh) -> Result<f64> {
    let mut interior = 0usize;
    let mut good = 0usize;
    for ((u, v), fs) in edge_faces(&mesh.faces) {
        match fs.len() {
            1 => continue,
            2 => {}
            _ => return Err(Error::NonManifoldEdge(u, v)),
        }
        interior += 1;
        let mut sum = 0.0;
        for &fi in &fs {
            let t = mesh.faces[fi];
            let o = *t.iter().find(|&&x| x != u && x != v).expect("face has an opposite vertex");
            sum += angle(mesh.vertices[o], mesh.vertices[u], mesh.vertices[v]);
        }
        if sum <= std::f64::consts::PI + 1e-12 {
            good += 1;
        }
    }
    Ok(if interior == 0 { 1.0 } else { good as f64 / interior as f64 })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub n: usize,
    pub mean_mu: Option<f64>,
    pub max_mu: Option<f64>,
    pub folds: Option<usize>,
    pub energies: Option<Energies>,
    pub chi: Option<f64>,
    pub delaunay_ratio: Option<f64>,
    /// (bin center, count) over [0, max(1, max|μ|)].
    pub histogram: Vec<(f64, usize)>,
}

pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let top = values.iter().copied().fold(1.0, f64::max);
    let w = top / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = ((v / w) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts.into_iter().enumerate().map(|(b, c)| ((b as f64 + 0.5) * w, c)).collect()
}

pub fn summarize(mu: &BeltramiField, energies: Option<Energies>, chi: Option<f64>, r: Option<f64>) -> MetricReport {
    let abs = mu.abs();
    MetricReport {
        n: abs.len(),
        mean_mu: Some(mu.mean_abs()),
        max_mu: Some(mu.max_abs()),
        folds: Some(mu.folded.iter().filter(|&&f| f).count()),
        energies,
        chi,
        delaunay_ratio: r,
        histogram: histogram(&abs, HISTOGRAM_BINS),
    }
}

impl MetricReport {
    /// Scalar rows in a fixed order; absent values are omitted.
    pub fn scalars(&self) -> Vec<(&'static str, String)> {
        let mut rows = Vec::new();
        if self.n > 0 {
            rows.push(("n", self.n.to_string()));
        }
        let mut push = |k: &'static str, v: Option<f64>| {
            if let Some(v) = v {
                rows.push((k, format!("{v:.17e}")));
            }
        };
        push("mean_abs_mu", self.mean_mu);
        push("max_abs_mu", self.max_mu);
        push("dirichlet_energy", self.energies.map(|e| e.dirichlet));
        push("area", self.energies.map(|e| e.area));
        push("conformal_energy", self.energies.map(|e| e.conformal));
        push("chi_energy", self.chi);
        push("delaunay_ratio", self.delaunay_ratio);
        if let Some(f) = self.folds {
            rows.push(("folds", f.to_string()));
        }
        rows
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.scalars() {
            writeln!(f, "{k:>18}  {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> [Vec2; 3] {
        [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.2), Vec2::new(0.3, 0.9)]
    }

    fn map(p: [Vec2; 3], f: impl Fn(Vec2) -> Vec2) -> [Vec2; 3] {
        [f(p[0]), f(p[1]), f(p[2])]
    }

    #[test]
    fn similarity_is_conformal() {
        let p = tri();
        let (c, s) = (0.3f64.cos() * 2.5, 0.3f64.sin() * 2.5);
        let w = map(p, |q| Vec2::new(c * q.x - s * q.y + 4.0, s * q.x + c * q.y - 1.0));
        let (mu, fold) = affine_beltrami(p, w).unwrap();
        assert!(mu.norm() < 1e-14);
        assert!(!fold);
    }

    #[test]
    fn horizontal_stretch_gives_one_third() {
        let p = tri();
        let (mu, _) = affine_beltrami(p, map(p, |q| Vec2::new(2.0 * q.x, q.y))).unwrap();
        assert!((mu - Complex64::new(1.0 / 3.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn reflection_is_a_fold() {
        let p = tri();
        let (mu, fold) = affine_beltrami(p, map(p, |q| Vec2::new(q.x, -q.y))).unwrap();
        assert!(fold);
        assert!(mu.norm() >= FOLD_MU * 0.999);
    }

    #[test]
    fn collapsed_image_is_skipped() {
        let p = tri();
        assert!(affine_beltrami(p, [Vec2::zeros(); 3]).is_none());
    }

    #[test]
    fn ratio_of_constructed_violation() {
        // Diagonal 0-2 with opposite angles 91° each.
        let h = (45.5f64).to_radians().tan();
        let mesh = TriangleMesh {
            vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(0.5, -0.5 / h, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.5, 0.5 / h, 0.0),
            ],
            faces: vec![[0, 1, 2], [0, 2, 3]],
            boundary: vec![0, 1, 2, 3],
        };
        assert_eq!(delaunay_ratio(&mesh).unwrap(), 0.0);
        let mut sq = mesh.clone();
        sq.vertices[1].y = -0.5;
        sq.vertices[3].y = 0.5;
        assert_eq!(delaunay_ratio(&sq).unwrap(), 1.0);
    }

    #[test]
    fn non_manifold_edge_named() {
        let mesh = TriangleMesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y(), -Vec3::y(), Vec3::z()],
            faces: vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]],
            boundary: vec![],
        };
        assert!(matches!(delaunay_ratio(&mesh), Err(Error::NonManifoldEdge(0, 1))));
    }

    fn field(values: &[f64]) -> BeltramiField {
        BeltramiField {
            mu: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            folded: vec![false; values.len()],
            empty: 0,
        }
    }

    #[test]
    fn summary_of_zero_field() {
        let r = summarize(&field(&[0.0; 10]), None, None, None);
        assert_eq!(r.mean_mu, Some(0.0));
        assert_eq!(r.histogram.len(), HISTOGRAM_BINS);
        assert_eq!(r.histogram.iter().filter(|b| b.1 > 0).count(), 1);
        assert_eq!(r.histogram[0].1, 10);
    }

    #[test]
    fn summary_half_and_half() {
        let r = summarize(&field(&[0.0, 1.0 / 3.0, 0.0, 1.0 / 3.0]), None, None, None);
        assert!((r.mean_mu.unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.histogram.iter().map(|b| b.1).sum::<usize>(), 4);
    }

    #[test]
    fn summary_matches_direct_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 2.0).collect();
        let r = summarize(&field(&vals), None, None, None);
        let mean = vals.iter().sum::<f64>() / 1000.0;
        let max = vals.iter().copied().fold(0.0, f64::max);
        assert!((r.mean_mu.unwrap() - mean).abs() < 1e-12);
        assert_eq!(r.max_mu.unwrap(), max);
        assert_eq!(r.histogram.iter().map(|b| b.1).sum::<usize>(), 1000);
        assert!((r.histogram[49].0 - max * 49.5 / 50.0).abs() < 1e-12);
    }

    #[test]
    fn empty_report_has_no_rows() {
        assert!(MetricReport::default().scalars().is_empty());
    }
}
