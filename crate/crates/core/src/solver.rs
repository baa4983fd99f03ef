//! Area matrix, free-boundary system assembly and sparse direct solves.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::laplacian::{accumulate, local_cotangent_with};
use crate::model::{Config, Parameterization, PointCloud, SparseOperator, Vec2};
use crate::neighborhood::{build_all, knn_all, Neighborhood};

/// 2n x 2n matrix whose quadratic form ½ fᵀ M f is the signed area enclosed
/// by the mapped boundary. Unknowns are ordered (x_0..x_{n-1}, y_0..y_{n-1}).
#[derive(Debug, Clone, PartialEq)]
pub struct AreaMatrix {
    pub n: usize,
    pub op: SparseOperator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PinConstraint {
    /// Pinned to (0, 0).
    pub i0: usize,
    /// Pinned to (1, 0).
    pub i1: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub dirichlet: f64,
    pub area: f64,
    pub conformal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    /// ‖K x − b‖ / (‖K‖_F ‖x‖) over the free equations.
    pub residual: f64,
    pub unknowns: usize,
}

pub fn area_matrix(boundary: &[usize], n: usize) -> Result<AreaMatrix> {
    let l = boundary.len();
    if l < 3 {
        return Err(Error::Data(format!("boundary loop of length {l} is too short for an area matrix")));
    }
    if let Some(&b) = boundary.iter().find(|&&b| b >= n) {
        return Err(Error::Data(format!("boundary index {b} out of range (n = {n})")));
    }
    let mut t = Vec::with_capacity(4 * l);
    for k in 0..l {
        let (i, j) = (boundary[k], boundary[(k + 1) % l]);
        // Upper-right block M1 and lower-left block M2 = M1ᵀ.
        t.push((i, n + j, 0.5));
        t.push((j, n + i, -0.5));
        t.push((n + j, i, 0.5));
        t.push((n + i, j, -0.5));
    }
    Ok(AreaMatrix {
        n,
        op: SparseOperator::from_triplets(2 * n, 2 * n, t),
    })
}

fn stacked(f: &Parameterization) -> Vec<f64> {
    f.uv.iter().map(|p| p.x).chain(f.uv.iter().map(|p| p.y)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Relative gap below which two squared pair distances count as tied.
pub const PAIR_TIE: f64 = 1e-9;

/// Vertex pair at maximum distance; near-ties (within `PAIR_TIE`) go to the
/// lexicographically smaller index pair, so the choice survives rigid motions.
pub fn farthest_pair(pc: &PointCloud) -> (usize, usize) {
    let n = pc.len();
    if n < 2 {
        return (0, 0);
    }
    let candidates: Vec<usize> = if n <= 50_000 { (0..n).collect() } else { diameter_candidates(pc) };
    let p = &pc.points;
    let max = candidates
        .par_iter()
        .enumerate()
        .map(|(ci, &i)| candidates[ci + 1..].iter().map(|&j| (p[i] - p[j]).norm_squared()).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max);
    let cut = max * (1.0 - PAIR_TIE);
    candidates
        .par_iter()
        .enumerate()
        .filter_map(|(ci, &i)| {
            candidates[ci + 1..]
                .iter()
                .filter(|&&j| (p[i] - p[j]).norm_squared() >= cut)
                .map(|&j| (i.min(j), i.max(j)))
                .min()
        })
        .min()
        .unwrap_or((0, 1))
}

/// Points whose farthest bounding-box corner is at least a known pair
/// distance away; every diametral pair lies among them.
fn diameter_candidates(pc: &PointCloud) -> Vec<usize> {
    let p = &pc.points;
    let far = |from: usize| {
        (0..p.len())
            .max_by(|&a, &b| (p[a] - p[from]).norm_squared().total_cmp(&(p[b] - p[from]).norm_squared()).then(b.cmp(&a)))
            .unwrap_or(0)
    };
    let a = far(0);
    let b = far(a);
    let lower = (p[a] - p[b]).norm();
    let (lo, hi) = pc.bbox();
    p.iter()
        .enumerate()
        .filter(|(_, q)| {
            let corner = nalgebra::Vector3::new(
                (q.x - lo.x).abs().max((hi.x - q.x).abs()),
                (q.y - lo.y).abs().max((hi.y - q.y).abs()),
                (q.z - lo.z).abs().max((hi.z - q.z).abs()),
            );
            corner.norm() >= lower * (1.0 - 1e-12)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Solves (diag(L, L) − M) f = 0 with the two pins eliminated.
pub fn solve_free_boundary(l: &SparseOperator, m: &AreaMatrix, pins: PinConstraint) -> Result<Parameterization> {
    solve_free_boundary_report(l, m, pins).map(|(f, _)| f)
}

pub fn solve_free_boundary_report(l: &SparseOperator, m: &AreaMatrix, pins: PinConstraint) -> Result<(Parameterization, SolveReport)> {
    let n = l.rows;
    if l.cols != n || m.n != n {
        return Err(Error::Data("operator dimensions do not match".into()));
    }
    if pins.i0 == pins.i1 || pins.i0 >= n || pins.i1 >= n {
        return Err(Error::Data("pins must be two distinct vertices".into()));
    }
    let mut fixed = vec![None; 2 * n];
    fixed[pins.i0] = Some(0.0);
    fixed[n + pins.i0] = Some(0.0);
    fixed[pins.i1] = Some(1.0);
    fixed[n + pins.i1] = Some(0.0);
    let mut k = Vec::with_capacity(2 * l.nnz() + m.op.nnz());
    for &(r, c, v) in &l.entries {
        k.push((r, c, v));
        k.push((n + r, n + c, v));
    }
    for &(r, c, v) in &m.op.entries {
        k.push((r, c, -v));
    }
    let k = SparseOperator::from_triplets(2 * n, 2 * n, k);
    let (x, report) = solve_reduced(&k, &fixed)?;
    let mut uv: Vec<Vec2> = (0..n).map(|i| Vec2::new(x[i], x[n + i])).collect();
    uv[pins.i0] = Vec2::new(0.0, 0.0);
    uv[pins.i1] = Vec2::new(1.0, 0.0);
    Ok((Parameterization { uv }, report))
}

/// Solves L f = 0 at free vertices with the listed vertices held fixed.
pub fn solve_dirichlet(l: &SparseOperator, fixed_pos: &[(usize, Vec2)]) -> Result<(Parameterization, SolveReport)> {
    let n = l.rows;
    let mut fixed = vec![None; 2 * n];
    for &(i, p) in fixed_pos {
        if i >= n {
            return Err(Error::Data(format!("fixed vertex {i} out of range")));
        }
        fixed[i] = Some(p.x);
        fixed[n + i] = Some(p.y);
    }
    let mut k = Vec::with_capacity(2 * l.nnz());
    for &(r, c, v) in &l.entries {
        k.push((r, c, v));
        k.push((n + r, n + c, v));
    }
    let k = SparseOperator::from_triplets(2 * n, 2 * n, k);
    let (x, report) = solve_reduced(&k, &fixed)?;
    Ok((
        Parameterization {
            uv: (0..n).map(|i| Vec2::new(x[i], x[n + i])).collect(),
        },
        report,
    ))
}

/// Solves K x = 0 with some unknowns fixed; returns the full vector.
fn solve_reduced(k: &SparseOperator, fixed: &[Option<f64>]) -> Result<(Vec<f64>, SolveReport)> {
    let dim = k.rows;
    let mut map = vec![usize::MAX; dim];
    let mut free = Vec::new();
    for (i, f) in fixed.iter().enumerate() {
        if f.is_none() {
            map[i] = free.len();
            free.push(i);
        }
    }
    let nf = free.len();
    let mut x: Vec<f64> = fixed.iter().map(|f| f.unwrap_or(0.0)).collect();
    if nf == 0 {
        return Ok((x, SolveReport { residual: 0.0, unknowns: 0 }));
    }
    let mut rhs = vec![0.0; nf];
    let mut trip = Vec::with_capacity(k.nnz());
    let mut reduced = Vec::with_capacity(k.nnz());
    for &(r, c, v) in &k.entries {
        if map[r] == usize::MAX {
            continue;
        }
        match fixed[c] {
            Some(val) => rhs[map[r]] -= v * val,
            None => {
                trip.push(Triplet::new(map[r], map[c], v));
                reduced.push((map[r], map[c], v));
            }
        }
    }
    let reduced = SparseOperator::from_triplets(nf, nf, reduced);
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(nf, nf, &trip).map_err(|e| Error::Singular(format!("assembly failed: {e:?}")))?;
    let lu = a.sp_lu().map_err(|e| Error::Singular(format!("factorization failed: {e:?}")))?;
    let b = Mat::from_fn(nf, 1, |i, _| rhs[i]);
    let sol = lu.solve(&b);
    let mut y: Vec<f64> = (0..nf).map(|i| sol[(i, 0)]).collect();
    // One step of iterative refinement.
    let ay = reduced.mul_vec(&y);
    let r = Mat::from_fn(nf, 1, |i, _| rhs[i] - ay[i]);
    let d = lu.solve(&r);
    for (i, yi) in y.iter_mut().enumerate() {
        *yi += d[(i, 0)];
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("solution is not finite".into()));
    }
    let ay = reduced.mul_vec(&y);
    let res: f64 = ay.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = reduced.norm() * dot(&y, &y).sqrt();
    let residual = if scale > 0.0 { res / scale } else { res };
    if residual > 1e-6 {
        return Err(Error::Singular(format!("residual {residual:e} after factorization")));
    }
    for (li, &gi) in free.iter().enumerate() {
        x[gi] = y[li];
    }
    Ok((x, SolveReport { residual, unknowns: nf }))
}

/// E_D = ½ fᵀ diag(L, L) f, A = ½ fᵀ M f, E_C = E_D − A.
pub fn conformal_energy(l: &SparseOperator, m: &AreaMatrix, f: &Parameterization) -> Energies {
    let x: Vec<f64> = f.uv.iter().map(|p| p.x).collect();
    let y: Vec<f64> = f.uv.iter().map(|p| p.y).collect();
    let dirichlet = 0.5 * (dot(&x, &l.mul_vec(&x)) + dot(&y, &l.mul_vec(&y)));
    let s = stacked(f);
    let area = 0.5 * dot(&s, &m.op.mul_vec(&s));
    Energies {
        dirichlet,
        area,
        conformal: dirichlet - area,
    }
}

/// Relative residual of the free equations of the free-boundary system.
pub fn free_boundary_residual(l: &SparseOperator, m: &AreaMatrix, pins: PinConstraint, f: &Parameterization) -> f64 {
    let n = l.rows;
    let s = stacked(f);
    let x = &s[..n];
    let y = &s[n..];
    let lx = l.mul_vec(x);
    let ly = l.mul_vec(y);
    let ms = m.op.mul_vec(&s);
    let pinned = [pins.i0, pins.i1, n + pins.i0, n + pins.i1];
    let mut res = 0.0;
    for r in 0..2 * n {
        if pinned.contains(&r) {
            continue;
        }
        let kr = if r < n { lx[r] } else { ly[r - n] } - ms[r];
        res += kr * kr;
    }
    let knorm = (2.0 * l.norm().powi(2) + m.op.norm().powi(2)).sqrt();
    let xnorm = dot(&s, &s).sqrt();
    if knorm * xnorm > 0.0 {
        res.sqrt() / (knorm * xnorm)
    } else {
        res.sqrt()
    }
}

/// Signed polygon area by the shoelace formula.
pub fn shoelace(loop_pts: &[Vec2]) -> f64 {
    let l = loop_pts.len();
    (0..l)
        .map(|k| {
            let (a, b) = (loop_pts[k], loop_pts[(k + 1) % l]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}

/// Everything produced by one run of the free-boundary pipeline.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub neighborhoods: Vec<Neighborhood>,
    pub laplacian: SparseOperator,
    pub area: AreaMatrix,
    pub pins: PinConstraint,
    pub param: Parameterization,
    pub solve: SolveReport,
    /// Ring triangles skipped as degenerate while building stencils.
    pub skipped: usize,
}

/// Point-cloud Laplacian from kNN lists (global indices into `pc`).
pub fn build_laplacian(pc: &PointCloud, knn: &[Vec<usize>], cfg: &Config) -> Result<(Vec<Neighborhood>, SparseOperator, usize)> {
    let hoods = build_all(pc, knn, cfg)?;
    let (l, skipped) = laplacian_from(&hoods, cfg)?;
    Ok((hoods, l, skipped))
}

/// Accumulated Laplacian of precomputed neighborhoods.
pub fn laplacian_from(hoods: &[Neighborhood], cfg: &Config) -> Result<(SparseOperator, usize)> {
    let contribs: Vec<_> = hoods
        .par_iter()
        .map(|h| local_cotangent_with(&h.ring, &h.chart, cfg.clamp_cot, cfg.skip_degenerate))
        .collect();
    let skipped = contribs.iter().map(|c| c.skipped).sum();
    if skipped > 0 {
        log::warn!("{skipped} degenerate ring triangles skipped");
    }
    let l = accumulate(&contribs, hoods.len());
    if !l.is_finite() {
        return Err(Error::NonFinite("Laplacian"));
    }
    Ok((l, skipped))
}

/// Free-boundary conformal parameterization of a disk-type cloud.
pub fn parameterize(pc: &PointCloud, cfg: &Config) -> Result<PipelineOutput> {
    cfg.validate()?;
    let report = crate::model::validate_point_cloud(pc);
    if !report.ok {
        return Err(Error::Data(report.messages.join("; ")));
    }
    let knn = knn_all(pc, cfg.k)?;
    parameterize_with_knn(pc, &knn, cfg)
}

pub fn parameterize_with_knn(pc: &PointCloud, knn: &[Vec<usize>], cfg: &Config) -> Result<PipelineOutput> {
    let hoods = build_all(pc, knn, cfg)?;
    parameterize_from_hoods(pc, hoods, cfg)
}

/// Free-boundary solve on precomputed neighborhoods.
pub fn parameterize_from_hoods(pc: &PointCloud, neighborhoods: Vec<Neighborhood>, cfg: &Config) -> Result<PipelineOutput> {
    let (laplacian, skipped) = laplacian_from(&neighborhoods, cfg)?;
    let area = area_matrix(&pc.boundary, pc.len())?;
    let (i0, i1) = farthest_pair(pc);
    let pins = PinConstraint { i0, i1 };
    let (param, solve) = solve_free_boundary_report(&laplacian, &area, pins)?;
    Ok(PipelineOutput {
        neighborhoods,
        laplacian,
        area,
        pins,
        param,
        solve,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vec3;
    use proptest::prelude::*;

    fn quad_form(m: &AreaMatrix, uv: &[Vec2]) -> f64 {
        let f = Parameterization { uv: uv.to_vec() };
        let s = stacked(&f);
        0.5 * dot(&s, &m.op.mul_vec(&s))
    }

    #[test]
    fn triangle_area_and_orientation() {
        let uv = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let m = area_matrix(&[0, 1, 2], 3).unwrap();
        assert!((quad_form(&m, &uv) - 0.5).abs() < 1e-15);
        let r = area_matrix(&[2, 1, 0], 3).unwrap();
        assert!((quad_form(&r, &uv) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn unit_square_area() {
        let uv = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)];
        let m = area_matrix(&[0, 1, 2, 3], 4).unwrap();
        assert!((quad_form(&m, &uv) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn area_matrix_structure() {
        let m = area_matrix(&[0, 2, 4], 6).unwrap();
        assert!(m.op.entries.iter().all(|e| e.2.abs() == 0.5));
        // The upper-right block is antisymmetric and the full matrix symmetric.
        assert_eq!(m.op.get(0, 6 + 2), 0.5);
        assert_eq!(m.op.get(2, 6), -0.5);
        assert_eq!(m.op.asymmetry(), 0.0);
        for &(r, c, _) in &m.op.entries {
            assert!([0, 2, 4].contains(&(r % 6)) && [0, 2, 4].contains(&(c % 6)));
        }
        assert!(area_matrix(&[0, 1], 3).is_err());
    }

    proptest! {
        #[test]
        fn area_form_matches_shoelace(coords in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30)) {
            let n = coords.len();
            let uv: Vec<Vec2> = coords.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
            let boundary: Vec<usize> = (0..n).rev().collect();
            let m = area_matrix(&boundary, n).unwrap();
            let loop_pts: Vec<Vec2> = boundary.iter().map(|&b| uv[b]).collect();
            let expected = shoelace(&loop_pts);
            prop_assert!((quad_form(&m, &uv) - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        }
    }

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        PointCloud { points, boundary: vec![] }
    }

    #[test]
    fn farthest_pair_examples() {
        let pc = cloud(vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 3.0]);
        assert_eq!(farthest_pair(&pc), (0, 2));
        let sq = cloud(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ]);
        assert_eq!(farthest_pair(&sq), (0, 2));
    }

    #[test]
    fn farthest_pair_matches_exhaustive_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Vec3> = (0..500).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let pc = cloud(pts.clone());
        let mut best = (0.0, 0, 0);
        for i in 0..500 {
            for j in i + 1..500 {
                let d = (pts[i] - pts[j]).norm_squared();
                if d > best.0 {
                    best = (d, i, j);
                }
            }
        }
        assert_eq!(farthest_pair(&pc), (best.1, best.2));
        let cand = diameter_candidates(&pc);
        assert!(cand.contains(&best.1) && cand.contains(&best.2));
    }

    #[test]
    fn coincident_map_has_zero_energies() {
        let m = area_matrix(&[0, 1, 2], 3).unwrap();
        let l = SparseOperator::from_triplets(3, 3, vec![(0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)]);
        let f = Parameterization {
            uv: vec![Vec2::new(0.3, 0.7); 3],
        };
        let e = conformal_energy(&l, &m, &f);
        assert_eq!(e.dirichlet, 0.0);
        assert_eq!(e.area, 0.0);
    }

    #[test]
    fn dirichlet_constant_boundary_collapses_interior() {
        // Path graph 0-1-2 with both ends pinned to the same point.
        let l = SparseOperator::from_triplets(
            3,
            3,
            vec![(0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (1, 2, -1.0), (2, 1, -1.0), (2, 2, 1.0)],
        );
        let p = Vec2::new(2.0, -1.0);
        let (f, rep) = solve_dirichlet(&l, &[(0, p), (2, p)]).unwrap();
        assert!((f.uv[1] - p).norm() < 1e-14);
        assert!(rep.residual < 1e-12);
    }
}
