//! Meshing a point cloud through a Delaunay triangulation of its
//! parameterization.

use std::collections::BTreeSet;

use crate::delaunay::{orient, triangulate, DelaunayOptions};
use crate::error::{Error, Result};
use crate::metrics::edge_faces;
use crate::model::{Parameterization, PointCloud, TriangleMesh, Vec2, Vec3};

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let l = poly.len();
    for k in 0..l {
        let (a, b) = (poly[k], poly[(k + 1) % l]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn segments_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(&a, &b, &c);
    let d2 = orient(&a, &b, &d);
    let d3 = orient(&c, &d, &a);
    let d4 = orient(&c, &d, &b);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2, o: f64| o == 0.0 && r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y);
    on(a, b, c, d1) || on(a, b, d, d2) || on(c, d, a, d3) || on(c, d, b, d4)
}

/// True when the closed polyline has no self-intersections or repeated
/// vertices. Segments are swept in order of their left x extent.
pub fn is_simple_loop(poly: &[Vec2]) -> bool {
    let l = poly.len();
    if l < 3 {
        return false;
    }
    let mut segs: Vec<(f64, f64, usize)> = (0..l)
        .map(|k| {
            let (a, b) = (poly[k], poly[(k + 1) % l]);
            (a.x.min(b.x), a.x.max(b.x), k)
        })
        .collect();
    segs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    for (s, &(_, hi, k)) in segs.iter().enumerate() {
        for &(lo2, _, k2) in &segs[s + 1..] {
            if lo2 > hi {
                break;
            }
            let adjacent = (k + 1) % l == k2 || (k2 + 1) % l == k;
            let (a, b) = (poly[k], poly[(k + 1) % l]);
            let (c, d) = (poly[k2], poly[(k2 + 1) % l]);
            if adjacent {
                // Adjacent segments may only share their common vertex.
                let (shared, p, q) = if (k + 1) % l == k2 { (b, a, d) } else { (a, b, c) };
                if l > 3 && orient(&p, &shared, &q) == 0.0 && (p - shared).dot(&(q - shared)) > 0.0 {
                    return false;
                }
                continue;
            }
            if segments_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn angle(at: Vec2, a: Vec2, b: Vec2) -> f64 {
    let (u, v) = (a - at, b - at);
    let (u3, v3) = (Vec3::new(u.x, u.y, 0.0), Vec3::new(v.x, v.y, 0.0));
    u3.cross(&v3).norm().atan2(u3.dot(&v3))
}

fn key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

fn opposite(t: [usize; 3], u: usize, v: usize) -> usize {
    *t.iter().find(|&&x| x != u && x != v).expect("triangle has an opposite vertex")
}

/// Flips the edge shared by faces `f0`, `f1` when their union is strictly
/// convex; returns false otherwise.
fn flip(uv: &[Vec2], faces: &mut [[usize; 3]], f0: usize, f1: usize, u: usize, v: usize) -> bool {
    let (o0, o1) = (opposite(faces[f0], u, v), opposite(faces[f1], u, v));
    let (p, q) = (uv[o0], uv[o1]);
    let s1 = orient(&p, &q, &uv[u]);
    let s2 = orient(&p, &q, &uv[v]);
    if s1 * s2 >= 0.0 {
        return false;
    }
    let (a, b) = if s1 < 0.0 { (u, v) } else { (v, u) };
    faces[f0] = [o0, o1, b];
    faces[f1] = [o1, o0, a];
    for fi in [f0, f1] {
        let t = faces[fi];
        if orient(&uv[t[0]], &uv[t[1]], &uv[t[2]]) < 0.0 {
            faces[fi] = [t[0], t[2], t[1]];
        }
    }
    true
}

/// Flips unlocked interior edges whose opposite angles sum past π + 1e-12
/// until none remain, so the angle test agrees with the triangulation.
fn legalize_by_angles(uv: &[Vec2], faces: &mut [[usize; 3]], locked: &BTreeSet<(usize, usize)>) {
    let limit = 10 * faces.len() + 100;
    for _ in 0..limit {
        let mut flipped = false;
        for ((u, v), fs) in edge_faces(faces) {
            if fs.len() != 2 || locked.contains(&(u, v)) {
                continue;
            }
            let (o0, o1) = (opposite(faces[fs[0]], u, v), opposite(faces[fs[1]], u, v));
            let sum = angle(uv[o0], uv[u], uv[v]) + angle(uv[o1], uv[u], uv[v]);
            if sum > std::f64::consts::PI + 1e-12 && flip(uv, faces, fs[0], fs[1], u, v) {
                flipped = true;
                break;
            }
        }
        if !flipped {
            return;
        }
    }
    log::warn!("angle legalization hit its iteration limit");
}

fn properly_crosses(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(&a, &b, &c);
    let d2 = orient(&a, &b, &d);
    let d3 = orient(&c, &d, &a);
    let d4 = orient(&c, &d, &b);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Forces every constraint edge into the triangulation by flipping the
/// edges that cross it.
fn recover_edges(uv: &[Vec2], faces: &mut [[usize; 3]], constraints: &[(usize, usize)]) -> Result<()> {
    for &(a, b) in constraints {
        let budget = 4 * faces.len() + 100;
        let mut rounds = 0;
        loop {
            let map = edge_faces(faces);
            if map.contains_key(&key(a, b)) {
                break;
            }
            let crossing: Vec<((usize, usize), Vec<usize>)> = map
                .into_iter()
                .filter(|((u, v), fs)| fs.len() == 2 && ![a, b].contains(u) && ![a, b].contains(v) && properly_crosses(uv[a], uv[b], uv[*u], uv[*v]))
                .collect();
            if crossing.is_empty() {
                return Err(Error::Data(format!("boundary edge ({a}, {b}) passes through another vertex in UV")));
            }
            let mut any = false;
            for ((u, v), fs) in crossing {
                // Faces may have changed during this round.
                let still = faces[fs[0]].contains(&u) && faces[fs[0]].contains(&v) && faces[fs[1]].contains(&u) && faces[fs[1]].contains(&v);
                if still && flip(uv, faces, fs[0], fs[1], u, v) {
                    any = true;
                }
            }
            rounds += 1;
            if !any || rounds > budget {
                return Err(Error::Data(format!("cannot recover boundary edge ({a}, {b}) in UV")));
            }
        }
    }
    Ok(())
}

/// Delaunay triangulation of the UV points restricted to the mapped boundary
/// polygon; triangles are counterclockwise in UV. Boundary edges are forced
/// into the triangulation before triangles with exterior centroids are
/// dropped, so interior edges stay locally Delaunay.
pub fn triangulate_uv(f: &Parameterization, boundary: &[usize]) -> Result<Vec<[usize; 3]>> {
    if !f.is_finite() {
        return Err(Error::NonFinite("parameterization"));
    }
    let poly: Vec<Vec2> = boundary.iter().map(|&b| f.uv[b]).collect();
    if !is_simple_loop(&poly) {
        return Err(Error::FoldedBoundary);
    }
    let keys: Vec<u64> = (0..f.uv.len() as u64).collect();
    let opts = DelaunayOptions {
        cocircular_tol: 1e-13,
        ..DelaunayOptions::default()
    };
    let mut faces = triangulate(&f.uv, &keys, opts)?;
    let l = boundary.len();
    let constraints: Vec<(usize, usize)> = (0..l).map(|k| (boundary[k], boundary[(k + 1) % l])).collect();
    recover_edges(&f.uv, &mut faces, &constraints)?;
    let locked: BTreeSet<(usize, usize)> = constraints.iter().map(|&(a, b)| key(a, b)).collect();
    legalize_by_angles(&f.uv, &mut faces, &locked);
    faces.retain(|t| {
        let c = (f.uv[t[0]] + f.uv[t[1]] + f.uv[t[2]]) / 3.0;
        point_in_polygon(c, &poly)
    });
    faces.sort_unstable_by_key(|t| crate::delaunay::canonical_triangle(*t));
    Ok(faces)
}

/// Mesh over the original 3D points; returns the count of near-degenerate faces.
pub fn lift(faces: &[[usize; 3]], pc: &PointCloud) -> Result<(TriangleMesh, usize)> {
    let n = pc.len();
    if faces.iter().flatten().any(|&v| v >= n) {
        return Err(Error::Data("face index out of range".into()));
    }
    let d2 = pc.bbox_diagonal().powi(2);
    let degenerate = faces
        .iter()
        .filter(|t| {
            let p = [pc.points[t[0]], pc.points[t[1]], pc.points[t[2]]];
            0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm() < 1e-14 * d2
        })
        .count();
    if degenerate > 0 {
        log::warn!("{degenerate} lifted faces are nearly degenerate");
    }
    Ok((
        TriangleMesh {
            vertices: pc.points.clone(),
            faces: faces.to_vec(),
            boundary: pc.boundary.clone(),
        },
        degenerate,
    ))
}

/// The UV triangulation as a planar mesh (z = 0) for evaluation in UV.
pub fn uv_mesh(f: &Parameterization, faces: &[[usize; 3]], boundary: &[usize]) -> TriangleMesh {
    TriangleMesh {
        vertices: f.uv.iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect(),
        faces: faces.to_vec(),
        boundary: boundary.to_vec(),
    }
}

/// V − E + F over the vertices referenced by the faces.
pub fn euler_characteristic(faces: &[[usize; 3]]) -> i64 {
    let mut verts: Vec<usize> = faces.iter().flatten().copied().collect();
    verts.sort_unstable();
    verts.dedup();
    verts.len() as i64 - edge_faces(faces).len() as i64 + faces.len() as i64
}
