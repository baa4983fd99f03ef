//! Planar Delaunay triangulation by lexicographic sweep and Lawson flips.
//!
//! Cocircular configurations are resolved by a key per point: of the two
//! diagonals of a cocircular quadrilateral, the one touching the smallest key
//! is kept. This acts as a symbolic lifting perturbation, so the result is
//! unique and any subset of points triangulated with the same keys agrees with
//! the full triangulation wherever the full one is locally determined.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::Vec2;

#[derive(Debug, Clone, Copy)]
pub struct DelaunayOptions {
    /// Relative in-circle tolerance below which four points count as cocircular.
    pub cocircular_tol: f64,
    /// Relative orientation tolerance below which three points count as collinear.
    pub collinear_tol: f64,
    /// Points closer than this fraction of the diameter are treated as duplicates.
    pub duplicate_tol: f64,
}

impl Default for DelaunayOptions {
    fn default() -> Self {
        DelaunayOptions {
            cocircular_tol: 1e-10,
            collinear_tol: 1e-12,
            duplicate_tol: 1e-12,
        }
    }
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Twice the signed area of (a, b, c); positive when counterclockwise.
pub fn orient(a: &Vec2, b: &Vec2, c: &Vec2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// In-circle determinant of `d` against the counterclockwise triangle (a, b, c),
/// positive when `d` lies inside, together with its permanent.
pub fn incircle(a: &Vec2, b: &Vec2, c: &Vec2, d: &Vec2) -> (f64, f64) {
    let (adx, ady) = (a.x - d.x, a.y - d.y);
    let (bdx, bdy) = (b.x - d.x, b.y - d.y);
    let (cdx, cdy) = (c.x - d.x, c.y - d.y);
    let al = adx * adx + ady * ady;
    let bl = bdx * bdx + bdy * bdy;
    let cl = cdx * cdx + cdy * cdy;
    let det = al * (bdx * cdy - cdx * bdy) + bl * (cdx * ady - adx * cdy) + cl * (adx * bdy - bdx * ady);
    let perm = al * ((bdx * cdy).abs() + (cdx * bdy).abs()) + bl * ((cdx * ady).abs() + (adx * cdy).abs()) + cl * ((adx * bdy).abs() + (bdx * ady).abs());
    (det, perm)
}

fn diameter(points: &[Vec2]) -> f64 {
    let mut lo = Vec2::repeat(f64::INFINITY);
    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

/// Moves later copies of (near-)duplicate points by a tiny key-dependent offset.
fn separate_duplicates(points: &[Vec2], keys: &[u64], tol: f64) -> Vec<Vec2> {
    let mut pts = points.to_vec();
    let diam = diameter(points);
    if diam == 0.0 {
        return pts;
    }
    let eps = tol * diam;
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| pts[a].x.total_cmp(&pts[b].x).then(keys[a].cmp(&keys[b])));
    for ii in 0..order.len() {
        let a = order[ii];
        for &b in &order[ii + 1..] {
            if pts[b].x - pts[a].x > eps {
                break;
            }
            if (pts[b] - pts[a]).norm() <= eps {
                let mover = if keys[a] > keys[b] { a } else { b };
                let t = GOLDEN_ANGLE * keys[mover] as f64;
                pts[mover] += Vec2::new(t.cos(), t.sin()) * (1e-9 * diam);
            }
        }
    }
    pts
}

struct Mesh<'a> {
    p: &'a [Vec2],
    keys: &'a [u64],
    opts: DelaunayOptions,
    tris: Vec<[usize; 3]>,
    edges: HashMap<(usize, usize), usize>,
}

impl<'a> Mesh<'a> {
    fn add(&mut self, t: [usize; 3]) -> usize {
        let id = self.tris.len();
        self.tris.push(t);
        self.register(id);
        id
    }

    fn register(&mut self, id: usize) {
        let t = self.tris[id];
        for e in 0..3 {
            self.edges.insert((t[e], t[(e + 1) % 3]), id);
        }
    }

    fn unregister(&mut self, id: usize) {
        let t = self.tris[id];
        for e in 0..3 {
            self.edges.remove(&(t[e], t[(e + 1) % 3]));
        }
    }

    fn strictly_right(&self, a: usize, b: usize, c: usize) -> bool {
        let (pa, pb, pc) = (&self.p[a], &self.p[b], &self.p[c]);
        let o = orient(pa, pb, pc);
        o < -self.opts.collinear_tol * (pb - pa).norm() * (pc - pa).norm()
    }

    fn strictly_left(&self, a: usize, b: usize, c: usize) -> bool {
        let (pa, pb, pc) = (&self.p[a], &self.p[b], &self.p[c]);
        let o = orient(pa, pb, pc);
        o > self.opts.collinear_tol * (pb - pa).norm() * (pc - pa).norm()
    }

    /// Whether edge (u, v) with apexes p (left) and q (right) should be flipped.
    fn illegal(&self, u: usize, v: usize, p: usize, q: usize) -> bool {
        let (det, perm) = incircle(&self.p[u], &self.p[v], &self.p[p], &self.p[q]);
        let tol = self.opts.cocircular_tol * perm;
        if det > tol {
            true
        } else if det < -tol {
            false
        } else {
            self.keys[p].min(self.keys[q]) < self.keys[u].min(self.keys[v])
        }
    }

    /// Flips edge u->v of triangle `t` if illegal; returns the two new
    /// triangles' outer edges to recheck.
    fn try_flip(&mut self, t: usize, u: usize, v: usize) -> Option<[(usize, usize, usize); 2]> {
        let t2 = *self.edges.get(&(v, u))?;
        let tv = self.tris[t];
        let p = tv.iter().copied().find(|&x| x != u && x != v)?;
        let q = self.tris[t2].iter().copied().find(|&x| x != u && x != v)?;
        if !self.illegal(u, v, p, q) {
            return None;
        }
        if !(self.strictly_left(u, q, p) && self.strictly_left(q, v, p)) {
            return None;
        }
        self.unregister(t);
        self.unregister(t2);
        self.tris[t] = [u, q, p];
        self.tris[t2] = [q, v, p];
        self.register(t);
        self.register(t2);
        Some([(t, u, q), (t2, q, v)])
    }

    fn legalize(&mut self, stack: &mut Vec<(usize, usize, usize)>, budget: &mut usize) {
        while let Some((t, u, v)) = stack.pop() {
            // The edge may have been flipped away since it was queued.
            if self.edges.get(&(u, v)) != Some(&t) {
                continue;
            }
            if *budget == 0 {
                return;
            }
            if let Some(next) = self.try_flip(t, u, v) {
                *budget -= 1;
                stack.extend_from_slice(&next);
            }
        }
    }
}

/// Delaunay triangulation of `points`; triangles are counterclockwise and
/// returned in canonical order (each rotated to start at its smallest index,
/// then sorted).
pub fn triangulate(points: &[Vec2], keys: &[u64], opts: DelaunayOptions) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    assert_eq!(keys.len(), n);
    if n < 3 {
        return Err(Error::DegenerateProjection);
    }
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::NonFinite("triangulation input"));
    }
    let pts = separate_duplicates(points, keys, opts.duplicate_tol);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pts[a].x.total_cmp(&pts[b].x).then(pts[a].y.total_cmp(&pts[b].y)).then(keys[a].cmp(&keys[b])));

    let mut mesh = Mesh {
        p: &pts,
        keys,
        opts,
        tris: Vec::with_capacity(2 * n),
        edges: HashMap::with_capacity(6 * n),
    };

    // Initial collinear chain followed by the first point off its line.
    let c0 = order[0];
    let c1 = order[1];
    let mut m = 2;
    while m < n && !(mesh.strictly_left(c0, c1, order[m]) || mesh.strictly_right(c0, c1, order[m])) {
        m += 1;
    }
    if m == n {
        return Err(Error::DegenerateProjection);
    }
    let apex = order[m];
    let chain = &order[..m];
    let left = mesh.strictly_left(c0, c1, apex);
    let none = usize::MAX;
    let mut next = vec![none; n];
    let mut prev = vec![none; n];
    let link = |a: usize, b: usize, next: &mut Vec<usize>, prev: &mut Vec<usize>| {
        next[a] = b;
        prev[b] = a;
    };
    for w in chain.windows(2) {
        if left {
            mesh.add([w[0], w[1], apex]);
        } else {
            mesh.add([w[1], w[0], apex]);
        }
    }
    if left {
        for w in chain.windows(2) {
            link(w[0], w[1], &mut next, &mut prev);
        }
        link(chain[m - 1], apex, &mut next, &mut prev);
        link(apex, c0, &mut next, &mut prev);
    } else {
        link(c0, apex, &mut next, &mut prev);
        link(apex, chain[m - 1], &mut next, &mut prev);
        for w in chain.windows(2) {
            link(w[1], w[0], &mut next, &mut prev);
        }
    }

    let mut budget = 64 * n * n + 1024;
    let mut stack = Vec::new();
    let mut last = apex;
    for &p in &order[m + 1..] {
        let visible = |a: usize, mesh: &Mesh| mesh.strictly_right(a, next[a], p);
        // Find one visible hull edge, preferring those at the previous point.
        let mut start = none;
        if visible(last, &mesh) {
            start = last;
        } else if visible(prev[last], &mesh) {
            start = prev[last];
        } else {
            let mut a = next[last];
            while a != last {
                if visible(a, &mesh) {
                    start = a;
                    break;
                }
                a = next[a];
            }
        }
        if start == none {
            // Numerically collinear with the hull: take the most negative edge.
            let mut best = (0.0, none);
            let mut a = last;
            loop {
                let o = orient(&pts[a], &pts[next[a]], &pts[p]);
                if o < best.0 {
                    best = (o, a);
                }
                a = next[a];
                if a == last {
                    break;
                }
            }
            if best.1 == none {
                return Err(Error::Data("triangulation failed to insert a point".into()));
            }
            let a = best.1;
            let b = next[a];
            let t = mesh.add([b, a, p]);
            link(a, p, &mut next, &mut prev);
            link(p, b, &mut next, &mut prev);
            stack.push((t, b, a));
            mesh.legalize(&mut stack, &mut budget);
            last = p;
            continue;
        }
        // Extend the visible run in both directions.
        let mut s = start;
        while prev[s] != none && prev[s] != start && visible(prev[s], &mesh) {
            s = prev[s];
        }
        let mut e = next[start];
        while e != s && visible(e, &mesh) {
            e = next[e];
        }
        let mut a = s;
        while a != e {
            let b = next[a];
            let t = mesh.add([b, a, p]);
            stack.push((t, b, a));
            a = b;
        }
        let mut a = next[s];
        while a != e {
            let b = next[a];
            next[a] = none;
            prev[a] = none;
            a = b;
        }
        link(s, p, &mut next, &mut prev);
        link(p, e, &mut next, &mut prev);
        mesh.legalize(&mut stack, &mut budget);
        last = p;
    }

    // Final sweep over all interior edges guards against missed flips.
    for _ in 0..8 {
        let mut queue: Vec<(usize, usize, usize)> = Vec::new();
        for (t, tri) in mesh.tris.iter().enumerate() {
            for e in 0..3 {
                let (u, v) = (tri[e], tri[(e + 1) % 3]);
                if u < v && mesh.edges.contains_key(&(v, u)) {
                    queue.push((t, u, v));
                }
            }
        }
        let before = budget;
        mesh.legalize(&mut queue, &mut budget);
        if before == budget || budget == 0 {
            break;
        }
    }

    let mut out: Vec<[usize; 3]> = mesh.tris.into_iter().map(canonical_triangle).collect();
    out.sort_unstable();
    Ok(out)
}

/// Rotates a triangle so its smallest index comes first, keeping orientation.
pub fn canonical_triangle(t: [usize; 3]) -> [usize; 3] {
    let i = (0..3).min_by_key(|&i| t[i]).unwrap_or(0);
    [t[i], t[(i + 1) % 3], t[(i + 2) % 3]]
}
