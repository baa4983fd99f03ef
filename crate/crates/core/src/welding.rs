//! Divide-and-conquer parameterization by partial welding.
//!
//! The cloud is cut into strips along weld paths, each strip is flattened on
//! its own, and the flattened boundaries are glued pairwise with a zipper
//! construction: each side's weld arc is unzipped onto a half-line, the two
//! half-planes are joined by a square root, and corresponding vertices are
//! zipped together one pair at a time.

use std::cmp::Reverse;
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BinaryHeap};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Config, Parameterization, PointCloud, SparseOperator, Vec2};
use crate::neighborhood::{build_all, knn_all, LocalRing, Neighborhood};
use crate::solver::{farthest_pair, parameterize_from_hoods, solve_dirichlet};

type C = Complex64;

/// A point of the extended complex plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ext {
    Finite(C),
    Infinity,
}

impl Ext {
    pub fn finite(self) -> Option<C> {
        match self {
            Ext::Finite(z) => Some(z),
            Ext::Infinity => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Ext::Infinity)
    }
}

impl From<C> for Ext {
    fn from(z: C) -> Self {
        Ext::Finite(z)
    }
}

/// z ↦ (az + b) / (cz + d).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobius {
    pub a: C,
    pub b: C,
    pub c: C,
    pub d: C,
}

impl Mobius {
    pub fn new(a: C, b: C, c: C, d: C) -> Result<Self> {
        let scale = a.norm().max(b.norm()).max(c.norm()).max(d.norm());
        if !(scale.is_finite() && scale > 0.0) || (a * d - b * c).norm() <= 1e-14 * scale * scale {
            return Err(Error::Mobius("ad − bc vanishes".into()));
        }
        Ok(Mobius { a, b, c, d }.normalized())
    }

    pub fn identity() -> Self {
        let (o, z) = (C::new(1.0, 0.0), C::new(0.0, 0.0));
        Mobius { a: o, b: z, c: z, d: o }
    }

    fn normalized(self) -> Self {
        let s = self.a.norm().max(self.b.norm()).max(self.c.norm()).max(self.d.norm());
        Mobius {
            a: self.a / s,
            b: self.b / s,
            c: self.c / s,
            d: self.d / s,
        }
    }

    pub fn apply(&self, z: Ext) -> Ext {
        match z {
            Ext::Infinity => {
                if self.c == C::new(0.0, 0.0) {
                    Ext::Infinity
                } else {
                    Ext::Finite(self.a / self.c)
                }
            }
            Ext::Finite(z) => {
                let den = self.c * z + self.d;
                if den == C::new(0.0, 0.0) {
                    Ext::Infinity
                } else {
                    Ext::Finite((self.a * z + self.b) / den)
                }
            }
        }
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &Mobius) -> Mobius {
        Mobius {
            a: self.a * inner.a + self.b * inner.c,
            b: self.a * inner.b + self.b * inner.d,
            c: self.c * inner.a + self.d * inner.c,
            d: self.c * inner.b + self.d * inner.d,
        }
        .normalized()
    }

    pub fn inverse(&self) -> Mobius {
        Mobius {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    /// The map sending `z` to (0, 1, ∞).
    fn to_standard(z: [Ext; 3]) -> Result<Mobius> {
        let one = C::new(1.0, 0.0);
        let zero = C::new(0.0, 0.0);
        let distinct = |p: Ext, q: Ext| match (p, q) {
            (Ext::Infinity, Ext::Infinity) => false,
            (Ext::Finite(p), Ext::Finite(q)) => (p - q).norm() > 1e-15 * p.norm().max(q.norm()),
            _ => true,
        };
        if !(distinct(z[0], z[1]) && distinct(z[1], z[2]) && distinct(z[0], z[2])) {
            return Err(Error::Mobius("the three points must be distinct".into()));
        }
        match (z[0], z[1], z[2]) {
            (Ext::Infinity, Ext::Finite(z2), Ext::Finite(z3)) => Mobius::new(zero, z2 - z3, one, -z3),
            (Ext::Finite(z1), Ext::Infinity, Ext::Finite(z3)) => Mobius::new(one, -z1, one, -z3),
            (Ext::Finite(z1), Ext::Finite(z2), Ext::Infinity) => Mobius::new(one, -z1, zero, z2 - z1),
            (Ext::Finite(z1), Ext::Finite(z2), Ext::Finite(z3)) => Mobius::new(z2 - z3, -z1 * (z2 - z3), z2 - z1, -z3 * (z2 - z1)),
            _ => unreachable!("distinctness leaves at most one point at infinity"),
        }
    }

    /// The unique map with `src[i] ↦ dst[i]`.
    pub fn three_point(src: [Ext; 3], dst: [Ext; 3]) -> Result<Mobius> {
        let s = Mobius::to_standard(src)?;
        let t = Mobius::to_standard(dst)?;
        Ok(t.inverse().compose(&s))
    }
}

pub fn mobius_apply(t: &Mobius, z: Ext) -> Ext {
    t.apply(z)
}

pub fn mobius_three_point(src: [Ext; 3], dst: [Ext; 3]) -> Result<Mobius> {
    Mobius::three_point(src, dst)
}

/// One piece of a partition; `boundary` is its counterclockwise loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subdomain {
    pub vertices: Vec<usize>,
    pub boundary: Vec<usize>,
}

/// Shared cut between `domains[lower]` and `domains[upper]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeldPath {
    pub vertices: Vec<usize>,
    pub lower: usize,
    pub upper: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub domains: Vec<Subdomain>,
    pub paths: Vec<WeldPath>,
}

/// Edges present in both endpoints' one-rings.
fn ring_graph(hoods: &[Neighborhood]) -> Vec<Vec<usize>> {
    hoods
        .iter()
        .enumerate()
        .map(|(i, h)| {
            h.raw_ring
                .neighbors
                .iter()
                .copied()
                .filter(|&j| hoods[j].raw_ring.neighbors.binary_search(&i).is_ok())
                .collect()
        })
        .collect()
}

fn loop_pos(lp: &[usize], v: usize) -> Option<usize> {
    lp.iter().position(|&x| x == v)
}

/// Loop vertices from position `from` forward to `to`, inclusive.
fn loop_arc(lp: &[usize], from: usize, to: usize) -> Vec<usize> {
    let l = lp.len();
    let mut out = vec![lp[from]];
    let mut q = from;
    while q != to {
        q = (q + 1) % l;
        out.push(lp[q]);
    }
    out
}

/// Shortest path in the kNN graph restricted to `allowed`, with a penalty
/// on distance from the cut level.
fn weld_path(pc: &PointCloud, adj: &[Vec<usize>], allowed: &[bool], s: &[f64], level: f64, from: usize, to: usize) -> Option<Vec<usize>> {
    const PENALTY: f64 = 2.0;
    let n = pc.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(Reverse((0u64, from)));
    while let Some(Reverse((bits, v))) = heap.pop() {
        let d = f64::from_bits(bits);
        if d > dist[v] {
            continue;
        }
        if v == to {
            break;
        }
        for &u in &adj[v] {
            if !allowed[u] {
                continue;
            }
            let w = (pc.points[u] - pc.points[v]).norm() + PENALTY * 0.5 * ((s[u] - level).abs() + (s[v] - level).abs());
            let nd = d + w;
            if nd < dist[u] || (nd == dist[u] && v < prev[u]) {
                dist[u] = nd;
                prev[u] = v;
                heap.push(Reverse((nd.to_bits(), u)));
            }
        }
    }
    if !dist[to].is_finite() {
        return None;
    }
    let mut path = vec![to];
    let mut v = to;
    while v != from {
        v = prev[v];
        path.push(v);
    }
    path.reverse();
    Some(path)
}

fn components(members: &[usize], adj: &[Vec<usize>], inside: &[bool]) -> Vec<Vec<usize>> {
    let mut seen: BTreeMap<usize, bool> = members.iter().map(|&v| (v, false)).collect();
    let mut out = Vec::new();
    for &start in members {
        if seen[&start] {
            continue;
        }
        let mut comp = vec![start];
        seen.insert(start, true);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if inside[u] && !seen[&u] {
                    seen.insert(u, true);
                    comp.push(u);
                    stack.push(u);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Splits `dom` along the level set s = `level`; returns (lower, upper, path).
fn split(pc: &PointCloud, adj: &[Vec<usize>], s: &[f64], dom: &Subdomain, level: f64) -> Result<(Subdomain, Subdomain, Vec<usize>)> {
    let n = pc.len();
    let lp = &dom.boundary;
    let l = lp.len();
    let above = |v: usize| s[v] >= level;
    let mut crossings = Vec::new();
    for q in 0..l {
        let (a, b) = (lp[q], lp[(q + 1) % l]);
        if above(a) != above(b) {
            let pick = if (s[a] - level).abs() <= (s[b] - level).abs() { q } else { (q + 1) % l };
            crossings.push(pick);
        }
    }
    crossings.sort_unstable();
    crossings.dedup();
    if crossings.len() != 2 {
        return Err(Error::Welding(format!(
            "cut crosses the boundary {} times; the piece would not be disk-type, try a smaller m",
            crossings.len()
        )));
    }
    let (ps, pe) = (crossings[0], crossings[1]);
    let (start, end) = (lp[ps], lp[pe]);
    let mut in_dom = vec![false; n];
    for &v in &dom.vertices {
        in_dom[v] = true;
    }
    let mut allowed = in_dom.clone();
    for &b in lp {
        allowed[b] = false;
    }
    allowed[start] = true;
    allowed[end] = true;
    let path =
        weld_path(pc, adj, &allowed, s, level, start, end).ok_or_else(|| Error::Welding("no weld path between the cut endpoints; try a smaller m".into()))?;
    if path.len() < 3 {
        return Err(Error::Welding("weld path too short; try a smaller m".into()));
    }
    let k = path.len() - 1;
    let arc_f = loop_arc(lp, ps, pe);
    let arc_b = loop_arc(lp, pe, ps);
    if arc_f.len() < 3 || arc_b.len() < 3 {
        return Err(Error::Welding("cut endpoints are adjacent on the boundary; try a smaller m".into()));
    }
    let mut on_path = vec![false; n];
    for &v in &path {
        on_path[v] = true;
    }
    let mut label = vec![0i8; n];
    // +1: the side holding arc_f. Flood fill over ring edges stops at the path.
    let mut stack: Vec<usize> = arc_f[1..arc_f.len() - 1].to_vec();
    for &v in &stack {
        label[v] = 1;
    }
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if in_dom[u] && !on_path[u] && label[u] == 0 {
                label[u] = 1;
                stack.push(u);
            }
        }
    }
    if arc_b[1..arc_b.len() - 1].iter().any(|&v| label[v] == 1) {
        return Err(Error::Welding("weld path does not separate the piece; try a smaller m".into()));
    }
    for &v in &dom.vertices {
        if !on_path[v] && label[v] == 0 {
            label[v] = -1;
        }
    }
    // Components cut off from their side's boundary arc change sides.
    for side in [1i8, -1] {
        let members: Vec<usize> = dom.vertices.iter().copied().filter(|&v| label[v] == side).collect();
        let inside: Vec<bool> = (0..n).map(|v| label[v] == side).collect();
        let anchor = if side == 1 { arc_f[1] } else { arc_b[1] };
        for comp in components(&members, adj, &inside) {
            if !comp.contains(&anchor) {
                for v in comp {
                    label[v] = -side;
                }
            }
        }
    }
    for side in [1i8, -1] {
        let members: Vec<usize> = dom.vertices.iter().copied().filter(|&v| label[v] == side).collect();
        let inside: Vec<bool> = (0..n).map(|v| label[v] == side).collect();
        if components(&members, adj, &inside).len() != 1 {
            return Err(Error::Welding("a piece is disconnected; try a smaller m".into()));
        }
    }
    let collect = |side: i8| -> Vec<usize> {
        let mut v: Vec<usize> = dom.vertices.iter().copied().filter(|&v| label[v] == side || on_path[v]).collect();
        v.sort_unstable();
        v
    };
    let interior = &path[1..k];
    let mut loop_f = arc_f.clone();
    loop_f.extend(interior.iter().rev());
    let mut loop_b = arc_b.clone();
    loop_b.extend(interior.iter());
    let dom_f = Subdomain {
        vertices: collect(1),
        boundary: loop_f,
    };
    let dom_b = Subdomain {
        vertices: collect(-1),
        boundary: loop_b,
    };
    let mean = |d: &Subdomain| d.vertices.iter().map(|&v| s[v]).sum::<f64>() / d.vertices.len() as f64;
    if mean(&dom_f) <= mean(&dom_b) {
        Ok((dom_f, dom_b, path))
    } else {
        Ok((dom_b, dom_f, path))
    }
}

/// Cuts the cloud into `m` strips across its farthest-pair axis.
pub fn partition(pc: &PointCloud, m: usize, cfg: &Config) -> Result<Partition> {
    if m < 2 {
        return Err(Error::Config("m ≥ 2 required".into()));
    }
    let knn = knn_all(pc, cfg.k)?;
    let hoods = build_all(pc, &knn, cfg)?;
    partition_with(pc, m, &hoods)
}

/// Partition from precomputed neighborhoods; cuts follow one-ring edges.
pub fn partition_with(pc: &PointCloud, m: usize, hoods: &[Neighborhood]) -> Result<Partition> {
    if m < 2 {
        return Err(Error::Config("m ≥ 2 required".into()));
    }
    let n = pc.len();
    let adj = ring_graph(hoods);
    let (i0, i1) = farthest_pair(pc);
    let axis = (pc.points[i1] - pc.points[i0]).normalize();
    let s: Vec<f64> = pc.points.iter().map(|p| (p - pc.points[i0]).dot(&axis)).collect();
    let mut sorted = s.clone();
    sorted.sort_by(f64::total_cmp);
    let mut rest = Subdomain {
        vertices: (0..n).collect(),
        boundary: pc.boundary.clone(),
    };
    let mut domains = Vec::with_capacity(m);
    let mut paths = Vec::with_capacity(m - 1);
    for j in 1..m {
        let level = sorted[(j * n / m).min(n - 1)];
        let (lower, upper, path) = split(pc, &adj, &s, &rest, level)?;
        domains.push(lower);
        paths.push(WeldPath {
            vertices: path,
            lower: j - 1,
            upper: j,
        });
        rest = upper;
    }
    domains.push(rest);
    Ok(Partition { domains, paths })
}

/// Flattened boundary of one side of a weld, plus other points to carry
/// along (earlier seams) and an interior anchor point.
#[derive(Debug, Clone, PartialEq)]
pub struct WeldSide {
    pub boundary: Vec<C>,
    pub extra: Vec<C>,
    pub deep: C,
}

/// Positions after welding. `inf` is the image of the point at infinity of
/// each side's original plane.
#[derive(Debug, Clone, PartialEq)]
pub struct WeldedBoundary {
    pub b1: Vec<Ext>,
    pub b2: Vec<Ext>,
    pub extra1: Vec<Ext>,
    pub extra2: Vec<Ext>,
    pub deep: [Ext; 2],
    pub inf: [Ext; 2],
    pub corr: Vec<(usize, usize)>,
}

fn sqrt_h(u: C) -> C {
    C::i() * (-u).sqrt()
}

/// Unzipped side: the weld arc on the real axis (a_0 at ∞, a_k at 0) and the
/// remaining points in the upper half-plane, negated when `right`.
struct Unzipped {
    arc: Vec<f64>,
    free: Vec<C>,
}

fn unzip(arc_pts: &[C], free: &[C], right: bool) -> Result<Unzipped> {
    let k = arc_pts.len() - 1;
    let side = if right { 1.0 } else { -1.0 };
    let (a0, a1) = (arc_pts[0], arc_pts[1]);
    let h0 = |z: C| C::i() * ((z - a1) / (z - a0)).sqrt();
    let mut free: Vec<C> = free.iter().map(|&z| h0(z)).collect();
    let mut rest: Vec<C> = arc_pts.iter().map(|&z| h0(z)).collect();
    let mut arc = vec![f64::NAN; k + 1];
    arc[0] = f64::INFINITY;
    arc[1] = 0.0;
    for j in 2..=k {
        let zeta = rest[j];
        if !(zeta.im > 0.0) || !zeta.is_finite() {
            return Err(Error::Welding(format!("weld arc vertex {j} left the half-plane; the arc is not simple")));
        }
        let r2 = zeta.norm_sqr();
        let a = zeta.re / r2;
        let d = r2 / zeta.im;
        let step = |z: C| {
            let w = z / (1.0 - a * z);
            sqrt_h((w - C::i() * d) * (w + C::i() * d))
        };
        for z in free.iter_mut() {
            *z = step(*z);
        }
        for z in rest[j + 1..].iter_mut() {
            *z = step(*z);
        }
        for x in arc[..j].iter_mut() {
            let w = if x.is_infinite() {
                if a == 0.0 {
                    f64::INFINITY
                } else {
                    -1.0 / a
                }
            } else {
                let den = 1.0 - a * *x;
                if den == 0.0 {
                    f64::INFINITY
                } else {
                    *x / den
                }
            };
            *x = if w.is_infinite() {
                f64::INFINITY
            } else {
                let sgn = if w > 0.0 {
                    1.0
                } else if w < 0.0 {
                    -1.0
                } else {
                    side
                };
                sgn * w.hypot(d)
            };
        }
        arc[j] = 0.0;
    }
    // Send a_0 back to infinity with a real map fixing 0.
    let x0 = arc[0];
    if x0.is_finite() {
        for z in free.iter_mut() {
            *z /= 1.0 - *z / x0;
        }
        for x in arc.iter_mut() {
            *x = if *x == x0 {
                f64::INFINITY
            } else if x.is_infinite() {
                -x0
            } else {
                *x / (1.0 - *x / x0)
            };
        }
    }
    for (j, &x) in arc.iter().enumerate().take(k).skip(1) {
        if !(x * side > 0.0) || !x.is_finite() {
            return Err(Error::Welding(format!("weld arc vertex {j} landed on the wrong side")));
        }
    }
    if right {
        for z in free.iter_mut() {
            *z = -*z;
        }
        for x in arc.iter_mut() {
            if x.is_finite() {
                *x = -*x;
            }
        }
    }
    Ok(Unzipped { arc, free })
}

/// Glues the weld arcs of two flattened boundaries. `corr[j]` pairs loop
/// positions (in `s1`, in `s2`); `s1` traverses the pairs forward and `s2`
/// backward, so both interiors lie on the same side of the seam.
pub fn weld_pair(s1: &WeldSide, s2: &WeldSide, corr: &[(usize, usize)]) -> Result<WeldedBoundary> {
    let k1 = corr.len();
    if k1 < 2 {
        return Err(Error::Welding("weld arcs need at least two corresponding vertices".into()));
    }
    let (l1, l2) = (s1.boundary.len(), s2.boundary.len());
    for j in 1..k1 {
        if corr[j].0 != (corr[j - 1].0 + 1) % l1 || (corr[j].1 + 1) % l2 != corr[j - 1].1 {
            return Err(Error::Welding("correspondence is not a contiguous pair of arcs".into()));
        }
    }
    if l1 <= k1 || l2 <= k1 {
        return Err(Error::Welding("weld arc covers a whole boundary".into()));
    }
    for (side, b) in [(1, &s1.boundary), (2, &s2.boundary)] {
        let poly: Vec<Vec2> = b.iter().map(|z| Vec2::new(z.re, z.im)).collect();
        if !crate::meshing::is_simple_loop(&poly) {
            return Err(Error::Welding(format!("boundary {side} is not simple")));
        }
    }
    let k = k1 - 1;
    let mut arc_idx1 = vec![usize::MAX; l1];
    let mut arc_idx2 = vec![usize::MAX; l2];
    for (j, &(p, q)) in corr.iter().enumerate() {
        arc_idx1[p] = j;
        arc_idx2[q] = j;
    }
    // Free points: non-arc boundary, extra, deep, infinity (handled apart).
    let gather = |s: &WeldSide, idx: &[usize]| -> (Vec<C>, Vec<usize>) {
        let mut free = Vec::new();
        let mut slot = vec![usize::MAX; s.boundary.len()];
        for (i, &z) in s.boundary.iter().enumerate() {
            if idx[i] == usize::MAX {
                slot[i] = free.len();
                free.push(z);
            }
        }
        free.extend(&s.extra);
        free.push(s.deep);
        free.push(far_point(&s.boundary));
        (free, slot)
    };
    let (free1, slot1) = gather(s1, &arc_idx1);
    let (free2, slot2) = gather(s2, &arc_idx2);
    // Each weld edge is subdivided at matching parameters on both sides.
    let sub = WELD_SUBDIVISION;
    let refine = |pts: Vec<C>| -> Vec<C> {
        let mut out = Vec::with_capacity(k * sub + 1);
        for j in 0..k {
            for t in 0..sub {
                out.push(pts[j] + (pts[j + 1] - pts[j]) * (t as f64 / sub as f64));
            }
        }
        out.push(pts[k]);
        out
    };
    let arc1 = refine(corr.iter().map(|&(p, _)| s1.boundary[p]).collect());
    let arc2 = refine(corr.iter().map(|&(_, q)| s2.boundary[q]).collect());
    let k_fine = k * sub;
    let u1 = unzip(&arc1, &free1, false)?;
    let u2 = unzip(&arc2, &free2, true)?;
    let n1 = u1.free.len();
    // Rotate both half-planes onto the right half-plane: side 1's arc onto
    // the upper imaginary axis, side 2's (stored negated) onto the lower.
    let mut free: Vec<C> = u1.free.iter().map(|&z| -C::i() * z).chain(u2.free.iter().map(|&z| C::i() * z)).collect();
    // Imaginary-axis points are tracked by their signed height y; pair 0 starts at ∞.
    let mut up: Vec<f64> = u1.arc.iter().map(|&x| if x.is_finite() { -x } else { x }).collect();
    let mut lo: Vec<f64> = u2.arc.clone();
    let mut y0 = f64::INFINITY;
    // glued[j] is the shared image of pair j once zipped.
    let mut glued: Vec<Option<C>> = vec![None; k_fine + 1];
    glued[k_fine] = Some(C::new(0.0, 0.0));
    for j in (1..k_fine).rev() {
        let (u, l) = (up[j], -lo[j]);
        if !(u > 0.0 && l > 0.0 && u.is_finite() && l.is_finite()) {
            return Err(Error::Welding(format!("weld pair {j} left the imaginary axis")));
        }
        // Half-plane automorphism fixing 0 with iu, -il ↦ ±iL, then the fold at 0.
        let alpha = (l - u) / (2.0 * u * l);
        let big_l = 2.0 * u * l / (u + l);
        let zip = |z: C| {
            let w = z / (1.0 + C::i() * alpha * z);
            ((w - C::i() * big_l) * (w + C::i() * big_l)).sqrt()
        };
        let zip_y = |y: f64| -> f64 {
            let w = if y.is_infinite() {
                if alpha == 0.0 {
                    f64::INFINITY
                } else {
                    -1.0 / alpha
                }
            } else {
                let den = 1.0 - alpha * y;
                if den == 0.0 {
                    f64::INFINITY
                } else {
                    y / den
                }
            };
            if w.is_infinite() {
                f64::INFINITY
            } else {
                w.signum() * ((w.abs() - big_l).max(0.0) * (w.abs() + big_l)).sqrt()
            }
        };
        for z in free.iter_mut() {
            *z = zip(*z);
        }
        for g in glued.iter_mut().flatten() {
            *g = zip(*g);
        }
        for jj in 1..j {
            up[jj] = zip_y(up[jj]);
            lo[jj] = zip_y(lo[jj]);
        }
        y0 = zip_y(y0);
        glued[j] = Some(C::new(0.0, 0.0));
    }
    // Return pair 0 to infinity; squaring then closes the last segment.
    if y0.is_finite() {
        let back = |z: C| z / (1.0 + C::i() * z / y0);
        for z in free.iter_mut() {
            *z = back(*z);
        }
        for g in glued.iter_mut().flatten() {
            *g = back(*g);
        }
    }
    let sq = |z: C| z * z;
    let fin = |z: C| Ext::Finite(sq(z));
    let arc_pos = |j: usize| -> Ext {
        if j == 0 {
            Ext::Infinity
        } else {
            fin(glued[j * sub].expect("every pair is zipped"))
        }
    };
    let b1 = (0..l1)
        .map(|i| {
            if arc_idx1[i] != usize::MAX {
                arc_pos(arc_idx1[i])
            } else {
                fin(free[slot1[i]])
            }
        })
        .collect();
    let b2 = (0..l2)
        .map(|i| {
            if arc_idx2[i] != usize::MAX {
                arc_pos(arc_idx2[i])
            } else {
                fin(free[n1 + slot2[i]])
            }
        })
        .collect();
    let nb1 = slot1.iter().filter(|&&s| s != usize::MAX).count();
    let nb2 = slot2.iter().filter(|&&s| s != usize::MAX).count();
    let extra1 = (0..s1.extra.len()).map(|e| fin(free[nb1 + e])).collect();
    let extra2 = (0..s2.extra.len()).map(|e| fin(free[n1 + nb2 + e])).collect();
    let nf = free.len();
    Ok(WeldedBoundary {
        b1,
        b2,
        extra1,
        extra2,
        deep: [fin(free[n1 - 2]), fin(free[nf - 2])],
        inf: [fin(free[n1 - 1]), fin(free[nf - 1])],
        corr: corr.to_vec(),
    })
}

/// Stand-in for the point at infinity: its first unzip image is i to machine precision.
fn far_point(arc: &[C]) -> C {
    let scale = arc.iter().map(|z| z.norm()).fold(1.0, f64::max);
    C::new(1e30 * scale, 0.0)
}

fn signed_area(pts: &[C]) -> f64 {
    let l = pts.len();
    (0..l)
        .map(|q| {
            let (a, b) = (pts[q], pts[(q + 1) % l]);
            a.re * b.im - b.re * a.im
        })
        .sum::<f64>()
        * 0.5
}

/// Merged outline: side 1 from the seam tip around to a_0, then side 2 from
/// a_0 around to the tip, endpoints once.
fn merged_outline<T: Copy>(b1: &[T], b2: &[T], corr: &[(usize, usize)]) -> Vec<T> {
    let (l1, l2) = (b1.len(), b2.len());
    let k = corr.len() - 1;
    let mut out = Vec::with_capacity(l1 + l2);
    let mut p = corr[k].0;
    loop {
        out.push(b1[p]);
        if p == corr[0].0 {
            break;
        }
        p = (p + 1) % l1;
    }
    let mut q = (corr[0].1 + 1) % l2;
    while q != corr[k].1 {
        out.push(b2[q]);
        q = (q + 1) % l2;
    }
    out
}

/// Point inside the bounded region enclosed by Γ: midpoint of the first two
/// crossings of the vertical mid-line, counted from below.
pub fn gamma_pole(gamma: &[C]) -> Result<C> {
    let (lo, hi) = gamma
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| (lo.min(z.re), hi.max(z.re)));
    let x = 0.5 * (lo + hi);
    let l = gamma.len();
    let mut ys = Vec::new();
    for q in 0..l {
        let (a, b) = (gamma[q], gamma[(q + 1) % l]);
        if (a.re < x) != (b.re < x) {
            ys.push(a.im + (x - a.re) / (b.re - a.re) * (b.im - a.im));
        }
    }
    if ys.len() < 2 {
        return Err(Error::Welding("vertical line meets Γ fewer than twice".into()));
    }
    ys.sort_by(f64::total_cmp);
    Ok(C::new(x, 0.5 * (ys[0] + ys[1])))
}

/// Points inserted per weld edge on each side during zipping.
const WELD_SUBDIVISION: usize = 4;

/// Largest |z| accepted from the anchor normalization before falling back.
pub const POLE_BOUND: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub map: Mobius,
    /// True when the pole fell inside a domain and Γ was used instead.
    pub fallback: bool,
}

/// Möbius normalization of a welded layout sending the two anchors to ∓1 and
/// the mean image of infinity to ∞. When that pole lies in or near the
/// union, a pole inside the bounded complement of the outline is used.
pub fn normalize_welded(w: &WeldedBoundary) -> Result<(WeldedBoundary, Normalization)> {
    let p = match (w.inf[0], w.inf[1]) {
        (Ext::Finite(a), Ext::Finite(b)) => Ext::Finite(0.5 * (a + b)),
        _ => return Err(Error::Welding("image of infinity is not finite".into())),
    };
    let dst = [C::new(-1.0, 0.0).into(), C::new(1.0, 0.0).into(), Ext::Infinity];
    let t0 = Mobius::three_point([w.deep[0], w.deep[1], p], dst)?;
    let apply = |t: &Mobius, v: &[Ext]| -> Vec<Ext> { v.iter().map(|&z| t.apply(z)).collect() };
    let finite = |v: &[Ext]| -> Option<Vec<C>> { v.iter().map(|z| z.finite()).collect() };
    let b1 = apply(&t0, &w.b1);
    let b2 = apply(&t0, &w.b2);
    let ok = match (finite(&b1), finite(&b2)) {
        (Some(p1), Some(p2)) => signed_area(&p1) > 0.0 && signed_area(&p2) > 0.0 && p1.iter().chain(&p2).all(|z| z.norm() <= POLE_BOUND),
        _ => false,
    };
    let (map, fallback) = if ok {
        (t0, false)
    } else {
        // Send an interior point to infinity so the outline is finite and the
        // complement of the union is bounded, then pick a pole inside it.
        let c = w.deep[0].finite().ok_or_else(|| Error::Welding("interior anchor at infinity".into()))?;
        let aux = Mobius::new(C::new(0.0, 0.0), C::new(1.0, 0.0), C::new(1.0, 0.0), -c)?;
        let gamma = finite(&merged_outline(&apply(&aux, &w.b1), &apply(&aux, &w.b2), &w.corr))
            .ok_or_else(|| Error::Welding("outline passes through the interior anchor".into()))?;
        let q = gamma_pole(&gamma)?;
        let l = gamma.len() / 2;
        let t1 = Mobius::three_point([gamma[0].into(), gamma[l].into(), q.into()], dst)?;
        (t1.compose(&aux), true)
    };
    let out = WeldedBoundary {
        b1: apply(&map, &w.b1),
        b2: apply(&map, &w.b2),
        extra1: apply(&map, &w.extra1),
        extra2: apply(&map, &w.extra2),
        deep: [map.apply(w.deep[0]), map.apply(w.deep[1])],
        inf: [map.apply(w.inf[0]), map.apply(w.inf[1])],
        corr: w.corr.clone(),
    };
    Ok((out, Normalization { map, fallback }))
}

/// Dirichlet solve of L f = 0 with the listed (local) vertices pinned.
pub fn solve_with_boundary(l: &SparseOperator, boundary: &[(usize, Vec2)]) -> Result<Parameterization> {
    solve_dirichlet(l, boundary).map(|(f, rep)| {
        log::debug!("dirichlet residual {:e}", rep.residual);
        f
    })
}

/// Merges per-domain maps (given as global-index lists), averaging duplicates.
pub fn combine(n: usize, parts: &[(Vec<usize>, Parameterization)], tol: f64) -> Result<Parameterization> {
    let mut sum = vec![Vec2::zeros(); n];
    let mut count = vec![0usize; n];
    let mut first: Vec<Option<Vec2>> = vec![None; n];
    let mut worst = 0.0f64;
    for (idx, f) in parts {
        for (li, &g) in idx.iter().enumerate() {
            let p = f.uv[li];
            if let Some(q) = first[g] {
                worst = worst.max((p - q).norm());
            } else {
                first[g] = Some(p);
            }
            sum[g] += p;
            count[g] += 1;
        }
    }
    if worst > tol {
        return Err(Error::SeamMismatch(worst));
    }
    if let Some(v) = count.iter().position(|&c| c == 0) {
        return Err(Error::Welding(format!("vertex {v} belongs to no subdomain")));
    }
    Ok(Parameterization {
        uv: sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect(),
    })
}

/// Running welded layout: positions of every vertex on any welded loop.
#[derive(Debug, Clone)]
struct Layout {
    pos: BTreeMap<usize, C>,
    boundary: Vec<usize>,
    deep: C,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeldStats {
    /// Largest distance between duplicated seam positions after combining.
    pub seam_gap: f64,
    /// Largest |position| of any welded boundary vertex after normalization.
    pub layout_max: f64,
    pub fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct WeldOutput {
    pub param: Parameterization,
    pub partition: Partition,
    pub stats: WeldStats,
}

fn weld_layouts(x: &Layout, y: &Layout, path: &[usize]) -> Result<(Layout, Normalization)> {
    let k = path.len() - 1;
    let px: Vec<usize> = path
        .iter()
        .map(|&v| loop_pos(&x.boundary, v))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Welding("weld path missing from lower boundary".into()))?;
    let py: Vec<usize> = path
        .iter()
        .map(|&v| loop_pos(&y.boundary, v))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Welding("weld path missing from upper boundary".into()))?;
    let lx = x.boundary.len();
    // Order the arc the way the lower side traverses it.
    let forward = px[1] == (px[0] + 1) % lx;
    let order: Vec<usize> = if forward { (0..=k).collect() } else { (0..=k).rev().collect() };
    let corr: Vec<(usize, usize)> = order.iter().map(|&j| (px[j], py[j])).collect();
    let side = |l: &Layout| -> (WeldSide, Vec<usize>) {
        let extra_ids: Vec<usize> = l.pos.keys().copied().filter(|v| !l.boundary.contains(v)).collect();
        (
            WeldSide {
                boundary: l.boundary.iter().map(|v| l.pos[v]).collect(),
                extra: extra_ids.iter().map(|v| l.pos[v]).collect(),
                deep: l.deep,
            },
            extra_ids,
        )
    };
    let (sx, ex) = side(x);
    let (sy, ey) = side(y);
    let welded = weld_pair(&sx, &sy, &corr)?;
    let (w, norm) = normalize_welded(&welded)?;
    let fin = |z: Ext| z.finite().ok_or_else(|| Error::Welding("welded vertex at infinity".into()));
    let mut pos = BTreeMap::new();
    for (i, &v) in x.boundary.iter().enumerate() {
        pos.insert(v, fin(w.b1[i])?);
    }
    for (i, &v) in ex.iter().enumerate() {
        pos.insert(v, fin(w.extra1[i])?);
    }
    for (i, &v) in y.boundary.iter().enumerate() {
        let z = fin(w.b2[i])?;
        if let Some(prev) = pos.insert(v, z) {
            if prev != z {
                return Err(Error::SeamMismatch((prev - z).norm()));
            }
        }
    }
    for (i, &v) in ey.iter().enumerate() {
        pos.insert(v, fin(w.extra2[i])?);
    }
    let boundary = merged_outline(&x.boundary, &y.boundary, &corr);
    Ok((
        Layout {
            pos,
            boundary,
            deep: fin(w.deep[0])?,
        },
        norm,
    ))
}

/// A subdomain flattened on its own, with local indices.
#[derive(Debug, Clone)]
pub struct FlatPiece {
    pub cloud: PointCloud,
    /// Global index of each local vertex.
    pub global: Vec<usize>,
    pub output: crate::solver::PipelineOutput,
}

/// Flattens one subdomain using the global kNN lists with outside points removed.
pub fn flatten_subdomain(pc: &PointCloud, dom: &Subdomain, knn: &[Vec<usize>], cfg: &Config) -> Result<FlatPiece> {
    let n = pc.len();
    let mut local = vec![usize::MAX; n];
    for (li, &g) in dom.vertices.iter().enumerate() {
        local[g] = li;
    }
    let cloud = PointCloud {
        points: dom.vertices.iter().map(|&g| pc.points[g]).collect(),
        boundary: dom.boundary.iter().map(|&g| local[g]).collect(),
    };
    let sub_knn: Vec<Vec<usize>> = dom
        .vertices
        .iter()
        .map(|&g| knn[g].iter().filter(|&&j| local[j] != usize::MAX).map(|&j| local[j]).collect())
        .collect();
    let mut hoods = build_all(&cloud, &sub_knn, cfg)?;
    let outer = pc.boundary_mask();
    let mut on_loop = vec![false; n];
    for &g in &dom.boundary {
        on_loop[g] = true;
    }
    let l = cloud.boundary.len();
    for (q, &b) in cloud.boundary.iter().enumerate() {
        let g = dom.vertices[b];
        let (prev, next) = (cloud.boundary[(q + l - 1) % l], cloud.boundary[(q + 1) % l]);
        // Cut vertices, including the two where the cut meets the outer boundary.
        if outer[g] && outer[dom.vertices[prev]] && outer[dom.vertices[next]] {
            continue;
        }
        let f = hoods[b].frame;
        let probe: Vec<(Vec2, bool)> = knn[g]
            .iter()
            .filter(|&&j| !on_loop[j])
            .map(|&j| {
                let v = pc.points[j] - f.origin;
                (Vec2::new(v.dot(&f.e1), v.dot(&f.e2)), local[j] != usize::MAX)
            })
            .collect();
        clip_to_interior(&mut hoods[b], prev, next, &probe);
    }
    let output = parameterize_from_hoods(&cloud, hoods, cfg)?;
    Ok(FlatPiece {
        cloud,
        global: dom.vertices.clone(),
        output,
    })
}

/// Drops ring triangles of a cut vertex that lie outside the wedge between
/// its loop neighbors. `probe` holds projected full-cloud neighbors tagged
/// inside (true) or outside (false); the interior wedge is the one with the
/// smaller share of outside points.
fn clip_to_interior(h: &mut Neighborhood, prev: usize, next: usize, probe: &[(Vec2, bool)]) {
    let c = h.chart.coords[0];
    let (Some(p), Some(n)) = (h.chart.pos(prev), h.chart.pos(next)) else {
        return;
    };
    let tau = std::f64::consts::TAU;
    let ang = |v: Vec2| (v.y - c.y).atan2(v.x - c.x);
    let (an, ap) = (ang(n), ang(p));
    let sweep = (ap - an).rem_euclid(tau);
    // True when direction `a` lies strictly inside the ccw sweep from `an` to `ap`.
    let in_ccw = |a: f64| {
        let t = (a - an).rem_euclid(tau);
        t > 0.0 && t < sweep
    };
    let mut count = [[0usize; 2]; 2];
    for &(v, inside) in probe {
        count[in_ccw(ang(v)) as usize][inside as usize] += 1;
    }
    let share = |s: [usize; 2]| s[0] as f64 / (s[0] + s[1]).max(1) as f64;
    let keep_ccw = share(count[1]) <= share(count[0]);
    let tris: Vec<[usize; 3]> = h
        .ring
        .triangles
        .iter()
        .copied()
        .filter(|t| {
            let g = (h.chart.at(t[0]) + h.chart.at(t[1]) + h.chart.at(t[2])) / 3.0;
            in_ccw(ang(g)) == keep_ccw
        })
        .collect();
    if !tris.is_empty() {
        h.ring = LocalRing::new(h.ring.center, tris);
    }
}

fn initial_layout(piece: &FlatPiece) -> Result<Layout> {
    let uv = &piece.output.param.uv;
    let sub = &piece.cloud;
    let to_c = |p: Vec2| C::new(p.x, p.y);
    let mut on_loop = vec![false; sub.len()];
    for &b in &sub.boundary {
        on_loop[b] = true;
    }
    // Interior vertex farthest from the boundary loop.
    let deep = (0..sub.len())
        .filter(|&i| !on_loop[i])
        .map(|i| {
            let d = sub.boundary.iter().map(|&b| (uv[i] - uv[b]).norm_squared()).fold(f64::INFINITY, f64::min);
            (d, i)
        })
        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, i)| i)
        .ok_or_else(|| Error::Welding("subdomain has no interior vertex".into()))?;
    Ok(Layout {
        pos: sub.boundary.iter().map(|&b| (piece.global[b], to_c(uv[b]))).collect(),
        boundary: sub.boundary.iter().map(|&b| piece.global[b]).collect(),
        deep: to_c(uv[deep]),
    })
}

/// Full divide-and-conquer pipeline. `overrides[i]`, when present, replaces
/// `cfg` for subdomain i.
pub fn run(pc: &PointCloud, m: usize, cfg: &Config, overrides: &[Option<Config>]) -> Result<WeldOutput> {
    cfg.validate()?;
    if m < 2 {
        return Err(Error::Config("m ≥ 2 required".into()));
    }
    let report = crate::model::validate_point_cloud(pc);
    if !report.ok {
        return Err(Error::Data(report.messages.join("; ")));
    }
    let knn = knn_all(pc, cfg.k)?;
    let hoods = build_all(pc, &knn, cfg)?;
    let part = partition_with(pc, m, &hoods)?;
    let cfgs: Vec<Config> = (0..m).map(|i| overrides.get(i).copied().flatten().unwrap_or(*cfg)).collect();
    for c in &cfgs {
        c.validate()?;
    }
    let mut knn_by_k: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    knn_by_k.insert(cfg.k, knn);
    for c in &cfgs {
        if let Entry::Vacant(e) = knn_by_k.entry(c.k) {
            e.insert(knn_all(pc, c.k)?);
        }
    }
    let pieces: Vec<FlatPiece> = part
        .domains
        .par_iter()
        .zip(cfgs.par_iter())
        .map(|(dom, c)| flatten_subdomain(pc, dom, &knn_by_k[&c.k], c))
        .collect::<Result<_>>()?;
    let layouts: Vec<Layout> = pieces.iter().map(initial_layout).collect::<Result<_>>()?;
    let mut layout = layouts[0].clone();
    let mut fallbacks = 0;
    for (j, path) in part.paths.iter().enumerate() {
        let (merged, norm) = weld_layouts(&layout, &layouts[j + 1], &path.vertices)?;
        fallbacks += norm.fallback as usize;
        layout = merged;
    }
    let layout_max = layout.pos.values().map(|z| z.norm()).fold(0.0, f64::max);
    let parts: Vec<(Vec<usize>, Parameterization)> = pieces
        .par_iter()
        .zip(part.domains.par_iter())
        .map(|(piece, dom)| {
            let local: BTreeMap<usize, usize> = piece.global.iter().enumerate().map(|(li, &g)| (g, li)).collect();
            let fixed: Vec<(usize, Vec2)> = dom
                .boundary
                .iter()
                .map(|g| {
                    let z = layout.pos[g];
                    (local[g], Vec2::new(z.re, z.im))
                })
                .collect();
            solve_with_boundary(&piece.output.laplacian, &fixed).map(|f| (piece.global.clone(), f))
        })
        .collect::<Result<_>>()?;
    let (lo, hi) = layout
        .pos
        .values()
        .fold((Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY)), |(lo, hi), z| {
            (lo.inf(&Vec2::new(z.re, z.im)), hi.sup(&Vec2::new(z.re, z.im)))
        });
    let diam = (hi - lo).norm();
    let combined = combine(pc.len(), &parts, 1e-9 * diam)?;
    let mut seam_gap = 0.0f64;
    for (idx, f) in &parts {
        for (li, &g) in idx.iter().enumerate() {
            seam_gap = seam_gap.max((f.uv[li] - combined.uv[g]).norm());
        }
    }
    // Similarity sending the farthest pair to (0, 0) and (1, 0).
    let (i0, i1) = farthest_pair(pc);
    let z0 = C::new(combined.uv[i0].x, combined.uv[i0].y);
    let z1 = C::new(combined.uv[i1].x, combined.uv[i1].y);
    if (z1 - z0).norm() == 0.0 {
        return Err(Error::Welding("farthest pair collapsed in the welded map".into()));
    }
    let uv = combined
        .uv
        .iter()
        .map(|p| {
            let w = (C::new(p.x, p.y) - z0) / (z1 - z0);
            Vec2::new(w.re, w.im)
        })
        .collect();
    let mut param = Parameterization { uv };
    param.uv[i0] = Vec2::new(0.0, 0.0);
    param.uv[i1] = Vec2::new(1.0, 0.0);
    if !param.is_finite() {
        return Err(Error::NonFinite("welded parameterization"));
    }
    Ok(WeldOutput {
        param,
        partition: part,
        stats: WeldStats {
            seam_gap: seam_gap / diam.max(f64::MIN_POSITIVE),
            layout_max,
            fallbacks,
        },
    })
}
