//! Seeded synthetic fixtures and Gaussian noise.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::meshing::point_in_polygon;
use crate::model::{PointCloud, Vec2, Vec3};

pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Disk,
    Hemisphere,
    Bumpy,
    LShape,
    Fig2Concave,
}

impl FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(Shape::Disk),
            "hemisphere" => Ok(Shape::Hemisphere),
            "bumpy" => Ok(Shape::Bumpy),
            "lshape" => Ok(Shape::LShape),
            "fig2-concave" => Ok(Shape::Fig2Concave),
            _ => Err(Error::Config(format!("unknown shape '{s}'"))),
        }
    }
}

pub fn generate(shape: Shape, n: usize, seed: u64) -> Result<PointCloud> {
    match shape {
        Shape::Disk => disk(n, seed),
        Shape::Hemisphere => hemisphere(n, seed),
        Shape::Bumpy => bumpy(n, seed),
        Shape::LShape => lshape(n, seed),
        Shape::Fig2Concave => fig2_concave(n, seed),
    }
}

/// Point counts per concentric ring (ring 0 is the single center point).
/// The outermost ring repeats the count of the one inside it.
fn ring_counts(n: usize, rings: impl Fn(usize) -> Vec<f64>) -> Result<Vec<usize>> {
    if n < 20 {
        return Err(Error::Config("at least 20 points are required".into()));
    }
    let total = |c: &[usize]| c.iter().sum::<usize>();
    let build = |r: usize, alpha: f64| -> Vec<usize> {
        let w = rings(r);
        let mut c: Vec<usize> = w.iter().map(|&x| ((alpha * x).round() as usize).max(3)).collect();
        c[0] = 1;
        let last = c.len() - 1;
        c[last] = c[last - 1];
        c
    };
    let mut r = 2;
    while total(&build(r + 1, 1.0)) <= n {
        r += 1;
    }
    let (mut lo, mut hi) = (0.5, 2.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if total(&build(r, mid)) <= n {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut c = build(r, lo);
    let last = c.len() - 1;
    // Spread the remainder over interior rings, outermost interior first.
    let mut j = last.saturating_sub(2);
    while total(&c) < n {
        if j == 0 {
            j = last.saturating_sub(2).max(1);
        }
        c[j] += 1;
        j -= 1;
    }
    if total(&c) != n || last < 2 {
        return Err(Error::Config(format!("cannot build {n} ring points")));
    }
    Ok(c)
}

/// Flat unit disk in z = 0 built from jittered concentric rings; the
/// boundary ring lies exactly on the unit circle and is ordered
/// counterclockwise.
pub fn disk(n: usize, seed: u64) -> Result<PointCloud> {
    let counts = ring_counts(n, |r| (0..=r).map(|j| 2.0 * PI * j as f64).collect())?;
    let r = counts.len() - 1;
    let h = 1.0 / r as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![Vec3::zeros()];
    let outer_phase = rng.random::<f64>() * 2.0 * PI;
    for (j, &c) in counts.iter().enumerate().skip(1) {
        let step = 2.0 * PI / c as f64;
        let (phase, jitter) = if j == r {
            (outer_phase, 0.0)
        } else if j == r - 1 {
            (outer_phase + 0.5 * step, 0.05)
        } else {
            (rng.random::<f64>() * 2.0 * PI, 0.1)
        };
        for s in 0..c {
            let dr = jitter * h * (2.0 * rng.random::<f64>() - 1.0);
            let dt = jitter * step * (2.0 * rng.random::<f64>() - 1.0);
            let rad = if j == r { 1.0 } else { j as f64 * h + dr };
            let t = phase + s as f64 * step + dt;
            points.push(Vec3::new(rad * t.cos(), rad * t.sin(), 0.0));
        }
    }
    let boundary: Vec<usize> = (n - counts[r]..n).collect();
    PointCloud::new(points, boundary)
}

/// Upper unit hemisphere; the boundary is the equator, counterclockwise
/// seen from +z. The pole is a sample point.
pub fn hemisphere(n: usize, seed: u64) -> Result<PointCloud> {
    let counts = ring_counts(n, |r| {
        (0..=r)
            .map(|j| 2.0 * PI * (0.5 * PI * j as f64 / r as f64).sin() * r as f64 / (0.5 * PI))
            .collect()
    })?;
    let r = counts.len() - 1;
    let dtheta = 0.5 * PI / r as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![Vec3::z()];
    let outer_phase = rng.random::<f64>() * 2.0 * PI;
    for (j, &c) in counts.iter().enumerate().skip(1) {
        let step = 2.0 * PI / c as f64;
        let (phase, jitter) = if j == r {
            (outer_phase, 0.0)
        } else if j == r - 1 {
            (outer_phase + 0.5 * step, 0.05)
        } else {
            (rng.random::<f64>() * 2.0 * PI, 0.1)
        };
        for s in 0..c {
            let theta = if j == r {
                0.5 * PI
            } else {
                j as f64 * dtheta + jitter * dtheta * (2.0 * rng.random::<f64>() - 1.0)
            };
            let phi = phase + s as f64 * step + jitter * step * (2.0 * rng.random::<f64>() - 1.0);
            let z = if j == r { 0.0 } else { theta.cos() };
            points.push(Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), z));
        }
    }
    let boundary: Vec<usize> = (n - counts[r]..n).collect();
    PointCloud::new(points, boundary)
}

fn seg_dist(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (p - a - d * t).norm()
}

/// Samples a counterclockwise polygon: boundary points along the edges
/// (with optional normal jitter) followed by jittered interior grid points.
/// Boundary indices come first in the returned list.
fn polygon_patch(poly: &[Vec2], n: usize, seed: u64, jitter: f64, edge_jitter: f64) -> (Vec<Vec2>, usize) {
    let l = poly.len();
    let perimeter: f64 = (0..l).map(|k| (poly[(k + 1) % l] - poly[k]).norm()).sum();
    let area: f64 = 0.5 * (0..l).map(|k| poly[k].perp(&poly[(k + 1) % l])).sum::<f64>();
    // area / h² + perimeter / h = n
    let h = (perimeter + (perimeter * perimeter + 4.0 * n as f64 * area).sqrt()) / (2.0 * n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    for k in 0..l {
        let (a, b) = (poly[k], poly[(k + 1) % l]);
        let segs = ((b - a).norm() / h).round().max(1.0) as usize;
        let normal = Vec2::new((b - a).y, -(b - a).x).normalize();
        for s in 0..segs {
            let mut p = a + (b - a) * (s as f64 / segs as f64);
            if s > 0 {
                p += normal * (edge_jitter * h * (2.0 * rng.random::<f64>() - 1.0));
            }
            pts.push(p);
        }
    }
    let nb = pts.len();
    let (lo, hi) = poly.iter().fold((Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY)), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    });
    let nx = ((hi.x - lo.x) / h).ceil() as usize;
    let ny = ((hi.y - lo.y) / h).ceil() as usize;
    for iy in 0..=ny {
        for ix in 0..=nx {
            let mut p = Vec2::new(lo.x + ix as f64 * h, lo.y + iy as f64 * h);
            p += Vec2::new(2.0 * rng.random::<f64>() - 1.0, 2.0 * rng.random::<f64>() - 1.0) * (jitter * h);
            let clear = (0..l).all(|k| seg_dist(p, poly[k], poly[(k + 1) % l]) > 0.6 * h);
            if clear && point_in_polygon(p, poly) {
                pts.push(p);
            }
        }
    }
    (pts, nb)
}

fn lift(pts: Vec<Vec2>, nb: usize, height: impl Fn(Vec2) -> f64) -> Result<PointCloud> {
    let points = pts.iter().map(|p| Vec3::new(p.x, p.y, height(*p))).collect();
    PointCloud::new(points, (0..nb).collect())
}

fn l_polygon() -> Vec<Vec2> {
    vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(1.0, 0.0),
        Vec2::new(1.0, 0.5),
        Vec2::new(0.5, 0.5),
        Vec2::new(0.5, 1.0),
        Vec2::new(0.0, 1.0),
    ]
}

/// Height of the bumpy patch.
pub fn bumpy_height(p: Vec2) -> f64 {
    0.1 * (2.0 * PI * p.x).sin() * (2.0 * PI * p.y).cos() + 0.05 * (5.0 * p.x + 3.0 * p.y).sin()
}

/// Curved heightfield over the L-shaped region [0,1]² minus (0.5,1]².
pub fn bumpy(n: usize, seed: u64) -> Result<PointCloud> {
    let (pts, nb) = polygon_patch(&l_polygon(), n, seed, 0.25, 0.0);
    lift(pts, nb, bumpy_height)
}

/// Flat L-shaped patch in z = 0.
pub fn lshape(n: usize, seed: u64) -> Result<PointCloud> {
    let (pts, nb) = polygon_patch(&l_polygon(), n, seed, 0.25, 0.0);
    lift(pts, nb, |_| 0.0)
}

/// Apex of the notch in the concave-corner fixture.
pub const FIG2_APEX: [f64; 2] = [0.5, 0.75];

/// Flat unit square with a wide V-notch cut from the top edge; the notch
/// opening at the apex is about 140°.
pub fn fig2_concave(n: usize, seed: u64) -> Result<PointCloud> {
    let half = 70f64.to_radians();
    let depth = 1.0 - FIG2_APEX[1];
    let w = depth * half.tan();
    let poly = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(1.0, 0.0),
        Vec2::new(1.0, 1.0),
        Vec2::new(0.5 + w, 1.0),
        Vec2::new(FIG2_APEX[0], FIG2_APEX[1]),
        Vec2::new(0.5 - w, 1.0),
        Vec2::new(0.0, 1.0),
    ];
    let (pts, nb) = polygon_patch(&poly, n, seed, 0.2, 0.0);
    lift(pts, nb, |_| 0.0)
}

/// Flat nx × ny grid with unit spacing; the boundary runs counterclockwise.
pub fn grid(nx: usize, ny: usize) -> Result<PointCloud> {
    let mut points = Vec::with_capacity(nx * ny);
    for r in 0..ny {
        for c in 0..nx {
            points.push(Vec3::new(c as f64, r as f64, 0.0));
        }
    }
    let id = |c: usize, r: usize| r * nx + c;
    let mut boundary = Vec::new();
    boundary.extend((0..nx - 1).map(|c| id(c, 0)));
    boundary.extend((0..ny - 1).map(|r| id(nx - 1, r)));
    boundary.extend((1..nx).rev().map(|c| id(c, ny - 1)));
    boundary.extend((1..ny).rev().map(|r| id(0, r)));
    PointCloud::new(points, boundary)
}

/// Adds N(0, σ²) to every coordinate with a seeded generator.
pub fn add_noise(pc: &PointCloud, sigma: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be finite and nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(pc.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = pc
        .points
        .iter()
        .map(|p| p + Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    Ok(PointCloud {
        points,
        boundary: pc.boundary.clone(),
    })
}
