#![allow(dead_code)]

use num_complex::Complex64;
use pcparam::model::{Parameterization, Vec2};

/// Best-fit similarity `z ↦ a z + b` from `src` onto `dst` (orthogonal
/// Procrustes with scale in complex form); returns the RMS residual.
pub fn similarity_rms(src: &[Vec2], dst: &[Vec2]) -> f64 {
    let n = src.len() as f64;
    let z: Vec<Complex64> = src.iter().map(|p| Complex64::new(p.x, p.y)).collect();
    let w: Vec<Complex64> = dst.iter().map(|p| Complex64::new(p.x, p.y)).collect();
    let zm = z.iter().sum::<Complex64>() / n;
    let wm = w.iter().sum::<Complex64>() / n;
    let num: Complex64 = z.iter().zip(&w).map(|(a, b)| (a - zm).conj() * (b - wm)).sum();
    let den: f64 = z.iter().map(|a| (a - zm).norm_sqr()).sum();
    let a = num / den;
    let b = wm - a * zm;
    (z.iter().zip(&w).map(|(p, q)| (a * p + b - q).norm_sqr()).sum::<f64>() / n).sqrt()
}

pub fn xy(points: &[pcparam::model::Vec3]) -> Vec<Vec2> {
    points.iter().map(|p| Vec2::new(p.x, p.y)).collect()
}

pub fn shoelace(f: &Parameterization, boundary: &[usize]) -> f64 {
    let l = boundary.len();
    (0..l)
        .map(|k| {
            let (a, b) = (f.uv[boundary[k]], f.uv[boundary[(k + 1) % l]]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        * 0.5
}
