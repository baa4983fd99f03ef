//! Text formats for point clouds, boundary loops, parameterizations, meshes,
//! metric reports and sparse operators.
//!
//! Writers are byte-deterministic. Floating-point values are written in
//! scientific notation with 17 significant digits unless noted otherwise.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{Parameterization, PointCloud, SparseOperator, TriangleMesh, Vec2, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Xyz,
    Ply,
    Obj,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xyz" | "txt" => Ok(Format::Xyz),
            "ply" => Ok(Format::Ply),
            "obj" => Ok(Format::Obj),
            _ => Err(Error::Config(format!("unknown point cloud format '{s}'"))),
        }
    }
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .ok_or_else(|| Error::Config(format!("{}: cannot infer format from extension", path.display())))?
            .parse()
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| parse_err(path, line, format!("'{tok}' is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

fn parse_xyz_tokens(path: &Path, line: usize, toks: &[&str]) -> Result<Vec3> {
    if toks.len() != 3 {
        return Err(parse_err(path, line, format!("expected 3 coordinates, found {}", toks.len())));
    }
    Ok(Vec3::new(
        parse_f64(path, line, toks[0])?,
        parse_f64(path, line, toks[1])?,
        parse_f64(path, line, toks[2])?,
    ))
}

/// Points only; the boundary is left empty.
pub fn read_point_cloud(path: &Path, format: Format) -> Result<PointCloud> {
    let text = read(path)?;
    let points = match format {
        Format::Xyz => parse_xyz(path, &text)?,
        Format::Ply => parse_ply(path, &text)?,
        Format::Obj => parse_obj(path, &text)?,
    };
    Ok(PointCloud { points, boundary: Vec::new() })
}

fn parse_xyz(path: &Path, text: &str) -> Result<Vec<Vec3>> {
    let mut pts = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        pts.push(parse_xyz_tokens(path, ln + 1, &toks)?);
    }
    Ok(pts)
}

fn parse_obj(path: &Path, text: &str) -> Result<Vec<Vec3>> {
    let mut pts = Vec::new();
    let mut faces = 0usize;
    for (ln, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first() {
            Some(&"v") => {
                // An optional fourth (w) component is not accepted.
                pts.push(parse_xyz_tokens(path, ln + 1, &toks[1..])?);
            }
            Some(&"f") => faces += 1,
            _ => {}
        }
    }
    if faces > 0 {
        log::warn!("{}: {faces} faces ignored; only vertices are read", path.display());
    }
    Ok(pts)
}

fn parse_ply(path: &Path, text: &str) -> Result<Vec<Vec3>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut before_vertex = 0usize;
    let mut ascii = false;
    let mut elements: Vec<(String, usize, usize)> = Vec::new();
    for (ln, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => ascii = true,
            ["format", ..] => return Err(parse_err(path, ln + 1, "ASCII PLY only")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| parse_err(path, ln + 1, "bad element count"))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    vertex_count = Some(count);
                } else if vertex_count.is_none() {
                    before_vertex += count;
                }
                elements.push((name.to_string(), count, 0));
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(parse_err(path, ln + 1, "list properties on vertices are not supported"));
                }
            }
            ["property", _ty, name] => {
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            ["end_header"] => break,
            _ => return Err(parse_err(path, ln + 1, format!("unexpected header line '{line}'"))),
        }
    }
    if !ascii {
        return Err(parse_err(path, 2, "ASCII PLY only"));
    }
    let count = vertex_count.ok_or_else(|| parse_err(path, 1, "no vertex element"))?;
    let col = |n: &str| props.iter().position(|p| p == n);
    let (cx, cy, cz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(path, 1, "vertex element lacks x, y, z properties")),
    };
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty());
    for _ in 0..before_vertex {
        body.next();
    }
    let mut pts = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, line) = body
            .next()
            .ok_or_else(|| parse_err(path, 0, format!("expected {count} vertices, file ended early")))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != props.len() {
            return Err(parse_err(path, ln + 1, format!("expected {} values, found {}", props.len(), toks.len())));
        }
        pts.push(Vec3::new(
            parse_f64(path, ln + 1, toks[cx])?,
            parse_f64(path, ln + 1, toks[cy])?,
            parse_f64(path, ln + 1, toks[cz])?,
        ));
    }
    Ok(pts)
}

/// 0-based indices, one per line or comma-separated. Out-of-range or
/// repeated indices are rejected.
pub fn read_boundary(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = read(path)?;
    let mut loop_ = Vec::new();
    let mut seen = vec![false; n];
    for (ln, line) in text.lines().enumerate() {
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let i: usize = tok.parse().map_err(|_| parse_err(path, ln + 1, format!("'{tok}' is not a vertex index")))?;
            if i >= n {
                return Err(parse_err(path, ln + 1, format!("index {i} out of range (n = {n})")));
            }
            if seen[i] {
                return Err(parse_err(path, ln + 1, format!("index {i} repeated")));
            }
            seen[i] = true;
            loop_.push(i);
        }
    }
    if loop_.len() < 3 {
        return Err(parse_err(path, text.lines().count(), "boundary loop needs at least 3 indices"));
    }
    Ok(loop_)
}

/// Reads a point cloud and its boundary file and validates the pair.
pub fn load(points: &Path, format: Option<Format>, boundary: &Path) -> Result<PointCloud> {
    let format = match format {
        Some(f) => f,
        None => Format::from_path(points)?,
    };
    let pc = read_point_cloud(points, format)?;
    let b = read_boundary(boundary, pc.len())?;
    PointCloud::new(pc.points, b)
}

fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

fn g9(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn write_xyz(path: &Path, pc: &PointCloud) -> Result<()> {
    let mut s = String::with_capacity(pc.len() * 75);
    for p in &pc.points {
        let _ = writeln!(s, "{} {} {}", g17(p.x), g17(p.y), g17(p.z));
    }
    write(path, &s)
}

pub fn write_boundary(path: &Path, boundary: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(boundary.len() * 6);
    for b in boundary {
        let _ = writeln!(s, "{b}");
    }
    write(path, &s)
}

pub fn write_uv(path: &Path, f: &Parameterization) -> Result<()> {
    let mut s = String::with_capacity(f.uv.len() * 50);
    for p in &f.uv {
        let _ = writeln!(s, "{} {}", g17(p.x), g17(p.y));
    }
    write(path, &s)
}

pub fn read_uv(path: &Path) -> Result<Parameterization> {
    let text = read(path)?;
    let mut uv = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 2 {
            return Err(parse_err(path, ln + 1, format!("expected 2 coordinates, found {}", toks.len())));
        }
        uv.push(Vec2::new(parse_f64(path, ln + 1, toks[0])?, parse_f64(path, ln + 1, toks[1])?));
    }
    Ok(Parameterization { uv })
}

/// OBJ with `v`, optional `vt` and 1-based `f i/i j/j k/k` records,
/// 9 significant digits.
pub fn obj_string(mesh: &TriangleMesh, uv: Option<&Parameterization>) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 60 + mesh.faces.len() * 30);
    for p in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", g9(p.x), g9(p.y), g9(p.z));
    }
    if let Some(f) = uv {
        for p in &f.uv {
            let _ = writeln!(s, "vt {} {}", g9(p.x), g9(p.y));
        }
    }
    for t in &mesh.faces {
        let (a, b, c) = (t[0] + 1, t[1] + 1, t[2] + 1);
        if uv.is_some() {
            let _ = writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}");
        } else {
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    s
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh, uv: Option<&Parameterization>) -> Result<()> {
    write(path, &obj_string(mesh, uv))
}

/// Scalar rows under a `metric,value` header, then `bin_center,count` rows.
pub fn csv_string(report: &MetricReport) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in report.scalars() {
        let _ = writeln!(s, "{k},{v}");
    }
    if !report.histogram.is_empty() {
        s.push_str("bin_center,count\n");
        for (c, n) in &report.histogram {
            let _ = writeln!(s, "{},{n}", g17(*c));
        }
    }
    s
}

pub fn write_csv(path: &Path, report: &MetricReport) -> Result<()> {
    write(path, &csv_string(report))
}

/// `row col value` per line in storage order.
pub fn write_coo(path: &Path, op: &SparseOperator) -> Result<()> {
    let mut s = String::with_capacity(op.nnz() * 40);
    for &(r, c, v) in &op.entries {
        let _ = writeln!(s, "{r} {c} {}", g17(v));
    }
    write(path, &s)
}
