//! Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pcparam::delaunay::{triangulate, DelaunayOptions};
use pcparam::io;
use pcparam::laplacian::mesh_cotangent;
use pcparam::meshing::{lift, triangulate_uv, uv_mesh};
use pcparam::metrics::{delaunay_ratio, edge_faces, pcbc};
use pcparam::model::{Config, Parameterization, PointCloud, TriangleMesh, Vec2};
use pcparam::neighborhood::knn_all;
use pcparam::solver::{build_laplacian, conformal_energy, free_boundary_residual, parameterize};
use pcparam::synth::{self, DEFAULT_SEED};
use pcparam::welding::{self, Ext, Mobius};

const FLAT_RMS: f64 = 1e-6;
const FLAT_MU: f64 = 1e-6;
const FLAT_SECONDS: f64 = 10.0;
const LAPLACIAN_ABS: f64 = 1e-9;
const LAPLACIAN_RESIDUAL: f64 = 1e-8;
const ANGLE_MARGIN: f64 = 0.05;
const ENERGY_SLACK: f64 = 1e-6;
const FREE_RESIDUAL: f64 = 1e-8;
const AFFINE_MU: f64 = 1e-10;
const HEMISPHERE_R3: f64 = 0.98;
const MOBIUS_REL: f64 = 1e-12;
const SEAM_REL: f64 = 1e-9;
const LAYOUT_MAX: f64 = 1e3;
const WELD_MU_RATIO: f64 = 1.5;
const WELD_SECONDS: f64 = 30.0;
const NOISE_REL_SIGMA: f64 = 0.01;
/// Bumpy L, n = 2000, k = 25, (15, 120), sigma = 1% of the diagonal.
/// Clean mean |mu| 3.06e-3; noisy 8.56e-2 with the default seed and
/// 7.9e-2 to 1.01e-1 over four further seeds.
const NOISE_MU_THRESHOLD: f64 = 0.15;
const THREAD_COUNTS: std::ops::RangeInclusive<usize> = 1..=8;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pcparam")
}

fn pcparam(threads: usize, args: &[&str]) -> Result<Duration, String> {
    let t = Instant::now();
    let out = Command::new(bin())
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("pcparam {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(t.elapsed())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn xy(pc: &PointCloud) -> Vec<Vec2> {
    pc.points.iter().map(|p| Vec2::new(p.x, p.y)).collect()
}

fn cx(v: Vec2) -> C {
    C::new(v.x, v.y)
}

/// RMS residual of the best similarity z -> a z + b from src onto dst.
fn similarity_rms(src: &[Vec2], dst: &[Vec2]) -> f64 {
    let n = src.len() as f64;
    let z: Vec<C> = src.iter().map(|&v| cx(v)).collect();
    let w: Vec<C> = dst.iter().map(|&v| cx(v)).collect();
    let zm = z.iter().sum::<C>() / n;
    let wm = w.iter().sum::<C>() / n;
    let num: C = z.iter().zip(&w).map(|(a, b)| (a - zm).conj() * (b - wm)).sum();
    let den: f64 = z.iter().map(|a| (a - zm).norm_sqr()).sum();
    let a = num / den;
    let b = wm - a * zm;
    (z.iter().zip(&w).map(|(p, q)| (a * p + b - q).norm_sqr()).sum::<f64>() / n).sqrt()
}

fn diameter(pts: &[Vec2]) -> f64 {
    let mut d = 0.0f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            d = d.max((a - b).norm());
        }
    }
    d
}

fn report_value(path: &Path, key: &str) -> Result<f64, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(',')))
        .ok_or_else(|| format!("{key} missing from report"))?
        .parse()
        .map_err(|e| format!("{key}: {e}"))
}

fn c1_flat_recovery(dir: &Path) -> Outcome {
    let (xyz, bnd, uv, rep) = (dir.join("disk.xyz"), dir.join("disk.bnd"), dir.join("disk.uv"), dir.join("disk.csv"));
    pcparam(0, &["synth", "disk", "--n", "2000", p(&xyz)])?;
    let t = pcparam(1, &["param", p(&xyz), p(&bnd), p(&uv), "--report", p(&rep)])?.as_secs_f64();
    let pc = io::load(&xyz, None, &bnd).map_err(|e| e.to_string())?;
    let f = io::read_uv(&uv).map_err(|e| e.to_string())?;
    let src = xy(&pc);
    let diam = diameter(&src);
    let rms = similarity_rms(&f.uv, &src);
    let mu = report_value(&rep, "mean_abs_mu")?;
    check(
        rms <= FLAT_RMS * diam && mu <= FLAT_MU && t <= FLAT_SECONDS,
        format!("rms {rms:.3e} (limit {:.1e}), mean|mu| {mu:.3e}, param {t:.2} s on 1 thread", FLAT_RMS * diam),
    )
}

fn c2_laplacian_oracle() -> Outcome {
    let n = 40;
    let pc = synth::grid(n, n).map_err(|e| e.to_string())?;
    let knn = knn_all(&pc, 25).map_err(|e| e.to_string())?;
    let (_, l, _) = build_laplacian(&pc, &knn, &Config::default()).map_err(|e| e.to_string())?;
    let pts = xy(&pc);
    let keys: Vec<u64> = (0..pts.len() as u64).collect();
    let mesh = TriangleMesh {
        vertices: pc.points.clone(),
        faces: triangulate(&pts, &keys, DelaunayOptions::default()).map_err(|e| e.to_string())?,
        boundary: pc.boundary.clone(),
    };
    let lm = mesh_cotangent(&mesh).map_err(|e| e.to_string())?;
    let edges = edge_faces(&mesh.faces);
    let mean_edge = edges.keys().map(|&(a, b)| (pts[a] - pts[b]).norm()).sum::<f64>() / edges.len() as f64;
    let lx = l.mul_vec(&pts.iter().map(|v| v.x).collect::<Vec<_>>());
    let ly = l.mul_vec(&pts.iter().map(|v| v.y).collect::<Vec<_>>());
    let (mut entry, mut resid, mut rows) = (0.0f64, 0.0f64, 0);
    // Interior rows whose kNN ring cannot reach the grid border.
    for r in 2..n - 2 {
        for c in 2..n - 2 {
            let i = r * n + c;
            for (j, v) in l.row(i) {
                entry = entry.max((v - lm.get(i, j)).abs());
            }
            for (j, v) in lm.row(i) {
                entry = entry.max((v - l.get(i, j)).abs());
            }
            resid = resid.max(lx[i].abs()).max(ly[i].abs());
            rows += 1;
        }
    }
    check(
        entry <= LAPLACIAN_ABS && resid <= LAPLACIAN_RESIDUAL * mean_edge,
        format!("{rows} rows, max entry diff {entry:.2e}, max residual {resid:.2e}, mean edge {mean_edge:.4}"),
    )
}

fn c3_angle_criterion() -> Outcome {
    let pc = synth::bumpy(2000, DEFAULT_SEED).map_err(|e| e.to_string())?;
    let mean = |c1, c2| -> Result<f64, String> {
        let out = parameterize(&pc, &Config::default().with_angles(c1, c2)).map_err(|e| e.to_string())?;
        Ok(pcbc(&pc, &out.neighborhoods, &out.param).mean_abs())
    };
    let (with, without) = (mean(15.0, 120.0)?, mean(0.0, 180.0)?);
    let reduction = 1.0 - with / without;
    check(
        with < without * (1.0 - ANGLE_MARGIN),
        format!(
            "mean|mu| {with:.4e} with (15,120) vs {without:.4e} with (0,180): reduction {:.1}%",
            100.0 * reduction
        ),
    )
}

fn c4_energy_consistency() -> Outcome {
    let mut clouds = vec![("grid", synth::grid(30, 20).map_err(|e| e.to_string())?)];
    for (name, shape) in [
        ("disk", synth::Shape::Disk),
        ("hemisphere", synth::Shape::Hemisphere),
        ("bumpy", synth::Shape::Bumpy),
        ("lshape", synth::Shape::LShape),
        ("fig2-concave", synth::Shape::Fig2Concave),
    ] {
        clouds.push((name, synth::generate(shape, 1500, DEFAULT_SEED).map_err(|e| e.to_string())?));
    }
    let (mut worst_ec, mut worst_res) = (f64::INFINITY, 0.0f64);
    for (name, pc) in &clouds {
        let out = parameterize(pc, &Config::default()).map_err(|e| format!("{name}: {e}"))?;
        let e = conformal_energy(&out.laplacian, &out.area, &out.param);
        let res = free_boundary_residual(&out.laplacian, &out.area, out.pins, &out.param);
        if (e.conformal - (e.dirichlet - e.area)).abs() > 1e-12 * e.dirichlet {
            return Err(format!("{name}: E_C differs from E_D - A"));
        }
        if e.conformal < -ENERGY_SLACK * e.dirichlet || res > FREE_RESIDUAL {
            return Err(format!("{name}: E_C {:.3e}, E_D {:.3e}, residual {res:.3e}", e.conformal, e.dirichlet));
        }
        worst_ec = worst_ec.min(e.conformal / e.dirichlet);
        worst_res = worst_res.max(res);
    }
    Ok(format!("{} fixtures, min E_C/E_D {worst_ec:.3e}, max residual {worst_res:.3e}", clouds.len()))
}

fn c5_affine_beltrami() -> Outcome {
    let pc = synth::grid(20, 15).map_err(|e| e.to_string())?;
    let out = parameterize(&pc, &Config::default()).map_err(|e| e.to_string())?;
    let f = Parameterization {
        uv: pc.points.iter().map(|p| Vec2::new(2.0 * p.x, p.y)).collect(),
    };
    let mu = pcbc(&pc, &out.neighborhoods, &f);
    let worst = mu.mu.iter().map(|m| (m - C::new(1.0 / 3.0, 0.0)).norm()).fold(0.0, f64::max);
    check(
        mu.empty == 0 && mu.mu.len() == pc.len() && worst <= AFFINE_MU,
        format!("{} vertices, max |mu - 1/3| {worst:.2e}", mu.mu.len()),
    )
}

fn c6_meshing() -> Outcome {
    let mut parts = Vec::new();
    for (name, pc) in [
        ("hemisphere", synth::hemisphere(1500, DEFAULT_SEED).map_err(|e| e.to_string())?),
        ("bumpy", synth::bumpy(1500, DEFAULT_SEED).map_err(|e| e.to_string())?),
    ] {
        let out = parameterize(&pc, &Config::default()).map_err(|e| e.to_string())?;
        let faces = triangulate_uv(&out.param, &pc.boundary).map_err(|e| e.to_string())?;
        let (mesh, _) = lift(&faces, &pc).map_err(|e| e.to_string())?;
        let r3 = delaunay_ratio(&mesh).map_err(|e| e.to_string())?;
        let ruv = delaunay_ratio(&uv_mesh(&out.param, &faces, &pc.boundary)).map_err(|e| e.to_string())?;
        if ruv != 1.0 || (name == "hemisphere" && r3 < HEMISPHERE_R3) {
            return Err(format!("{name}: r(uv) {ruv}, r(3D) {r3}"));
        }
        parts.push(format!("{name} r(uv) {ruv} r(3D) {r3:.4}"));
    }
    Ok(parts.join(", "))
}

fn close(a: Ext, b: Ext) -> bool {
    match (a, b) {
        (Ext::Finite(a), Ext::Finite(b)) => (a - b).norm() <= MOBIUS_REL * b.norm().max(1.0),
        (Ext::Infinity, Ext::Infinity) => true,
        _ => false,
    }
}

fn c7_mobius() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let mut r = || -> Ext { C::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)).into() };
    let mut worst_fail = None;
    for t in 0..1000 {
        let src = [r(), r(), r()];
        let dst = [r(), r(), r()];
        let m = welding::mobius_three_point(src, dst).map_err(|e| e.to_string())?;
        if !src.iter().zip(&dst).all(|(s, d)| close(m.apply(*s), *d)) {
            worst_fail.get_or_insert(t);
        }
        let g = welding::mobius_three_point(dst, [r(), r(), r()]).map_err(|e| e.to_string())?;
        let gm = g.compose(&m);
        let z = r();
        if !close(gm.apply(z), g.apply(m.apply(z))) {
            worst_fail.get_or_insert(t);
        }
    }
    let inf = welding::mobius_three_point(
        [C::new(0.0, 0.0).into(), C::new(1.0, 0.0).into(), Ext::Infinity],
        [C::new(1.0, 0.0).into(), Ext::Infinity, C::new(0.0, 1.0).into()],
    )
    .map_err(|e| e.to_string())?;
    let special = close(inf.apply(C::new(1.0, 0.0).into()), Ext::Infinity)
        && close(inf.apply(Ext::Infinity), C::new(0.0, 1.0).into())
        && close(Mobius::identity().apply(Ext::Infinity), Ext::Infinity);
    match worst_fail {
        None if special => Ok("1000 random triples and compositions within 1e-12".into()),
        None => Err("points at infinity not interpolated".into()),
        Some(t) => Err(format!("trial {t} out of tolerance")),
    }
}

fn c8_welding() -> Outcome {
    let pc = synth::hemisphere(1500, DEFAULT_SEED).map_err(|e| e.to_string())?;
    let cfg = Config::default();
    let start = Instant::now();
    let single = parameterize(&pc, &cfg).map_err(|e| e.to_string())?;
    let mu1 = pcbc(&pc, &single.neighborhoods, &single.param).mean_abs();
    let diam = pc.bbox_diagonal();
    let mut parts = vec![format!("single {mu1:.3e}")];
    for m in [2, 3] {
        let out = welding::run(&pc, m, &cfg, &[]).map_err(|e| format!("m = {m}: {e}"))?;
        let mu = pcbc(&pc, &single.neighborhoods, &out.param).mean_abs();
        let s = &out.stats;
        let ok = s.seam_gap <= SEAM_REL * diam && s.layout_max < LAYOUT_MAX && out.param.is_finite() && mu <= WELD_MU_RATIO * mu1;
        let line = format!(
            "m={m}: mean|mu| {mu:.3e} ({:.3}x), seam {:.1e}, layout {:.3}",
            mu / mu1,
            s.seam_gap,
            s.layout_max
        );
        if !ok {
            return Err(line);
        }
        parts.push(line);
    }
    let t = start.elapsed().as_secs_f64();
    parts.push(format!("{t:.2} s"));
    check(t <= WELD_SECONDS, parts.join(", "))
}

fn c9_noise() -> Outcome {
    let pc = synth::bumpy(2000, DEFAULT_SEED).map_err(|e| e.to_string())?;
    let sigma = NOISE_REL_SIGMA * pc.bbox_diagonal();
    let noisy = synth::add_noise(&pc, sigma, DEFAULT_SEED).map_err(|e| e.to_string())?;
    let out = parameterize(&noisy, &Config::default()).map_err(|e| e.to_string())?;
    let mu = pcbc(&noisy, &out.neighborhoods, &out.param).mean_abs();
    check(
        mu.is_finite() && mu < NOISE_MU_THRESHOLD,
        format!("sigma {sigma:.3e}, mean|mu| {mu:.4e} (threshold {NOISE_MU_THRESHOLD})"),
    )
}

fn run_all(dir: &Path, threads: usize) -> Result<Vec<(String, Vec<u8>)>, String> {
    let f = |s: &str| dir.join(s);
    let steps: [Vec<String>; 6] = [
        vec!["synth".into(), "hemisphere".into(), "--n".into(), "800".into(), p(&f("h.xyz")).into()],
        vec!["synth".into(), "bumpy".into(), "--n".into(), "800".into(), p(&f("b.xyz")).into()],
        vec![
            "noise".into(),
            p(&f("b.xyz")).into(),
            p(&f("bn.xyz")).into(),
            "--sigma".into(),
            "0.005".into(),
            "--relative".into(),
        ],
        vec![
            "param".into(),
            p(&f("bn.xyz")).into(),
            p(&f("b.bnd")).into(),
            p(&f("b.uv")).into(),
            "--report".into(),
            p(&f("p.csv")).into(),
        ],
        vec![
            "mesh".into(),
            p(&f("h.xyz")).into(),
            p(&f("h.bnd")).into(),
            p(&f("h.obj")).into(),
            "--report".into(),
            p(&f("m.csv")).into(),
        ],
        vec![
            "weld".into(),
            p(&f("h.xyz")).into(),
            p(&f("h.bnd")).into(),
            p(&f("w.uv")).into(),
            "--m".into(),
            "3".into(),
            "--report".into(),
            p(&f("w.csv")).into(),
        ],
    ];
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        pcparam(threads, &args)?;
    }
    let names = ["h.xyz", "h.bnd", "b.xyz", "b.bnd", "bn.xyz", "b.uv", "p.csv", "h.obj", "m.csv", "w.uv", "w.csv"];
    names
        .iter()
        .map(|n| std::fs::read(f(n)).map(|b| (n.to_string(), b)).map_err(|e| e.to_string()))
        .collect()
}

fn c10_determinism(dir: &Path) -> Outcome {
    let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
    for t in THREAD_COUNTS {
        let sub = dir.join(format!("t{t}"));
        std::fs::create_dir_all(&sub).map_err(|e| e.to_string())?;
        let files = run_all(&sub, t)?;
        match &reference {
            None => reference = Some(files),
            Some(r) => {
                for ((name, a), (_, b)) in r.iter().zip(&files) {
                    if a != b {
                        return Err(format!("{name} differs between 1 and {t} threads"));
                    }
                }
            }
        }
    }
    let r = reference.unwrap_or_default();
    Ok(format!(
        "{} files byte-identical for threads {}..={}",
        r.len(),
        THREAD_COUNTS.start(),
        THREAD_COUNTS.end()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir: PathBuf = tmp.path().to_path_buf();
    let criteria: Vec<Criterion> = vec![
        ("flat recovery", Box::new(|| c1_flat_recovery(&dir))),
        ("laplacian oracle", Box::new(c2_laplacian_oracle)),
        ("angle criterion benefit", Box::new(c3_angle_criterion)),
        ("conformal energy consistency", Box::new(c4_energy_consistency)),
        ("affine beltrami exactness", Box::new(c5_affine_beltrami)),
        ("meshing quality", Box::new(c6_meshing)),
        ("mobius exactness", Box::new(c7_mobius)),
        ("welding consistency", Box::new(c8_welding)),
        ("noise robustness", Box::new(c9_noise)),
        ("determinism", Box::new(|| c10_determinism(&dir))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = match panic::catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into())),
        };
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
