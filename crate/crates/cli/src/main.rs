use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use pcparam::io::{self, Format};
use pcparam::meshing::{lift, triangulate_uv, uv_mesh};
use pcparam::metrics::{chi_energy_of, delaunay_ratio, pcbc, summarize, MetricReport};
use pcparam::model::{Config, Parameterization, PointCloud};
use pcparam::neighborhood::{build_all, knn_all};
use pcparam::solver::{conformal_energy, parameterize};
use pcparam::synth::{self, Shape, DEFAULT_SEED};
use pcparam::{welding, Error, Result};

const SCAN_C1: (f64, f64, f64) = (0.0, 20.0, 2.5);
const SCAN_C2: (f64, f64, f64) = (100.0, 180.0, 10.0);

/// Free-boundary conformal parameterization of disk-type point clouds.
#[derive(Parser, Debug)]
#[command(name = "pcparam", version)]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "PCPARAM_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parameterize a point cloud and write one `u v` line per point.
    Param {
        #[command(flatten)]
        input: Input,
        out_uv: PathBuf,
        #[command(flatten)]
        params: Params,
        /// Metric report (CSV).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Sweep (c1, c2) over [0,20]x[100,180] and keep the pair with the lowest mean |mu|.
        #[arg(long)]
        scan_angles: bool,
    },
    /// Parameterize, triangulate in the parameter domain and export an OBJ.
    Mesh {
        #[command(flatten)]
        input: Input,
        out_obj: PathBuf,
        #[command(flatten)]
        params: Params,
        /// Reuse a parameterization written by `param` instead of computing one.
        #[arg(long)]
        uv: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Divide-and-conquer parameterization by partial welding.
    Weld {
        #[command(flatten)]
        input: Input,
        out_uv: PathBuf,
        #[command(flatten)]
        params: Params,
        /// Number of subdomains (at least 2).
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Per-subdomain override `index:k,c1,c2`; repeatable.
        #[arg(long = "domain-config", value_name = "I:K,C1,C2")]
        domain_config: Vec<String>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate a seeded synthetic fixture (XYZ) and its boundary loop.
    Synth {
        /// disk | hemisphere | bumpy | lshape | fig2-concave
        shape: String,
        out: PathBuf,
        /// Point count; exact for disk and hemisphere, approximate for the polygon patches.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Boundary file; defaults to the output path with extension `bnd`.
        #[arg(long)]
        boundary: Option<PathBuf>,
    },
    /// Add seeded Gaussian noise to every coordinate.
    Noise {
        input: PathBuf,
        out: PathBuf,
        #[arg(long)]
        sigma: f64,
        /// Interpret sigma as a fraction of the bounding-box diagonal.
        #[arg(long)]
        relative: bool,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        format: Option<String>,
    },
}

#[derive(Args, Debug)]
struct Input {
    /// Point cloud (xyz, ply or obj).
    input: PathBuf,
    /// Boundary loop, one 0-based index per line.
    boundary: PathBuf,
    /// Override the format inferred from the extension.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args, Debug, Clone, Copy)]
struct Params {
    #[arg(long, default_value_t = 25)]
    k: usize,
    #[arg(long, default_value_t = 15.0)]
    c1: f64,
    #[arg(long, default_value_t = 120.0)]
    c2: f64,
}

impl Params {
    fn config(self) -> Result<Config> {
        let cfg = Config::default().with_k(self.k).with_angles(self.c1, self.c2);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn format_arg(f: &Option<String>) -> Result<Option<Format>> {
    f.as_deref().map(str::parse).transpose()
}

impl Input {
    fn load(&self) -> Result<PointCloud> {
        io::load(&self.input, format_arg(&self.format)?, &self.boundary)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn report_text(report: &MetricReport, extra: &[(&str, String)]) -> String {
    let mut s = io::csv_string(report);
    if !extra.is_empty() {
        s.push_str("extra,value\n");
        for (k, v) in extra {
            let _ = writeln!(s, "{k},{v}");
        }
    }
    s
}

fn steps((lo, hi, step): (f64, f64, f64)) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

/// Lowest mean |mu| over the angle grid; ties keep the earlier pair.
fn scan_angles(pc: &PointCloud, base: Config) -> Result<(Config, f64)> {
    let mut best: Option<(Config, f64)> = None;
    for c1 in steps(SCAN_C1) {
        for c2 in steps(SCAN_C2) {
            let cfg = base.with_angles(c1, c2);
            let mean = match parameterize(pc, &cfg) {
                Ok(out) => pcbc(pc, &out.neighborhoods, &out.param).mean_abs(),
                Err(e) => {
                    warn!("c1 = {c1}, c2 = {c2}: {e}");
                    continue;
                }
            };
            info!("c1 = {c1}, c2 = {c2}: mean |mu| = {mean:e}");
            if mean.is_finite() && best.is_none_or(|(_, b)| mean < b) {
                best = Some((cfg, mean));
            }
        }
    }
    best.ok_or_else(|| Error::Singular("no angle pair produced a parameterization".into()))
}

fn fmt17(x: f64) -> String {
    format!("{x:.17e}")
}

fn cmd_param(input: &Input, out_uv: &Path, params: Params, report: Option<&Path>, scan: bool) -> Result<()> {
    let pc = input.load()?;
    let mut cfg = params.config()?;
    let mut extra = Vec::new();
    if scan {
        let (best, mean) = scan_angles(&pc, cfg)?;
        println!("best c1 = {}, c2 = {}, mean |mu| = {mean:e}", best.c1, best.c2);
        extra.push(("best_c1", best.c1.to_string()));
        extra.push(("best_c2", best.c2.to_string()));
        cfg = best;
    }
    let out = parameterize(&pc, &cfg)?;
    io::write_uv(out_uv, &out.param)?;
    let mu = pcbc(&pc, &out.neighborhoods, &out.param);
    println!("{} points, mean |mu| = {:e}", pc.len(), mu.mean_abs());
    if let Some(path) = report {
        let e = conformal_energy(&out.laplacian, &out.area, &out.param);
        let chi = chi_energy_of(&pc, &out.neighborhoods, &out.param);
        let r = summarize(&mu, Some(e), Some(chi), None);
        extra.push(("skipped_triangles", out.skipped.to_string()));
        write_text(path, &report_text(&r, &extra))?;
    }
    Ok(())
}

fn cmd_mesh(input: &Input, out_obj: &Path, params: Params, uv: Option<&Path>, report: Option<&Path>) -> Result<()> {
    let pc = input.load()?;
    let cfg = params.config()?;
    let f: Parameterization = match uv {
        Some(path) => {
            let f = io::read_uv(path)?;
            if f.uv.len() != pc.len() {
                return Err(Error::Data(format!("{}: {} coordinates for {} points", path.display(), f.uv.len(), pc.len())));
            }
            f
        }
        None => parameterize(&pc, &cfg)?.param,
    };
    let faces = triangulate_uv(&f, &pc.boundary)?;
    let (mesh, degenerate) = lift(&faces, &pc)?;
    io::write_obj(out_obj, &mesh, Some(&f))?;
    let r3 = delaunay_ratio(&mesh)?;
    let ruv = delaunay_ratio(&uv_mesh(&f, &faces, &pc.boundary))?;
    println!("{} faces, delaunay ratio {r3} (3D) {ruv} (uv)", faces.len());
    if let Some(path) = report {
        let r = MetricReport {
            delaunay_ratio: Some(r3),
            ..MetricReport::default()
        };
        let extra = [
            ("delaunay_ratio_uv", fmt17(ruv)),
            ("faces", faces.len().to_string()),
            ("degenerate_faces", degenerate.to_string()),
        ];
        write_text(path, &report_text(&r, &extra))?;
    }
    Ok(())
}

fn parse_override(s: &str, m: usize) -> Result<(usize, Params)> {
    let bad = || Error::Config(format!("domain config '{s}': expected index:k,c1,c2"));
    let (i, rest) = s.split_once(':').ok_or_else(bad)?;
    let i: usize = i.trim().parse().map_err(|_| bad())?;
    if i >= m {
        return Err(Error::Config(format!("domain config '{s}': index {i} out of range for m = {m}")));
    }
    let v: Vec<&str> = rest.split(',').map(str::trim).collect();
    if v.len() != 3 {
        return Err(bad());
    }
    Ok((
        i,
        Params {
            k: v[0].parse().map_err(|_| bad())?,
            c1: v[1].parse().map_err(|_| bad())?,
            c2: v[2].parse().map_err(|_| bad())?,
        },
    ))
}

fn cmd_weld(input: &Input, out_uv: &Path, params: Params, m: usize, overrides: &[String], report: Option<&Path>) -> Result<()> {
    let pc = input.load()?;
    let cfg = params.config()?;
    let mut per = vec![None; m];
    for s in overrides {
        let (i, p) = parse_override(s, m)?;
        per[i] = Some(p.config()?);
    }
    let out = welding::run(&pc, m, &cfg, &per)?;
    io::write_uv(out_uv, &out.param)?;
    let knn = knn_all(&pc, cfg.k)?;
    let hoods = build_all(&pc, &knn, &cfg)?;
    let mu = pcbc(&pc, &hoods, &out.param);
    println!(
        "{m} subdomains, mean |mu| = {:e}, seam gap {:e}, layout max {:e}",
        mu.mean_abs(),
        out.stats.seam_gap,
        out.stats.layout_max
    );
    if let Some(path) = report {
        let r = summarize(&mu, None, None, None);
        let extra = [
            ("subdomains", m.to_string()),
            ("seam_gap", fmt17(out.stats.seam_gap)),
            ("layout_max", fmt17(out.stats.layout_max)),
            ("fallbacks", out.stats.fallbacks.to_string()),
        ];
        write_text(path, &report_text(&r, &extra))?;
    }
    Ok(())
}

fn require_xyz(path: &Path) -> Result<()> {
    match Format::from_path(path)? {
        Format::Xyz => Ok(()),
        _ => Err(Error::Config(format!("{}: only xyz output is supported", path.display()))),
    }
}

fn cmd_synth(shape: &str, out: &Path, n: usize, seed: u64, boundary: Option<&Path>) -> Result<()> {
    let shape: Shape = shape.parse()?;
    require_xyz(out)?;
    let pc = synth::generate(shape, n, seed)?;
    let bpath = boundary.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("bnd"));
    io::write_xyz(out, &pc)?;
    io::write_boundary(&bpath, &pc.boundary)?;
    println!("{} points, {} boundary vertices -> {}", pc.len(), pc.boundary.len(), bpath.display());
    Ok(())
}

fn cmd_noise(input: &Path, out: &Path, sigma: f64, relative: bool, seed: u64, format: &Option<String>) -> Result<()> {
    require_xyz(out)?;
    let format = match format_arg(format)? {
        Some(f) => f,
        None => Format::from_path(input)?,
    };
    let pc = io::read_point_cloud(input, format)?;
    let s = if relative { sigma * pc.bbox_diagonal() } else { sigma };
    let noisy = synth::add_noise(&pc, s, seed)?;
    io::write_xyz(out, &noisy)?;
    println!("sigma = {s:e}");
    Ok(())
}

fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Param {
            input,
            out_uv,
            params,
            report,
            scan_angles,
        } => cmd_param(input, out_uv, *params, report.as_deref(), *scan_angles),
        Command::Mesh {
            input,
            out_obj,
            params,
            uv,
            report,
        } => cmd_mesh(input, out_obj, *params, uv.as_deref(), report.as_deref()),
        Command::Weld {
            input,
            out_uv,
            params,
            m,
            domain_config,
            report,
        } => cmd_weld(input, out_uv, *params, *m, domain_config, report.as_deref()),
        Command::Synth { shape, out, n, seed, boundary } => cmd_synth(shape, out, *n, *seed, boundary.as_deref()),
        Command::Noise {
            input,
            out,
            sigma,
            relative,
            seed,
            format,
        } => cmd_noise(input, out, *sigma, *relative, *seed, format),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
