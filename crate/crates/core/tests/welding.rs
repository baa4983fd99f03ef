mod common;

use pcparam::meshing::{euler_characteristic, is_simple_loop, triangulate_uv};
use pcparam::metrics::pcbc;
use pcparam::model::{Config, PointCloud, Vec2};
use pcparam::neighborhood::{build_all, knn_all};
use pcparam::solver::parameterize;
use pcparam::synth::{self, DEFAULT_SEED};
use pcparam::welding::{self, Subdomain};

fn pieces(pc: &PointCloud, m: usize) -> Vec<(Subdomain, welding::FlatPiece)> {
    let cfg = Config::default();
    let knn = knn_all(pc, cfg.k).unwrap();
    let hoods = build_all(pc, &knn, &cfg).unwrap();
    let part = welding::partition_with(pc, m, &hoods).unwrap();
    part.domains
        .into_iter()
        .map(|d| {
            let p = welding::flatten_subdomain(pc, &d, &knn, &cfg).unwrap();
            (d, p)
        })
        .collect()
}

#[test]
fn hemisphere_halves_are_disks() {
    let pc = synth::hemisphere(1500, DEFAULT_SEED).unwrap();
    let parts = pieces(&pc, 2);
    assert_eq!(parts.len(), 2);
    let mut covered = vec![0usize; pc.len()];
    for (d, p) in &parts {
        for &g in &d.vertices {
            covered[g] += 1;
        }
        let poly: Vec<_> = p.cloud.boundary.iter().map(|&b| p.output.param.uv[b]).collect();
        assert!(is_simple_loop(&poly));
        let faces = triangulate_uv(&p.output.param, &p.cloud.boundary).unwrap();
        assert_eq!(euler_characteristic(&faces), 1);
    }
    assert!(covered.iter().all(|&c| c >= 1));
    let shared = covered.iter().filter(|&&c| c == 2).count();
    assert!(shared >= 2);
}

#[test]
fn single_strip_is_rejected() {
    let pc = synth::hemisphere(400, DEFAULT_SEED).unwrap();
    let err = welding::run(&pc, 1, &Config::default(), &[]).unwrap_err();
    assert!(err.to_string().contains("m ≥ 2 required"));
}

#[test]
fn hemisphere_welds_are_seamless_and_bounded() {
    let pc = synth::hemisphere(1500, DEFAULT_SEED).unwrap();
    for m in [2, 3] {
        let out = welding::run(&pc, m, &Config::default(), &[]).unwrap();
        assert!(out.stats.seam_gap <= 1e-9, "m {m} seam {:e}", out.stats.seam_gap);
        assert!(out.stats.layout_max < 1e3, "m {m} layout {}", out.stats.layout_max);
        assert!(out.param.is_finite());
        assert_eq!(out.partition.domains.len(), m);
    }
}

#[test]
fn rectangle_halves_recombine_to_a_similarity() {
    let pc = synth::grid(40, 30).unwrap();
    let out = welding::run(&pc, 2, &Config::default(), &[]).unwrap();
    assert!(out.stats.seam_gap <= 1e-9);
    let rms = common::similarity_rms(&common::xy(&pc.points), &out.param.uv);
    assert!(rms <= 1e-5, "rms {rms:e}");
}

#[test]
fn welded_hemisphere_stays_as_conformal_as_one_piece() {
    let pc = synth::hemisphere(1500, DEFAULT_SEED).unwrap();
    let cfg = Config::default();
    let single = parameterize(&pc, &cfg).unwrap();
    let mu1 = pcbc(&pc, &single.neighborhoods, &single.param).mean_abs();
    let out = welding::run(&pc, 2, &cfg, &[]).unwrap();
    let mu2 = pcbc(&pc, &single.neighborhoods, &out.param).mean_abs();
    assert!(mu2 <= 1.5 * mu1, "welded {mu2:e} single {mu1:e}");
}

#[test]
fn subdomain_order_does_not_matter() {
    let pc = synth::hemisphere(800, DEFAULT_SEED).unwrap();
    let forward = pieces(&pc, 3);
    let cfg = Config::default();
    let knn = knn_all(&pc, cfg.k).unwrap();
    for (d, p) in forward.iter().rev() {
        let again = welding::flatten_subdomain(&pc, d, &knn, &cfg).unwrap();
        assert_eq!(again.global, p.global);
        for (a, b) in again.output.param.uv.iter().zip(&p.output.param.uv) {
            assert!((a - b).norm() <= 1e-12);
        }
    }
    let run_in = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| welding::run(&pc, 3, &cfg, &[]).unwrap())
    };
    let (a, b) = (run_in(1), run_in(4));
    for (p, q) in a.param.uv.iter().zip(&b.param.uv) {
        assert!((p - q).norm() <= 1e-12);
    }
}

#[test]
fn per_domain_overrides_apply() {
    let pc = synth::hemisphere(800, DEFAULT_SEED).unwrap();
    let cfg = Config::default();
    let over = Config { k: 20, ..cfg };
    let out = welding::run(&pc, 2, &cfg, &[None, Some(over)]).unwrap();
    assert!(out.stats.seam_gap <= 1e-9);
    let bad = Config { k: 0, ..cfg };
    assert!(welding::run(&pc, 2, &cfg, &[Some(bad)]).is_err());
}

#[test]
fn flat_half_disk_interior_is_recovered_from_its_boundary() {
    let pc = synth::disk(1200, DEFAULT_SEED).unwrap();
    for (d, p) in pieces(&pc, 2) {
        let exact = common::xy(&p.cloud.points);
        let fixed: Vec<(usize, Vec2)> = p.cloud.boundary.iter().map(|&b| (b, exact[b])).collect();
        let f = welding::solve_with_boundary(&p.output.laplacian, &fixed).unwrap();
        let worst = f.uv.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "domain of {} vertices: {worst:e}", d.vertices.len());
        let point = Vec2::new(0.25, -2.0);
        let pinned: Vec<(usize, Vec2)> = p.cloud.boundary.iter().map(|&b| (b, point)).collect();
        let g = welding::solve_with_boundary(&p.output.laplacian, &pinned).unwrap();
        assert!(g.uv.iter().all(|q| (q - point).norm() <= 1e-9));
    }
}
