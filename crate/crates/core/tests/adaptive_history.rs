mod common;

use common::cube;
use spacetime_dpg::adapt::{adaptive_loop, AdaptiveOptions};
use spacetime_dpg::mesh::{ElementFamily, SpaceTimeMesh};
use spacetime_dpg::problem::adapt2d;
use spacetime_dpg::solve::Technique;
use spacetime_dpg::vtk::summarize;

fn hanging_vertices(mesh: &SpaceTimeMesh<f64>) -> usize {
    let mut count = 0;
    for f in mesh.facets() {
        let (a, b) = (mesh.vertex(f.vertices[0]), mesh.vertex(f.vertices[1]));
        for v in 0..mesh.num_vertices() {
            if f.vertices.contains(&v) {
                continue;
            }
            let x = mesh.vertex(v);
            let cross = (b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0]);
            let s = ((x[0] - a[0]) * (b[0] - a[0]) + (x[1] - a[1]) * (b[1] - a[1]))
                / ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2));
            if cross.abs() < 1e-12 && s > 1e-12 && s < 1.0 - 1e-12 {
                count += 1;
            }
        }
    }
    count
}

#[test]
fn refined_meshes_stay_conforming() {
    let problem = adapt2d();
    let opts = AdaptiveOptions::new(1, 0.5, 6);
    let history = adaptive_loop(&problem, cube(&problem.coarse_counts, ElementFamily::Simplex), &opts).unwrap();
    assert_eq!(history.records.len(), 7);
    for (k, mesh) in history.meshes.iter().enumerate() {
        assert!((mesh.total_volume() - 1.0).abs() < 1e-12);
        assert_eq!(hanging_vertices(mesh), 0, "step {k}");
        let boundary: f64 = mesh
            .facets()
            .iter()
            .filter(|f| f.is_boundary())
            .map(|f| {
                let (a, b) = (mesh.vertex(f.vertices[0]), mesh.vertex(f.vertices[1]));
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
            })
            .sum();
        assert!((boundary - 4.0).abs() < 1e-12);
    }
    for k in 0..6 {
        let marked = &history.marked[k];
        assert!(!marked.is_empty());
        let mut sorted = marked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), marked.len());
        assert!(sorted.last().unwrap() < &history.records[k].elements);
        assert!(history.records[k + 1].elements >= history.records[k].elements + marked.len());
    }
}

#[test]
fn rerun_is_deterministic() {
    let problem = adapt2d();
    let opts = AdaptiveOptions::new(2, 0.5, 4);
    let run = || adaptive_loop(&problem, cube(&problem.coarse_counts, ElementFamily::Simplex), &opts).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.marked, b.marked);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.eta, y.eta);
        assert_eq!(x.dofs, y.dofs);
    }
}

#[test]
fn techniques_agree_along_the_loop() {
    let problem = adapt2d();
    let mut cg = AdaptiveOptions::new(1, 0.5, 3);
    cg.tol = 1e-12;
    let mut reg = cg.clone();
    reg.technique = Technique::Regularized;
    let a = adaptive_loop(&problem, cube(&problem.coarse_counts, ElementFamily::Simplex), &cg).unwrap();
    let b = adaptive_loop(&problem, cube(&problem.coarse_counts, ElementFamily::Simplex), &reg).unwrap();
    assert_eq!(a.marked, b.marked);
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!((x.eta - y.eta).abs() <= 1e-6 * x.eta, "{} vs {}", x.eta, y.eta);
    }
}

#[test]
fn every_step_is_exported() {
    let problem = adapt2d();
    let dir = tempfile::tempdir().unwrap();
    let mut opts = AdaptiveOptions::new(1, 0.5, 3);
    opts.export_dir = Some(dir.path().join("frames"));
    let history = adaptive_loop(&problem, cube(&problem.coarse_counts, ElementFamily::Simplex), &opts).unwrap();
    assert_eq!(history.exports.len(), 4);
    for (path, record) in history.exports.iter().zip(&history.records) {
        let (cells, names) = summarize(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(cells, record.elements);
        assert!(names.iter().any(|n| n == "indicator"));
        assert!(names.iter().any(|n| n == "u_mu"));
    }
}
