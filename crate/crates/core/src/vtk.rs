//! Legacy ASCII VTK unstructured-grid output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::mesh::{ElementFamily, SpaceTimeMesh};
use crate::scalar::Real;
use crate::spaces::quadrature::quadrature_rule;
use crate::spaces::{SpaceError, SpaceLayout};

#[derive(Debug, Error)]
pub enum VtkError {
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cell array `{name}` has {got} values for {expected} cells")]
    Length { name: String, expected: usize, got: usize },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

fn cell_type(family: ElementFamily, dim: usize) -> u8 {
    match (family, dim) {
        (ElementFamily::Simplex, 2) => 5,
        (ElementFamily::Simplex, _) => 10,
        (ElementFamily::Box, 2) => 9,
        (ElementFamily::Box, _) => 12,
    }
}

/// Local vertex order expected by VTK for quads and hexahedra.
fn box_order(dim: usize) -> &'static [usize] {
    if dim == 2 {
        &[0, 1, 3, 2]
    } else {
        &[0, 1, 3, 2, 4, 5, 7, 6]
    }
}

/// Render a mesh with named per-cell scalar arrays.
pub fn render<T: Real>(mesh: &SpaceTimeMesh<T>, arrays: &[(String, Vec<T>)]) -> Result<String, VtkError> {
    let ne = mesh.num_elements();
    for (name, vals) in arrays {
        if vals.len() != ne {
            return Err(VtkError::Length {
                name: name.clone(),
                expected: ne,
                got: vals.len(),
            });
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "spacetime DPG solution");
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {} double", mesh.num_vertices());
    for v in mesh.vertices() {
        let _ = writeln!(out, "{} {} {}", v[0], v[1], v[2]);
    }
    let nv = mesh.element_vertices(0).len();
    let _ = writeln!(out, "CELLS {} {}", ne, ne * (nv + 1));
    for e in 0..ne {
        let verts = mesh.element_vertices(e);
        let _ = write!(out, "{nv}");
        match mesh.family() {
            ElementFamily::Simplex => verts.iter().for_each(|v| {
                let _ = write!(out, " {v}");
            }),
            ElementFamily::Box => box_order(mesh.dim()).iter().for_each(|&i| {
                let _ = write!(out, " {}", verts[i]);
            }),
        }
        out.push('\n');
    }
    let _ = writeln!(out, "CELL_TYPES {ne}");
    let ct = cell_type(mesh.family(), mesh.dim());
    for _ in 0..ne {
        let _ = writeln!(out, "{ct}");
    }
    if !arrays.is_empty() {
        let _ = writeln!(out, "CELL_DATA {ne}");
        for (name, vals) in arrays {
            let _ = writeln!(out, "SCALARS {name} double 1");
            let _ = writeln!(out, "LOOKUP_TABLE default");
            for v in vals {
                let _ = writeln!(out, "{}", v.as_f64());
            }
        }
    }
    Ok(out)
}

/// Cell averages of every component of a trial field.
pub fn cell_averages<T: Real>(
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
    u: &[T],
) -> Result<Vec<Vec<T>>, VtkError> {
    let d = layout.dim();
    let rule = quadrature_rule::<T>(layout.family(), d, 2 * layout.p())?;
    let total = rule.weights.iter().fold(T::zero(), |a, w| a + *w);
    let mut out = vec![Vec::with_capacity(mesh.num_elements()); d];
    for e in 0..mesh.num_elements() {
        let vals = layout.eval_trial_field(e, u, &rule.points);
        for (c, col) in out.iter_mut().enumerate() {
            let avg = (0..rule.len()).fold(T::zero(), |a, q| a + rule.weights[q] * vals[(c, q)]);
            col.push(avg / total);
        }
    }
    Ok(out)
}

/// Standard field arrays: `u_q` (or `u_q1`, `u_q2`), `u_mu` and,
/// when given, `indicator`.
pub fn field_arrays<T: Real>(
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
    u: &[T],
    indicators: Option<&[T]>,
) -> Result<Vec<(String, Vec<T>)>, VtkError> {
    let d = layout.dim();
    let avgs = cell_averages(mesh, layout, u)?;
    let mut arrays = Vec::new();
    for (c, col) in avgs.into_iter().enumerate() {
        let name = if c == d - 1 {
            "u_mu".to_string()
        } else if d == 2 {
            "u_q".to_string()
        } else {
            format!("u_q{}", c + 1)
        };
        arrays.push((name, col));
    }
    if let Some(ind) = indicators {
        arrays.push(("indicator".to_string(), ind.to_vec()));
    }
    Ok(arrays)
}

/// Write a solution to `path`.
pub fn export_fields<T: Real>(
    path: &Path,
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
    u: &[T],
    indicators: Option<&[T]>,
) -> Result<(), VtkError> {
    let arrays = field_arrays(mesh, layout, u, indicators)?;
    let text = render(mesh, &arrays)?;
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| VtkError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| VtkError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Cell count and cell-data array names of a legacy VTK file.
pub fn summarize(text: &str) -> Option<(usize, Vec<String>)> {
    let mut cells = None;
    let mut names = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("CELLS") => cells = it.next().and_then(|n| n.parse().ok()),
            Some("SCALARS") => names.extend(it.next().map(str::to_string)),
            _ => {}
        }
    }
    cells.map(|c| (c, names))
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = SpaceTimeMesh<f64>;

    #[test]
    fn single_element_export() {
        let mesh = M::build_box_mesh(&[(0.0, 1.0); 2], &[1, 1], ElementFamily::Box).unwrap();
        let layout = SpaceLayout::with_default_enrichment(&mesh, 1).unwrap();
        let u = vec![1.0; layout.num_trial_dofs(&mesh)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.vtk");
        export_fields(&path, &mesh, &layout, &u, Some(&[0.5])).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let (cells, names) = summarize(&text).unwrap();
        assert_eq!(cells, 1);
        assert_eq!(names, vec!["u_q", "u_mu", "indicator"]);
        assert!(text.contains("CELL_TYPES 1\n9\n"));
    }

    #[test]
    fn round_trip_cell_count_and_hex_order() {
        let mesh = M::build_box_mesh(&[(0.0, 1.0); 3], &[2, 1, 3], ElementFamily::Simplex).unwrap();
        let text = render(&mesh, &[]).unwrap();
        assert_eq!(summarize(&text).unwrap().0, mesh.num_elements());
        let hex = M::build_box_mesh(&[(0.0, 1.0); 3], &[1, 1, 1], ElementFamily::Box).unwrap();
        let text = render(&hex, &[]).unwrap();
        let cell_line = text.lines().skip_while(|l| !l.starts_with("CELLS")).nth(1).unwrap();
        let ids: Vec<usize> = cell_line.split_whitespace().skip(1).map(|s| s.parse().unwrap()).collect();
        let pts: Vec<[f64; 3]> = ids.iter().map(|&i| hex.vertices()[i]).collect();
        // VTK hexahedron: bottom face counter-clockwise, then top face
        assert_eq!(pts[0], [0.0, 0.0, 0.0]);
        assert_eq!(pts[2], [1.0, 1.0, 0.0]);
        assert_eq!(pts[3], [0.0, 1.0, 0.0]);
        assert_eq!(pts[6], [1.0, 1.0, 1.0]);
        assert!(render(&hex, &[("bad".into(), vec![1.0, 2.0])]).is_err());
    }
}
