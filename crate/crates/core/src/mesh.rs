//! Conforming spacetime meshes of simplices and axis-aligned boxes.
//!
//! Coordinates are ordered `(x_1, .., x_d, t)`; the last axis is always time.
//! A mesh of dimension `D = d + 1` stores its vertices padded to three
//! components so that 2D and 3D meshes share one representation.
//!
//! Simplex vertex order doubles as the bisection state: the first vertex of a
//! triangle is its newest vertex and the edge opposite to it is the
//! refinement edge.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub type Point<T> = [T; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementFamily {
    Simplex,
    Box,
}

impl std::str::FromStr for ElementFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simplex" | "triangle" | "tet" | "tetrahedron" => Ok(Self::Simplex),
            "box" | "quad" | "hex" | "hexahedron" => Ok(Self::Box),
            other => Err(format!("unknown element family `{other}`")),
        }
    }
}

/// Boundary part a facet belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BoundaryClass {
    /// Initial time slab `t = 0`.
    Gamma0,
    /// Final time slab `t = T`.
    GammaT,
    /// Lateral boundary `∂Ω_0 × (0, T)`.
    GammaB,
}

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("cell count along axis {axis} must be positive")]
    ZeroCount { axis: usize },
    #[error("extent along axis {axis} is degenerate")]
    DegenerateExtent { axis: usize },
    #[error("expected {expected} axes, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported spacetime dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),
    #[error("element {0} has non-positive volume")]
    DegenerateElement(usize),
    #[error("facet {0} is shared by more than two elements")]
    NonConforming(usize),
    #[error("facet index {0} out of range")]
    InvalidFacet(usize),
    #[error("element index {0} out of range")]
    InvalidElement(usize),
    #[error("bisection is only supported on triangle meshes")]
    BisectionUnsupported,
    #[error("mesh has no elements")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FacetSide {
    pub element: usize,
    pub local: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Facet {
    /// Sorted global vertex ids.
    pub vertices: Vec<usize>,
    pub left: FacetSide,
    pub right: Option<FacetSide>,
    pub class: Option<BoundaryClass>,
}

impl Facet {
    pub fn is_boundary(&self) -> bool {
        self.right.is_none()
    }
}

/// Geometry of a facet as seen from its adjacent elements.
#[derive(Debug, Clone)]
pub struct FacetGeometry<T> {
    pub normal_left: Vec<T>,
    pub normal_right: Option<Vec<T>>,
    pub measure: T,
}

/// Affine reference-to-physical map `x = origin + jacobian * xi`.
#[derive(Debug, Clone)]
pub struct AffineMap<T: Real> {
    pub origin: DVector<T>,
    pub jacobian: DMatrix<T>,
    pub det: T,
    pub inverse: DMatrix<T>,
}

impl<T: Real> AffineMap<T> {
    pub fn apply(&self, xi: &[T]) -> DVector<T> {
        &self.origin + &self.jacobian * DVector::from_column_slice(xi)
    }

    pub fn pull_back(&self, x: &[T]) -> DVector<T> {
        &self.inverse * (DVector::from_column_slice(x) - &self.origin)
    }
}

#[derive(Debug, Clone)]
pub struct SpaceTimeMesh<T> {
    dim: usize,
    family: ElementFamily,
    vertices: Vec<Point<T>>,
    cells: Vec<usize>,
    verts_per_cell: usize,
    facets: Vec<Facet>,
    cell_facets: Vec<usize>,
    regions: Vec<usize>,
    t_start: T,
    t_final: T,
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

impl<T: Real> SpaceTimeMesh<T> {
    /// Structured mesh of the box `extents[0] × .. × extents[D-1]`.
    ///
    /// Simplices come from the Kuhn split of each cell, so every cell is cut
    /// along its main diagonal and the resulting mesh is conforming.
    pub fn build_box_mesh(
        extents: &[(T, T)],
        counts: &[usize],
        family: ElementFamily,
    ) -> Result<Self, MeshError> {
        let dim = extents.len();
        if dim != 2 && dim != 3 {
            return Err(MeshError::UnsupportedDimension(dim));
        }
        if counts.len() != dim {
            return Err(MeshError::DimensionMismatch {
                expected: dim,
                got: counts.len(),
            });
        }
        for (axis, &(lo, hi)) in extents.iter().enumerate() {
            if counts[axis] == 0 {
                return Err(MeshError::ZeroCount { axis });
            }
            if !(hi > lo) {
                return Err(MeshError::DegenerateExtent { axis });
            }
        }

        let stride: Vec<usize> = (0..dim)
            .scan(1usize, |acc, a| {
                let s = *acc;
                *acc *= counts[a] + 1;
                Some(s)
            })
            .collect();
        let n_vertices: usize = counts.iter().map(|c| c + 1).product();
        let mut vertices = Vec::with_capacity(n_vertices);
        for lin in 0..n_vertices {
            let mut p = [T::zero(); 3];
            for a in 0..dim {
                let i = (lin / stride[a]) % (counts[a] + 1);
                let (lo, hi) = extents[a];
                // exact endpoints keep boundary classification exact
                p[a] = if i == counts[a] {
                    hi
                } else {
                    lo + (hi - lo) * T::from_usize_lossy(i) / T::from_usize_lossy(counts[a])
                };
            }
            vertices.push(p);
        }

        let n_cells: usize = counts.iter().product();
        let corners = 1usize << dim;
        let mut cells = Vec::new();
        for c in 0..n_cells {
            let mut rem = c;
            let mut base = 0;
            for a in 0..dim {
                let i = rem % counts[a];
                rem /= counts[a];
                base += i * stride[a];
            }
            let corner = |bits: usize| -> usize {
                (0..dim)
                    .filter(|a| bits & (1 << a) != 0)
                    .map(|a| stride[a])
                    .sum::<usize>()
                    + base
            };
            match family {
                ElementFamily::Box => cells.extend((0..corners).map(corner)),
                ElementFamily::Simplex => {
                    if dim == 2 {
                        // newest vertex first: opposite the diagonal
                        cells.extend([corner(0b01), corner(0b00), corner(0b11)]);
                        cells.extend([corner(0b10), corner(0b11), corner(0b00)]);
                    } else {
                        for perm in permutations3() {
                            let mut bits = 0;
                            cells.push(corner(bits));
                            for &a in &perm {
                                bits |= 1 << a;
                                cells.push(corner(bits));
                            }
                        }
                    }
                }
            }
        }
        let vpc = match family {
            ElementFamily::Box => corners,
            ElementFamily::Simplex => dim + 1,
        };
        let n_elem = cells.len() / vpc;
        Self::from_cells(
            dim,
            family,
            vertices,
            cells,
            vec![0; n_elem],
            (extents[dim - 1].0, extents[dim - 1].1),
        )
    }

    /// Assemble a mesh from raw connectivity, building facets and classes.
    pub fn from_cells(
        dim: usize,
        family: ElementFamily,
        vertices: Vec<Point<T>>,
        cells: Vec<usize>,
        regions: Vec<usize>,
        time_range: (T, T),
    ) -> Result<Self, MeshError> {
        if dim != 2 && dim != 3 {
            return Err(MeshError::UnsupportedDimension(dim));
        }
        let verts_per_cell = match family {
            ElementFamily::Simplex => dim + 1,
            ElementFamily::Box => 1 << dim,
        };
        if cells.is_empty() {
            return Err(MeshError::Empty);
        }
        let mut mesh = Self {
            dim,
            family,
            vertices,
            cells,
            verts_per_cell,
            facets: Vec::new(),
            cell_facets: Vec::new(),
            regions,
            t_start: time_range.0,
            t_final: time_range.1,
        };
        for e in 0..mesh.num_elements() {
            if !(mesh.affine_map(e).det.abs() > T::zero()) {
                return Err(MeshError::DegenerateElement(e));
            }
        }
        mesh.build_facets()?;
        Ok(mesh)
    }

    fn build_facets(&mut self) -> Result<(), MeshError> {
        let nlf = self.num_local_facets();
        let mut lookup: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut facets: Vec<Facet> = Vec::new();
        let mut cell_facets = vec![usize::MAX; self.num_elements() * nlf];
        for e in 0..self.num_elements() {
            for lf in 0..nlf {
                let mut key = self.local_facet_vertices(e, lf);
                key.sort_unstable();
                let side = FacetSide {
                    element: e,
                    local: lf,
                };
                match lookup.get(&key) {
                    Some(&f) => {
                        if facets[f].right.is_some() {
                            return Err(MeshError::NonConforming(f));
                        }
                        facets[f].right = Some(side);
                        cell_facets[e * nlf + lf] = f;
                    }
                    None => {
                        let f = facets.len();
                        lookup.insert(key.clone(), f);
                        facets.push(Facet {
                            vertices: key,
                            left: side,
                            right: None,
                            class: None,
                        });
                        cell_facets[e * nlf + lf] = f;
                    }
                }
            }
        }
        let tol = T::lit(1e-12) * self.t_final.abs().max(T::lit(1e-300));
        let tdim = self.dim - 1;
        for f in facets.iter_mut().filter(|f| f.right.is_none()) {
            let on = |t: T| f.vertices.iter().all(|&v| (self.vertices[v][tdim] - t).abs() <= tol);
            f.class = Some(if on(self.t_start) {
                BoundaryClass::Gamma0
            } else if on(self.t_final) {
                BoundaryClass::GammaT
            } else {
                BoundaryClass::GammaB
            });
        }
        self.facets = facets;
        self.cell_facets = cell_facets;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spatial_dim(&self) -> usize {
        self.dim - 1
    }

    pub fn family(&self) -> ElementFamily {
        self.family
    }

    pub fn num_elements(&self) -> usize {
        self.cells.len() / self.verts_per_cell
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> &[T] {
        &self.vertices[v][..self.dim]
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn time_range(&self) -> (T, T) {
        (self.t_start, self.t_final)
    }

    pub fn element_vertices(&self, e: usize) -> &[usize] {
        &self.cells[e * self.verts_per_cell..(e + 1) * self.verts_per_cell]
    }

    pub fn element_facets(&self, e: usize) -> &[usize] {
        let n = self.num_local_facets();
        &self.cell_facets[e * n..(e + 1) * n]
    }

    pub fn region(&self, e: usize) -> usize {
        self.regions[e]
    }

    pub fn regions(&self) -> &[usize] {
        &self.regions
    }

    /// Assign region tags from element centroids.
    pub fn tag_regions(&mut self, tag: impl Fn(&[T]) -> usize) {
        self.regions = (0..self.num_elements())
            .map(|e| tag(self.centroid(e).as_slice()))
            .collect();
    }

    pub fn num_local_facets(&self) -> usize {
        match self.family {
            ElementFamily::Simplex => self.dim + 1,
            ElementFamily::Box => 2 * self.dim,
        }
    }

    /// Local facet `i` of a simplex is opposite vertex `i`; local facet
    /// `2a + s` of a box is the side `s` (0 low, 1 high) of axis `a`.
    pub fn local_facet_vertices(&self, e: usize, lf: usize) -> Vec<usize> {
        let verts = self.element_vertices(e);
        match self.family {
            ElementFamily::Simplex => verts
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != lf)
                .map(|(_, &v)| v)
                .collect(),
            ElementFamily::Box => {
                let (axis, side) = (lf / 2, lf % 2);
                verts
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| (i >> axis) & 1 == side)
                    .map(|(_, &v)| v)
                    .collect()
            }
        }
    }

    pub fn affine_map(&self, e: usize) -> AffineMap<T> {
        let d = self.dim;
        let verts = self.element_vertices(e);
        let origin = DVector::from_column_slice(self.vertex(verts[0]));
        let mut jacobian = DMatrix::zeros(d, d);
        for k in 0..d {
            let other = match self.family {
                ElementFamily::Simplex => verts[k + 1],
                ElementFamily::Box => verts[1 << k],
            };
            for s in 0..d {
                jacobian[(s, k)] = self.vertices[other][s] - origin[s];
            }
        }
        let det = jacobian.determinant();
        let inverse = jacobian
            .clone()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::zeros(d, d));
        AffineMap {
            origin,
            jacobian,
            det,
            inverse,
        }
    }

    pub fn reference_volume(&self) -> T {
        match self.family {
            ElementFamily::Simplex => T::one() / T::from_usize_lossy(factorial(self.dim)),
            ElementFamily::Box => T::one(),
        }
    }

    pub fn volume(&self, e: usize) -> T {
        self.affine_map(e).det.abs() * self.reference_volume()
    }

    pub fn total_volume(&self) -> T {
        (0..self.num_elements())
            .map(|e| self.volume(e))
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn centroid(&self, e: usize) -> DVector<T> {
        let verts = self.element_vertices(e);
        let mut c = DVector::zeros(self.dim);
        for &v in verts {
            for s in 0..self.dim {
                c[s] += self.vertices[v][s];
            }
        }
        c / T::from_usize_lossy(verts.len())
    }

    pub fn diameter(&self, e: usize) -> T {
        let verts = self.element_vertices(e);
        let mut best = T::zero();
        for (i, &a) in verts.iter().enumerate() {
            for &b in &verts[i + 1..] {
                best = best.max(self.distance(a, b));
            }
        }
        best
    }

    /// Largest element diameter.
    pub fn mesh_size(&self) -> T {
        (0..self.num_elements())
            .map(|e| self.diameter(e))
            .fold(T::zero(), |a, b| a.max(b))
    }

    fn distance(&self, a: usize, b: usize) -> T {
        (0..self.dim)
            .map(|s| (self.vertices[a][s] - self.vertices[b][s]).powi(2))
            .fold(T::zero(), |x, y| x + y)
            .sqrt()
    }

    /// Outward unit normal and measure of local facet `lf` of element `e`.
    pub fn local_facet_normal(&self, e: usize, lf: usize) -> (Vec<T>, T) {
        let d = self.dim;
        let fv = self.local_facet_vertices(e, lf);
        let p = |v: usize| -> Vec<T> { self.vertex(v).to_vec() };
        let sub = |a: &[T], b: &[T]| -> Vec<T> { a.iter().zip(b).map(|(x, y)| *x - *y).collect() };
        let v0 = p(fv[0]);
        let (mut n, measure) = if d == 2 {
            let e1 = sub(&p(fv[1]), &v0);
            let len = (e1[0] * e1[0] + e1[1] * e1[1]).sqrt();
            (vec![e1[1], -e1[0]], len)
        } else {
            let e1 = sub(&p(fv[1]), &v0);
            let e2 = sub(&p(fv[2]), &v0);
            let cr = vec![
                e1[1] * e2[2] - e1[2] * e2[1],
                e1[2] * e2[0] - e1[0] * e2[2],
                e1[0] * e2[1] - e1[1] * e2[0],
            ];
            let len = cr.iter().fold(T::zero(), |a, x| a + *x * *x).sqrt();
            let area = match self.family {
                ElementFamily::Simplex => len / T::lit(2.0),
                ElementFamily::Box => len,
            };
            (cr, area)
        };
        let norm = n.iter().fold(T::zero(), |a, x| a + *x * *x).sqrt();
        n.iter_mut().for_each(|x| *x /= norm);
        let c = self.centroid(e);
        let inward: T = (0..d).fold(T::zero(), |a, s| a + n[s] * (c[s] - v0[s]));
        if inward > T::zero() {
            n.iter_mut().for_each(|x| *x = -*x);
        }
        (n, measure)
    }

    pub fn facet_geometry(&self, f: usize) -> Result<FacetGeometry<T>, MeshError> {
        let facet = self.facets.get(f).ok_or(MeshError::InvalidFacet(f))?;
        let (normal_left, measure) = self.local_facet_normal(facet.left.element, facet.left.local);
        let normal_right = facet
            .right
            .map(|r| self.local_facet_normal(r.element, r.local).0);
        Ok(FacetGeometry {
            normal_left,
            normal_right,
            measure,
        })
    }

    /// Red refinement: every element is split into `2^D` children.
    pub fn uniform_refine(&self) -> Self {
        let mut builder = ChildBuilder::new(self);
        let mut cells = Vec::new();
        let mut regions = Vec::new();
        for e in 0..self.num_elements() {
            let v = self.element_vertices(e).to_vec();
            let before = cells.len();
            match (self.family, self.dim) {
                (ElementFamily::Box, d) => {
                    for offset in 0..(1usize << d) {
                        for local in 0..(1usize << d) {
                            let mut subset = Vec::new();
                            for (i, &gv) in v.iter().enumerate() {
                                let keep = (0..d).all(|a| {
                                    let level = ((offset >> a) & 1) + ((local >> a) & 1);
                                    let bit = (i >> a) & 1;
                                    match level {
                                        0 => bit == 0,
                                        2 => bit == 1,
                                        _ => true,
                                    }
                                });
                                if keep {
                                    subset.push(gv);
                                }
                            }
                            cells.push(builder.centre_of(&subset));
                        }
                    }
                }
                (ElementFamily::Simplex, 2) => {
                    let (a, b, c) = (v[0], v[1], v[2]);
                    let ab = builder.centre_of(&[a, b]);
                    let bc = builder.centre_of(&[b, c]);
                    let ac = builder.centre_of(&[a, c]);
                    cells.extend([a, ab, ac, ab, b, bc, ac, bc, c, bc, ac, ab]);
                }
                (ElementFamily::Simplex, _) => {
                    let x = [v[0], v[1], v[2], v[3]];
                    let mut m = [[0usize; 4]; 4];
                    for i in 0..4 {
                        for j in (i + 1)..4 {
                            m[i][j] = builder.centre_of(&[x[i], x[j]]);
                            m[j][i] = m[i][j];
                        }
                    }
                    let children = [
                        [x[0], m[0][1], m[0][2], m[0][3]],
                        [m[0][1], x[1], m[1][2], m[1][3]],
                        [m[0][2], m[1][2], x[2], m[2][3]],
                        [m[0][3], m[1][3], m[2][3], x[3]],
                        [m[0][1], m[0][2], m[0][3], m[1][3]],
                        [m[0][1], m[0][2], m[1][2], m[1][3]],
                        [m[0][2], m[0][3], m[1][3], m[2][3]],
                        [m[0][2], m[1][2], m[1][3], m[2][3]],
                    ];
                    for ch in children {
                        cells.extend(ch);
                    }
                }
            }
            let added = (cells.len() - before) / self.verts_per_cell;
            regions.extend(std::iter::repeat_n(self.regions[e], added));
        }
        Self::from_cells(
            self.dim,
            self.family,
            builder.vertices,
            cells,
            regions,
            (self.t_start, self.t_final),
        )
        .expect("red refinement of a valid mesh is valid")
    }

    /// Newest-vertex bisection of the marked triangles plus the closure
    /// needed to keep the mesh conforming.
    pub fn bisect_refine(&self, marked: &[usize]) -> Result<Self, MeshError> {
        if self.family != ElementFamily::Simplex || self.dim != 2 {
            return Err(MeshError::BisectionUnsupported);
        }
        if let Some(&bad) = marked.iter().find(|&&e| e >= self.num_elements()) {
            return Err(MeshError::InvalidElement(bad));
        }
        let edge = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
        let mut flagged: HashSet<(usize, usize)> = marked
            .iter()
            .map(|&e| {
                let v = self.element_vertices(e);
                edge(v[1], v[2])
            })
            .collect();
        loop {
            let mut changed = false;
            for e in 0..self.num_elements() {
                let v = self.element_vertices(e);
                let refinement = edge(v[1], v[2]);
                if flagged.contains(&refinement) {
                    continue;
                }
                if flagged.contains(&edge(v[0], v[1])) || flagged.contains(&edge(v[0], v[2])) {
                    flagged.insert(refinement);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let mut builder = ChildBuilder::new(self);
        let mut cells = Vec::new();
        let mut regions = Vec::new();
        for e in 0..self.num_elements() {
            let v = self.element_vertices(e);
            let before = cells.len();
            bisect_recursive([v[0], v[1], v[2]], &flagged, &mut builder, &mut cells);
            let added = (cells.len() - before) / 3;
            regions.extend(std::iter::repeat_n(self.regions[e], added));
        }
        Self::from_cells(
            2,
            ElementFamily::Simplex,
            builder.vertices,
            cells,
            regions,
            (self.t_start, self.t_final),
        )
    }
}

fn bisect_recursive<T: Real>(
    tri: [usize; 3],
    flagged: &HashSet<(usize, usize)>,
    builder: &mut ChildBuilder<T>,
    out: &mut Vec<usize>,
) {
    let [v0, v1, v2] = tri;
    let key = if v1 < v2 { (v1, v2) } else { (v2, v1) };
    if flagged.contains(&key) && !builder.is_new_edge(key) {
        let m = builder.centre_of(&[v1, v2]);
        bisect_recursive([m, v0, v1], flagged, builder, out);
        bisect_recursive([m, v2, v0], flagged, builder, out);
    } else {
        out.extend(tri);
    }
}

fn permutations3() -> [[usize; 3]; 6] {
    [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ]
}

/// Creates barycentre vertices of vertex subsets, shared between elements.
struct ChildBuilder<T> {
    vertices: Vec<Point<T>>,
    original: usize,
    cache: HashMap<Vec<usize>, usize>,
}

impl<T: Real> ChildBuilder<T> {
    fn new(mesh: &SpaceTimeMesh<T>) -> Self {
        Self {
            vertices: mesh.vertices.clone(),
            original: mesh.vertices.len(),
            cache: HashMap::new(),
        }
    }

    fn centre_of(&mut self, subset: &[usize]) -> usize {
        if subset.len() == 1 {
            return subset[0];
        }
        let mut key = subset.to_vec();
        key.sort_unstable();
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        let mut p = [T::zero(); 3];
        for &v in &key {
            for s in 0..3 {
                p[s] += self.vertices[v][s];
            }
        }
        let n = T::from_usize_lossy(key.len());
        p.iter_mut().for_each(|x| *x /= n);
        let id = self.vertices.len();
        self.vertices.push(p);
        self.cache.insert(key, id);
        id
    }

    /// Edges whose endpoints include a vertex created in this pass are
    /// halves of a flagged edge and are never bisected again.
    fn is_new_edge(&self, (a, b): (usize, usize)) -> bool {
        a >= self.original || b >= self.original
    }
}
