//! Degree-of-freedom layouts for the broken trial space `U_h`, the
//! continuous skeleton space `V_h^1` and the enriched broken test space.
//!
//! Numbering conventions:
//! * trial dof `e * n_u + c * n_trial + i` (component-major per element);
//! * test dof (element-local) `c * n_test + a`;
//! * skeleton dof `node * D + c`, where `node` runs over the Lagrange nodes
//!   of degree `p + 1` that lie on some element boundary.
//!
//! Components are ordered `(q_1, .., q_d, mu)`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::basis::{ReferenceBasis, Tabulation};
use super::SpaceError;
use crate::mesh::{BoundaryClass, ElementFamily, SpaceTimeMesh};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct SpaceLayout<T: Real> {
    p: usize,
    m: usize,
    dim: usize,
    family: ElementFamily,
    trial: ReferenceBasis<T>,
    skeleton: ReferenceBasis<T>,
    test: ReferenceBasis<T>,
    /// Local skeleton basis indices that are not bubbles.
    boundary_local: Vec<usize>,
    /// `element * n_local_nodes + local` -> global Lagrange node.
    node_of: Vec<usize>,
    node_points: Vec<Vec<T>>,
    node_is_bubble: Vec<bool>,
    /// Global Lagrange node -> skeleton node.
    skeleton_node: Vec<Option<usize>>,
    skeleton_points: Vec<Vec<T>>,
    n_skeleton_nodes: usize,
    essential: Vec<bool>,
    /// Boundary classes touching each skeleton node.
    node_classes: Vec<[bool; 3]>,
}

/// Which of the three discrete spaces a basis query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    Trial,
    Skeleton,
    Test,
}

/// Shape function values and physical spacetime gradients.
#[derive(Debug, Clone)]
pub struct BasisJet<T: Real> {
    pub values: DMatrix<T>,
    pub grads: Vec<DMatrix<T>>,
}

impl<T: Real> SpaceLayout<T> {
    /// Build all dof maps on `mesh` for trial degree `p` and test degree `m`.
    pub fn build(mesh: &SpaceTimeMesh<T>, p: usize, m: usize) -> Result<Self, SpaceError> {
        if m < p {
            return Err(SpaceError::TestDegreeTooLow { p, m });
        }
        let dim = mesh.dim();
        let family = mesh.family();
        let trial = ReferenceBasis::legendre(family, dim, p);
        let skeleton = ReferenceBasis::lagrange(family, dim, p + 1);
        let test = ReferenceBasis::legendre(family, dim, m);
        let nl = skeleton.len();
        let boundary_local: Vec<usize> = (0..nl).filter(|&i| !skeleton.is_interior_node(i)).collect();

        let mut lookup: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
        let mut node_of = Vec::with_capacity(mesh.num_elements() * nl);
        let mut node_points: Vec<Vec<T>> = Vec::new();
        let mut node_is_bubble = Vec::new();
        for e in 0..mesh.num_elements() {
            let verts = mesh.element_vertices(e);
            let map = mesh.affine_map(e);
            for i in 0..nl {
                let interior = skeleton.is_interior_node(i);
                let id = if interior {
                    None
                } else {
                    let mut key: Vec<(usize, usize)> = skeleton
                        .node_vertex_weights(i)
                        .into_iter()
                        .map(|(lv, w)| (verts[lv], w))
                        .collect();
                    key.sort_unstable();
                    Some(key)
                };
                let existing = id.as_ref().and_then(|k| lookup.get(k).copied());
                let g = match existing {
                    Some(g) => g,
                    None => {
                        let g = node_points.len();
                        let x = map.apply(&skeleton.node_point(i));
                        node_points.push(x.iter().copied().collect());
                        node_is_bubble.push(interior);
                        if let Some(k) = id {
                            lookup.insert(k, g);
                        }
                        g
                    }
                };
                node_of.push(g);
            }
        }

        let mut skeleton_node = vec![None; node_points.len()];
        let mut skeleton_points = Vec::new();
        for (g, &bubble) in node_is_bubble.iter().enumerate() {
            if !bubble {
                skeleton_node[g] = Some(skeleton_points.len());
                skeleton_points.push(node_points[g].clone());
            }
        }
        let n_skeleton_nodes = skeleton_points.len();

        let mut node_classes = vec![[false; 3]; n_skeleton_nodes];
        for facet in mesh.facets() {
            let Some(class) = facet.class else { continue };
            let (e, lf) = (facet.left.element, facet.left.local);
            for i in 0..nl {
                if skeleton.node_on_facet(i, lf) {
                    let s = skeleton_node[node_of[e * nl + i]].expect("facet nodes are not bubbles");
                    node_classes[s][class as usize] = true;
                }
            }
        }
        let mut essential = vec![false; n_skeleton_nodes * dim];
        for (s, classes) in node_classes.iter().enumerate() {
            if classes[BoundaryClass::Gamma0 as usize] {
                for c in 0..dim {
                    essential[s * dim + c] = true;
                }
            }
            if classes[BoundaryClass::GammaB as usize] {
                essential[s * dim + dim - 1] = true;
            }
        }

        Ok(Self {
            p,
            m,
            dim,
            family,
            trial,
            skeleton,
            test,
            boundary_local,
            node_of,
            node_points,
            node_is_bubble,
            skeleton_node,
            skeleton_points,
            n_skeleton_nodes,
            essential,
            node_classes,
        })
    }

    /// Layout with the default test degree `m = p + d + 1`.
    pub fn with_default_enrichment(mesh: &SpaceTimeMesh<T>, p: usize) -> Result<Self, SpaceError> {
        Self::build(mesh, p, p + mesh.dim())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> ElementFamily {
        self.family
    }

    pub fn trial_basis(&self) -> &ReferenceBasis<T> {
        &self.trial
    }

    pub fn skeleton_basis(&self) -> &ReferenceBasis<T> {
        &self.skeleton
    }

    pub fn test_basis(&self) -> &ReferenceBasis<T> {
        &self.test
    }

    pub fn basis(&self, kind: SpaceKind) -> &ReferenceBasis<T> {
        match kind {
            SpaceKind::Trial => &self.trial,
            SpaceKind::Skeleton => &self.skeleton,
            SpaceKind::Test => &self.test,
        }
    }

    /// Trial dofs per element, `D * dim P_p` (or `Q_p`).
    pub fn trial_dofs_per_element(&self) -> usize {
        self.dim * self.trial.len()
    }

    pub fn test_dofs_per_element(&self) -> usize {
        self.dim * self.test.len()
    }

    /// Non-bubble skeleton functions per element (scalar).
    pub fn boundary_local(&self) -> &[usize] {
        &self.boundary_local
    }

    pub fn skeleton_dofs_per_element(&self) -> usize {
        self.dim * self.boundary_local.len()
    }

    pub fn num_trial_dofs(&self, mesh: &SpaceTimeMesh<T>) -> usize {
        mesh.num_elements() * self.trial_dofs_per_element()
    }

    pub fn num_skeleton_nodes(&self) -> usize {
        self.n_skeleton_nodes
    }

    pub fn num_skeleton_dofs(&self) -> usize {
        self.n_skeleton_nodes * self.dim
    }

    pub fn num_lagrange_nodes(&self) -> usize {
        self.node_points.len()
    }

    pub fn lagrange_node(&self, e: usize, local: usize) -> usize {
        self.node_of[e * self.skeleton.len() + local]
    }

    pub fn lagrange_point(&self, g: usize) -> &[T] {
        &self.node_points[g]
    }

    pub fn is_bubble(&self, g: usize) -> bool {
        self.node_is_bubble[g]
    }

    pub fn skeleton_node_of(&self, g: usize) -> Option<usize> {
        self.skeleton_node[g]
    }

    pub fn skeleton_point(&self, s: usize) -> &[T] {
        &self.skeleton_points[s]
    }

    /// Boundary classes (`Gamma0`, `GammaT`, `GammaB`) touching skeleton node `s`.
    pub fn skeleton_node_classes(&self, s: usize) -> [bool; 3] {
        self.node_classes[s]
    }

    pub fn essential_mask(&self) -> &[bool] {
        &self.essential
    }

    /// Global skeleton dofs of element `e` in local column order
    /// (`c * n_boundary_local + j`).
    pub fn element_skeleton_dofs(&self, e: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.skeleton_dofs_per_element());
        for c in 0..self.dim {
            for &i in &self.boundary_local {
                let s = self.skeleton_node[self.lagrange_node(e, i)].expect("boundary node");
                out.push(s * self.dim + c);
            }
        }
        out
    }

    /// Shape functions of `kind` on element `e` at reference points, with
    /// gradients mapped to physical spacetime.
    pub fn eval_basis_jet(
        &self,
        mesh: &SpaceTimeMesh<T>,
        kind: SpaceKind,
        e: usize,
        points: &DMatrix<T>,
    ) -> BasisJet<T> {
        let Tabulation { values, grads } = self.basis(kind).tabulate(points);
        let inv = mesh.affine_map(e).inverse;
        let d = self.dim;
        let phys = (0..d)
            .map(|s| {
                let mut g = DMatrix::zeros(values.nrows(), values.ncols());
                for k in 0..d {
                    g += &grads[k] * inv[(k, s)];
                }
                g
            })
            .collect();
        BasisJet { values, grads: phys }
    }

    /// Nodal interpolant of `field` in the full Lagrange space `V_h`
    /// (bubbles included); entry `g * D + c` is component `c` at node `g`.
    pub fn nodal_interpolant(&self, field: impl Fn(&[T]) -> Vec<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.node_points.len() * self.dim];
        for (g, x) in self.node_points.iter().enumerate() {
            let v = field(x);
            out[g * self.dim..(g + 1) * self.dim].copy_from_slice(&v[..self.dim]);
        }
        out
    }

    /// Restrict a full `V_h` coefficient vector to the skeleton dofs.
    pub fn restrict_to_skeleton(&self, full: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.num_skeleton_dofs()];
        for (g, s) in self.skeleton_node.iter().enumerate() {
            if let Some(s) = s {
                for c in 0..self.dim {
                    out[s * self.dim + c] = full[g * self.dim + c];
                }
            }
        }
        out
    }

    /// Extend skeleton coefficients to all Lagrange nodes with zero bubbles.
    pub fn extend_skeleton(&self, skeleton: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.node_points.len() * self.dim];
        for (g, s) in self.skeleton_node.iter().enumerate() {
            if let Some(s) = s {
                for c in 0..self.dim {
                    out[g * self.dim + c] = skeleton[s * self.dim + c];
                }
            }
        }
        out
    }

    /// Value (`D × np`) and physical gradients (`grads[s]`, `D × np`) of a
    /// full `V_h` field on element `e`.
    pub fn eval_lagrange_field(
        &self,
        mesh: &SpaceTimeMesh<T>,
        e: usize,
        coeffs: &[T],
        points: &DMatrix<T>,
    ) -> (DMatrix<T>, Vec<DMatrix<T>>) {
        let jet = self.eval_basis_jet(mesh, SpaceKind::Skeleton, e, points);
        let d = self.dim;
        let nl = self.skeleton.len();
        let coef = DMatrix::from_fn(d, nl, |c, i| coeffs[self.lagrange_node(e, i) * d + c]);
        let values = &coef * &jet.values;
        let grads = jet.grads.iter().map(|g| &coef * g).collect();
        (values, grads)
    }

    /// Value (`D × np`) of a trial-space field on element `e`.
    pub fn eval_trial_field(&self, e: usize, coeffs: &[T], points: &DMatrix<T>) -> DMatrix<T> {
        let tab = self.trial.tabulate(points);
        let n = self.trial.len();
        let base = e * self.trial_dofs_per_element();
        let coef = DMatrix::from_fn(self.dim, n, |c, i| coeffs[base + c * n + i]);
        coef * tab.values
    }

    pub fn trial_element_coefficients(&self, e: usize, coeffs: &[T]) -> DVector<T> {
        let n = self.trial_dofs_per_element();
        DVector::from_column_slice(&coeffs[e * n..(e + 1) * n])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::quadrature::quadrature_rule;

    type M = SpaceTimeMesh<f64>;

    #[test]
    fn single_triangle_counts() {
        let mesh = M::from_cells(
            2,
            ElementFamily::Simplex,
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![0, 1, 2],
            vec![0],
            (0.0, 1.0),
        )
        .unwrap();
        let l = SpaceLayout::build(&mesh, 1, 3).unwrap();
        assert_eq!(l.trial_dofs_per_element(), 6);
        assert_eq!(l.test_dofs_per_element(), 20);
        assert_eq!(l.num_skeleton_nodes(), 6);
        assert_eq!(l.num_skeleton_dofs(), 12);
    }

    #[test]
    fn single_box_essential_mask() {
        let mesh = M::build_box_mesh(&[(0.0, 1.0), (0.0, 1.0)], &[1, 1], ElementFamily::Box).unwrap();
        let l = SpaceLayout::build(&mesh, 0, 2).unwrap();
        assert_eq!(l.trial_dofs_per_element(), 2);
        assert_eq!(l.num_skeleton_nodes(), 4);
        let free: Vec<usize> = (0..8).filter(|&i| !l.essential_mask()[i]).collect();
        // top-left and top-right corners lie on Gamma_b: only q is free there
        assert_eq!(free.len(), 2);
        for i in free {
            assert_eq!(i % 2, 0);
            assert!((l.skeleton_point(i / 2)[1] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mask_interior_ends_free() {
        let mesh = M::build_box_mesh(&[(0.0, 1.0), (0.0, 1.0)], &[2, 2], ElementFamily::Simplex).unwrap();
        let l = SpaceLayout::build(&mesh, 1, 3).unwrap();
        for s in 0..l.num_skeleton_nodes() {
            let x = l.skeleton_point(s);
            let m = &l.essential_mask()[2 * s..2 * s + 2];
            if x[1] == 0.0 {
                assert!(m[0] && m[1]);
            } else if x[0] == 0.0 || x[0] == 1.0 {
                assert!(!m[0] && m[1]);
            } else {
                assert!(!m[0] && !m[1]);
            }
        }
    }

    #[test]
    fn continuity_of_shared_nodes() {
        // P3 on Kuhn triangles and Q3 on boxes: shared facet nodes are the same
        for fam in [ElementFamily::Simplex, ElementFamily::Box] {
            for d in [2usize, 3] {
                let mesh = M::build_box_mesh(&vec![(0.0, 1.0); d], &vec![2; d], fam).unwrap();
                let l = SpaceLayout::build(&mesh, 2, 2).unwrap();
                // every Lagrange node position is unique
                let mut seen = std::collections::HashSet::new();
                for g in 0..l.num_lagrange_nodes() {
                    let key: Vec<i64> = l.lagrange_point(g).iter().map(|x| (x * 1e9).round() as i64).collect();
                    assert!(seen.insert(key), "duplicate node");
                }
                // degree-3 lattice on a 2^d grid has 7^d points for both families
                assert_eq!(l.num_lagrange_nodes(), 7usize.pow(d as u32));
            }
        }
    }

    #[test]
    fn interpolant_reproduces_linear_fields() {
        let mesh = M::build_box_mesh(&[(0.0, 1.0), (0.0, 1.0)], &[3, 2], ElementFamily::Simplex).unwrap();
        let l = SpaceLayout::build(&mesh, 0, 2).unwrap();
        let f = |x: &[f64]| vec![1.0 + 2.0 * x[0] - x[1], 3.0 * x[1] - 0.5];
        let coef = l.nodal_interpolant(f);
        let rule = quadrature_rule::<f64>(ElementFamily::Simplex, 2, 4).unwrap();
        for e in 0..mesh.num_elements() {
            let (vals, _) = l.eval_lagrange_field(&mesh, e, &coef, &rule.points);
            let map = mesh.affine_map(e);
            for q in 0..rule.len() {
                let x = map.apply(&rule.point(q));
                let ex = f(x.as_slice());
                assert!((vals[(0, q)] - ex[0]).abs() < 1e-12);
                assert!((vals[(1, q)] - ex[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_low_test_degree() {
        let mesh = M::build_box_mesh(&[(0.0, 1.0), (0.0, 1.0)], &[1, 1], ElementFamily::Box).unwrap();
        assert!(SpaceLayout::build(&mesh, 2, 1).is_err());
    }
}
