//! Element blocks of the DPG system and the global Schur-complement
//! operator.
//!
//! Per element `K` with test functions `w`, trial fields `u` and skeleton
//! functions `z`:
//! * `gram = (w, v)_K + (A w, A v)_K`
//! * `b0 = -(u, A w)_K`
//! * `b1 = (A z, w)_K + (z, A w)_K`
//! * `load = ((g, f), w)_K`
//!
//! All elements are affine, so the blocks are linear combinations of
//! reference moment matrices.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::{ElementFamily, SpaceTimeMesh};
use crate::problem::{FieldJet, WaveProblem};
use crate::scalar::Real;
use crate::spaces::quadrature::{quadrature_rule, QuadratureRule, MAX_EXACTNESS};
use crate::spaces::{SpaceError, SpaceKind, SpaceLayout};

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error("element {0} has a degenerate Jacobian")]
    DegenerateElement(usize),
    #[error("Gram matrix of element {0} is not positive definite")]
    NotPositiveDefinite(usize),
    #[error("layout and mesh disagree: {0}")]
    LayoutMismatch(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// The four element blocks.
#[derive(Debug, Clone)]
pub struct LocalBlocks<T: Real> {
    pub gram: DMatrix<T>,
    pub b0: DMatrix<T>,
    pub b1: DMatrix<T>,
    pub load: DVector<T>,
}

/// Reference-element moment matrices shared by all elements.
#[derive(Debug, Clone)]
struct ReferenceMoments<T: Real> {
    /// `∫ ψ_a ψ_b`
    mass_yy: DMatrix<T>,
    /// `[k * D + l]`: `∫ ∂_k ψ_a ∂_l ψ_b`
    stiff_yy: Vec<DMatrix<T>>,
    /// `[k]`: `∫ ∂_k ψ_a φ_i`
    g: Vec<DMatrix<T>>,
    /// `[k]`: `∫ ψ_a ∂_k χ_j`
    h: Vec<DMatrix<T>>,
    /// `[k]`: `∫ ∂_k ψ_a χ_j`
    e: Vec<DMatrix<T>>,
    /// `∫ χ_i χ_j`
    mass_vv: DMatrix<T>,
}

fn weighted<T: Real>(m: &DMatrix<T>, w: &[T]) -> DMatrix<T> {
    let mut out = m.clone();
    for (q, &wq) in w.iter().enumerate() {
        out.column_mut(q).scale_mut(wq);
    }
    out
}

impl<T: Real> ReferenceMoments<T> {
    fn new(layout: &SpaceLayout<T>) -> Result<Self, SpaceError> {
        let d = layout.dim();
        let rule = quadrature_rule::<T>(layout.family(), d, 2 * layout.m() + 2)?;
        let psi = layout.test_basis().tabulate(&rule.points);
        let phi = layout.trial_basis().tabulate(&rule.points);
        let chi_full = layout.skeleton_basis().tabulate(&rule.points);
        let bl = layout.boundary_local();
        let pick = |m: &DMatrix<T>| DMatrix::from_fn(bl.len(), m.ncols(), |j, q| m[(bl[j], q)]);
        let chi = pick(&chi_full.values);
        let dchi: Vec<DMatrix<T>> = chi_full.grads.iter().map(pick).collect();

        let w = &rule.weights;
        let psi_w = weighted(&psi.values, w);
        let dpsi_w: Vec<DMatrix<T>> = psi.grads.iter().map(|g| weighted(g, w)).collect();

        let mass_yy = &psi_w * psi.values.transpose();
        let mut stiff_yy = Vec::with_capacity(d * d);
        for k in 0..d {
            for l in 0..d {
                stiff_yy.push(&dpsi_w[k] * psi.grads[l].transpose());
            }
        }
        let g = (0..d).map(|k| &dpsi_w[k] * phi.values.transpose()).collect();
        let h = (0..d).map(|k| &psi_w * dchi[k].transpose()).collect();
        let e = (0..d).map(|k| &dpsi_w[k] * chi.transpose()).collect();
        let mass_vv = weighted(&chi, w) * chi.transpose();
        Ok(Self {
            mass_yy,
            stiff_yy,
            g,
            h,
            e,
            mass_vv,
        })
    }
}

/// Precomputed data for assembling element blocks of one problem on one
/// layout.
pub struct Assembler<'a, T: Real> {
    problem: &'a WaveProblem<T>,
    mesh: &'a SpaceTimeMesh<T>,
    layout: &'a SpaceLayout<T>,
    moments: ReferenceMoments<T>,
    load_rule: QuadratureRule<T>,
    load_psi: DMatrix<T>,
}

impl<'a, T: Real> Assembler<'a, T> {
    pub fn new(
        problem: &'a WaveProblem<T>,
        mesh: &'a SpaceTimeMesh<T>,
        layout: &'a SpaceLayout<T>,
    ) -> Result<Self, AssemblyError> {
        if mesh.dim() != layout.dim() || mesh.dim() != problem.dim() || mesh.family() != layout.family() {
            return Err(AssemblyError::LayoutMismatch(format!(
                "mesh dim {}, layout dim {}, problem dim {}",
                mesh.dim(),
                layout.dim(),
                problem.dim()
            )));
        }
        let moments = ReferenceMoments::new(layout)?;
        let load_rule = quadrature_rule::<T>(layout.family(), layout.dim(), (2 * layout.m() + 4).min(MAX_EXACTNESS))?;
        let load_psi = layout.test_basis().tabulate(&load_rule.points).values;
        Ok(Self {
            problem,
            mesh,
            layout,
            moments,
            load_rule,
            load_psi,
        })
    }

    pub fn problem(&self) -> &WaveProblem<T> {
        self.problem
    }

    pub fn mesh(&self) -> &SpaceTimeMesh<T> {
        self.mesh
    }

    pub fn layout(&self) -> &SpaceLayout<T> {
        self.layout
    }

    /// Material region of element `e`, decided at its centroid.
    pub fn region(&self, e: usize) -> usize {
        match &self.problem.region_of {
            Some(r) => r(self.mesh.centroid(e).as_slice()),
            None => 0,
        }
    }

    /// Skeleton mass matrix `(χ_i, χ_j)_K` of one scalar component.
    pub fn skeleton_mass(&self, e: usize) -> DMatrix<T> {
        &self.moments.mass_vv * self.mesh.affine_map(e).det.abs()
    }

    pub fn local(&self, e: usize) -> Result<LocalBlocks<T>, AssemblyError> {
        let d = self.layout.dim();
        let map = self.mesh.affine_map(e);
        let adet = map.det.abs();
        if adet <= T::zero() || !adet.is_finite() {
            return Err(AssemblyError::DegenerateElement(e));
        }
        let inv = &map.inverse;
        let region = self.region(e);
        let coef: Vec<DMatrix<T>> = (0..d).map(|s| self.problem.coefficient_matrix(s, region)).collect();
        let mo = &self.moments;
        let nt = mo.mass_yy.nrows();
        let np = mo.g[0].ncols();
        let nb = mo.h[0].ncols();

        // physical moments
        let phys1 = |refm: &[DMatrix<T>], s: usize| -> DMatrix<T> {
            let mut out = DMatrix::zeros(refm[0].nrows(), refm[0].ncols());
            for (k, m) in refm.iter().enumerate() {
                let a = inv[(k, s)];
                if a != T::zero() {
                    out += m * (a * adet);
                }
            }
            out
        };
        let gp: Vec<DMatrix<T>> = (0..d).map(|s| phys1(&mo.g, s)).collect();
        let hp: Vec<DMatrix<T>> = (0..d).map(|s| phys1(&mo.h, s) + phys1(&mo.e, s)).collect();
        let mut sp: Vec<Option<DMatrix<T>>> = vec![None; d * d];
        let mut stiff = |s: usize, s2: usize| -> DMatrix<T> {
            if let Some(m) = &sp[s * d + s2] {
                return m.clone();
            }
            let mut out = DMatrix::zeros(nt, nt);
            for k in 0..d {
                for l in 0..d {
                    let a = inv[(k, s)] * inv[(l, s2)];
                    if a != T::zero() {
                        out += &mo.stiff_yy[k * d + l] * (a * adet);
                    }
                }
            }
            sp[s * d + s2] = Some(out.clone());
            out
        };

        let mut gram = DMatrix::zeros(d * nt, d * nt);
        for c in 0..d {
            for c2 in 0..d {
                let mut block = if c == c2 { &mo.mass_yy * adet } else { DMatrix::zeros(nt, nt) };
                for s in 0..d {
                    for s2 in 0..d {
                        let q = (0..d).fold(T::zero(), |acc, r| acc + coef[s][(r, c)] * coef[s2][(r, c2)]);
                        if q != T::zero() {
                            block += stiff(s, s2) * q;
                        }
                    }
                }
                gram.view_mut((c * nt, c2 * nt), (nt, nt)).copy_from(&block);
            }
        }

        let mut b0 = DMatrix::zeros(d * nt, d * np);
        let mut b1 = DMatrix::zeros(d * nt, d * nb);
        for c in 0..d {
            for c2 in 0..d {
                let mut blk0 = DMatrix::zeros(nt, np);
                let mut blk1 = DMatrix::zeros(nt, nb);
                for s in 0..d {
                    let m = coef[s][(c2, c)];
                    if m != T::zero() {
                        blk0 -= &gp[s] * m;
                        blk1 += &hp[s] * m;
                    }
                }
                b0.view_mut((c * nt, c2 * np), (nt, np)).copy_from(&blk0);
                b1.view_mut((c * nt, c2 * nb), (nt, nb)).copy_from(&blk1);
            }
        }

        let mut load = DVector::zeros(d * nt);
        for q in 0..self.load_rule.len() {
            let x = map.apply(&self.load_rule.point(q));
            let src = (self.problem.source)(x.as_slice());
            let w = self.load_rule.weights[q] * adet;
            for c in 0..d {
                if src[c] == T::zero() {
                    continue;
                }
                let f = src[c] * w;
                for a in 0..nt {
                    load[c * nt + a] += f * self.load_psi[(a, q)];
                }
            }
        }
        Ok(LocalBlocks { gram, b0, b1, load })
    }
}

/// Element blocks of element `e`.
pub fn assemble_local<T: Real>(
    problem: &WaveProblem<T>,
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
    e: usize,
) -> Result<LocalBlocks<T>, AssemblyError> {
    Assembler::new(problem, mesh, layout)?.local(e)
}

/// Reference facet quadrature of local facet `lf`, as reference points and
/// weights summing to one.
fn reference_facet_rule<T: Real>(
    family: ElementFamily,
    dim: usize,
    lf: usize,
    degree: usize,
) -> Result<(DMatrix<T>, Vec<T>), SpaceError> {
    let sub = quadrature_rule::<T>(family, dim - 1, degree)?;
    let n = sub.len();
    let total = sub.weights.iter().fold(T::zero(), |a, w| a + *w);
    let weights = sub.weights.iter().map(|w| *w / total).collect();
    let mut pts = DMatrix::zeros(dim, n);
    match family {
        ElementFamily::Simplex => {
            let verts: Vec<Vec<T>> = (0..=dim)
                .filter(|&i| i != lf)
                .map(|i| (0..dim).map(|k| if i == k + 1 { T::one() } else { T::zero() }).collect())
                .collect();
            for q in 0..n {
                let xi = sub.point(q);
                let lam0 = T::one() - xi.iter().fold(T::zero(), |a, x| a + *x);
                for k in 0..dim {
                    let mut v = verts[0][k] * lam0;
                    for (j, x) in xi.iter().enumerate() {
                        v += verts[j + 1][k] * *x;
                    }
                    pts[(k, q)] = v;
                }
            }
        }
        ElementFamily::Box => {
            let (axis, side) = (lf / 2, lf % 2);
            for q in 0..n {
                let xi = sub.point(q);
                let mut j = 0;
                for k in 0..dim {
                    if k == axis {
                        pts[(k, q)] = if side == 1 { T::one() } else { T::zero() };
                    } else {
                        pts[(k, q)] = xi[j];
                        j += 1;
                    }
                }
            }
        }
    }
    Ok((pts, weights))
}

/// `b1` evaluated as `sum_{F ⊂ ∂K} ∫_F (D_n z) · w`.
pub fn facet_form_b1<T: Real>(
    problem: &WaveProblem<T>,
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
    e: usize,
) -> Result<DMatrix<T>, AssemblyError> {
    let d = layout.dim();
    let nt = layout.test_basis().len();
    let bl = layout.boundary_local();
    let nb = bl.len();
    let region = match &problem.region_of {
        Some(r) => r(mesh.centroid(e).as_slice()),
        None => 0,
    };
    let mut b1 = DMatrix::zeros(d * nt, d * nb);
    for lf in 0..mesh.num_local_facets() {
        let (normal, measure) = mesh.local_facet_normal(e, lf);
        let dn = problem
            .facet_coupling_matrix(&normal, region)
            .map_err(|err| AssemblyError::LayoutMismatch(err.to_string()))?;
        let (pts, weights) = reference_facet_rule::<T>(layout.family(), d, lf, layout.m() + layout.p() + 2)?;
        let psi = layout.test_basis().tabulate(&pts).values;
        let chi = layout.skeleton_basis().tabulate(&pts).values;
        for (q, &wq) in weights.iter().enumerate() {
            let w = wq * measure;
            for c in 0..d {
                for c2 in 0..d {
                    let m = dn[(c, c2)];
                    if m == T::zero() {
                        continue;
                    }
                    for a in 0..nt {
                        let pa = psi[(a, q)] * w * m;
                        for (j, &lj) in bl.iter().enumerate() {
                            b1[(c * nt + a, c2 * nb + j)] += pa * chi[(lj, q)];
                        }
                    }
                }
            }
        }
    }
    Ok(b1)
}

/// Per-element contribution to the Schur operator `C = Bᵀ A⁻¹ B`.
#[derive(Debug, Clone)]
pub struct ElementSchur<T: Real> {
    /// Global unknown of each local column (`None` for essential dofs).
    pub columns: Vec<Option<usize>>,
    /// Global skeleton dof of each local skeleton column.
    pub skeleton_dofs: Vec<usize>,
    /// `B_Kᵀ A_K⁻¹ B_K` over all local columns (trial first).
    pub schur: DMatrix<T>,
    /// `B_Kᵀ A_K⁻¹ l_K` with the lifted load.
    pub rhs: DVector<T>,
    /// `l_Kᵀ A_K⁻¹ l_K`.
    pub load_energy: T,
    pub volume: T,
}

/// The assembled global system in unknowns `x = (u, z_free)`.
#[derive(Debug, Clone)]
pub struct GlobalSystem<T: Real> {
    pub elements: Vec<ElementSchur<T>>,
    pub trial_per_element: usize,
    pub n_trial: usize,
    pub n_free: usize,
    /// Skeleton dof -> free index.
    pub free_index: Vec<Option<usize>>,
    /// Free index -> skeleton dof.
    pub free_dofs: Vec<usize>,
    /// Prescribed values on all skeleton dofs (zero on free ones).
    pub essential_values: Vec<T>,
    /// Diagonal basis scaling used by the CG driver.
    pub scaling: Vec<T>,
    /// Element skeleton mass matrices (one scalar component).
    pub skeleton_mass: Vec<DMatrix<T>>,
    pub dim: usize,
}

/// Prescribed values on the essential skeleton dofs.
pub fn essential_data<T: Real>(problem: &WaveProblem<T>, layout: &SpaceLayout<T>) -> Vec<T> {
    let d = layout.dim();
    let mask = layout.essential_mask();
    let mut vals = vec![T::zero(); layout.num_skeleton_dofs()];
    for s in 0..layout.num_skeleton_nodes() {
        if !(0..d).any(|c| mask[s * d + c]) {
            continue;
        }
        let x = layout.skeleton_point(s);
        let data: Vec<T> = match &problem.exact {
            Some(ex) => ex(x).value.iter().copied().collect(),
            None => {
                let classes = layout.skeleton_node_classes(s);
                let mut v = if classes[0] {
                    (problem.initial)(x)
                } else {
                    vec![T::zero(); d]
                };
                if !classes[0] {
                    v[d - 1] = (problem.boundary_mu)(x);
                }
                v
            }
        };
        for c in 0..d {
            if mask[s * d + c] {
                vals[s * d + c] = data[c];
            }
        }
    }
    vals
}

impl<T: Real> GlobalSystem<T> {
    pub fn n_unknowns(&self) -> usize {
        self.n_trial + self.n_free
    }

    /// `y = C x`.
    pub fn apply(&self, x: &[T], y: &mut [T]) {
        y.iter_mut().for_each(|v| *v = T::zero());
        for el in &self.elements {
            let n = el.columns.len();
            let xl = DVector::from_fn(n, |i, _| el.columns[i].map_or(T::zero(), |g| x[g]));
            let yl = &el.schur * xl;
            for (i, col) in el.columns.iter().enumerate() {
                if let Some(g) = col {
                    y[*g] += yl[i];
                }
            }
        }
    }

    /// Right-hand side `Bᵀ A⁻¹ l`.
    pub fn rhs(&self) -> Vec<T> {
        let mut g = vec![T::zero(); self.n_unknowns()];
        for el in &self.elements {
            for (i, col) in el.columns.iter().enumerate() {
                if let Some(c) = col {
                    g[*c] += el.rhs[i];
                }
            }
        }
        g
    }

    /// Dense `C`; only for small systems.
    pub fn dense(&self) -> DMatrix<T> {
        let n = self.n_unknowns();
        let mut c = DMatrix::zeros(n, n);
        for el in &self.elements {
            for (i, ci) in el.columns.iter().enumerate() {
                let Some(gi) = ci else { continue };
                for (j, cj) in el.columns.iter().enumerate() {
                    if let Some(gj) = cj {
                        c[(*gi, *gj)] += el.schur[(i, j)];
                    }
                }
            }
        }
        c
    }

    /// Full skeleton vector from free values plus essential data.
    pub fn skeleton_vector(&self, z_free: &[T]) -> Vec<T> {
        let mut z = self.essential_values.clone();
        for (f, &s) in self.free_dofs.iter().enumerate() {
            z[s] = z_free[f];
        }
        z
    }
}

/// Assemble every element and build the global Schur operator.
pub fn assemble_global<T: Real>(
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
    problem: &WaveProblem<T>,
) -> Result<GlobalSystem<T>, AssemblyError> {
    let asm = Assembler::new(problem, mesh, layout)?;
    let d = layout.dim();
    let mask = layout.essential_mask();
    let mut free_index = vec![None; layout.num_skeleton_dofs()];
    let mut free_dofs = Vec::new();
    for (s, &ess) in mask.iter().enumerate() {
        if !ess {
            free_index[s] = Some(free_dofs.len());
            free_dofs.push(s);
        }
    }
    let essential_values = essential_data(problem, layout);
    let nu = layout.trial_dofs_per_element();
    let n_trial = layout.num_trial_dofs(mesh);

    let elements: Vec<ElementSchur<T>> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| -> Result<ElementSchur<T>, AssemblyError> {
            let blocks = asm.local(e)?;
            let skeleton_dofs = layout.element_skeleton_dofs(e);
            let mut load = blocks.load;
            for (j, &s) in skeleton_dofs.iter().enumerate() {
                if mask[s] && essential_values[s] != T::zero() {
                    load.axpy(-essential_values[s], &blocks.b1.column(j), T::one());
                }
            }
            let chol = Cholesky::<T, Dyn>::new(blocks.gram).ok_or(AssemblyError::NotPositiveDefinite(e))?;
            let ny = load.len();
            let nv = skeleton_dofs.len();
            let mut b = DMatrix::zeros(ny, nu + nv);
            b.columns_mut(0, nu).copy_from(&blocks.b0);
            b.columns_mut(nu, nv).copy_from(&blocks.b1);
            let l = chol.l();
            let w = l
                .solve_lower_triangular(&b)
                .ok_or(AssemblyError::NotPositiveDefinite(e))?;
            let y = l
                .solve_lower_triangular(&load)
                .ok_or(AssemblyError::NotPositiveDefinite(e))?;
            let schur = w.tr_mul(&w);
            let rhs = w.tr_mul(&y);
            let mut columns: Vec<Option<usize>> = (0..nu).map(|i| Some(e * nu + i)).collect();
            columns.extend(skeleton_dofs.iter().map(|&s| free_index[s].map(|f| n_trial + f)));
            Ok(ElementSchur {
                columns,
                skeleton_dofs,
                schur,
                rhs,
                load_energy: y.norm_squared(),
                volume: mesh.volume(e),
            })
        })
        .collect::<Result<_, _>>()?;

    let n_free = free_dofs.len();
    let mut scaling = vec![T::zero(); n_trial + n_free];
    let mut count = vec![0usize; n_free];
    for (e, el) in elements.iter().enumerate() {
        let s = T::one() / el.volume.sqrt();
        for i in 0..nu {
            scaling[e * nu + i] = s;
        }
        for col in el.columns[nu..].iter().flatten() {
            scaling[*col] += el.volume;
            count[*col - n_trial] += 1;
        }
    }
    for (f, &k) in count.iter().enumerate() {
        let mean = scaling[n_trial + f] / T::from_usize_lossy(k.max(1));
        scaling[n_trial + f] = T::one() / mean.sqrt();
    }
    let skeleton_mass = (0..mesh.num_elements()).map(|e| asm.skeleton_mass(e)).collect();
    Ok(GlobalSystem {
        elements,
        trial_per_element: nu,
        n_trial,
        n_free,
        free_index,
        free_dofs,
        essential_values,
        scaling,
        skeleton_mass,
        dim: d,
    })
}

/// Independent dense assembly of the full block system: element blocks
/// evaluated pointwise through the problem's operator at physical
/// quadrature points, scattered into global `A`, `B0`, `B1` and `l`.
/// Skeleton columns cover all skeleton dofs (essential ones included).
pub struct DenseSystem<T: Real> {
    pub gram: DMatrix<T>,
    pub b0: DMatrix<T>,
    pub b1: DMatrix<T>,
    pub load: DVector<T>,
}

pub fn dense_oracle<T: Real>(
    problem: &WaveProblem<T>,
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
) -> Result<DenseSystem<T>, AssemblyError> {
    let d = layout.dim();
    let nt = layout.test_basis().len();
    let np = layout.trial_basis().len();
    let bl = layout.boundary_local();
    let ny = d * nt;
    let ne = mesh.num_elements();
    let nu = d * np;
    let mut gram = DMatrix::zeros(ne * ny, ne * ny);
    let mut b0 = DMatrix::zeros(ne * ny, ne * nu);
    let mut b1 = DMatrix::zeros(ne * ny, layout.num_skeleton_dofs());
    let mut load = DVector::zeros(ne * ny);
    let rule = quadrature_rule::<T>(layout.family(), d, (2 * layout.m() + 4).min(MAX_EXACTNESS))?;

    let vec_jet = |value: T, grads: Vec<T>, c: usize| -> FieldJet<T> {
        let mut j = FieldJet::zero(d);
        j.value[c] = value;
        for (s, g) in grads.into_iter().enumerate() {
            j.grad[(c, s)] = g;
        }
        j
    };

    for e in 0..ne {
        let map = mesh.affine_map(e);
        let adet = map.det.abs();
        let test = layout.eval_basis_jet(mesh, SpaceKind::Test, e, &rule.points);
        let trial = layout.eval_basis_jet(mesh, SpaceKind::Trial, e, &rule.points);
        let skel = layout.eval_basis_jet(mesh, SpaceKind::Skeleton, e, &rule.points);
        let sdofs = layout.element_skeleton_dofs(e);
        for q in 0..rule.len() {
            let x = map.apply(&rule.point(q));
            let w = rule.weights[q] * adet;
            let jets = |jet: &crate::spaces::BasisJet<T>, cols: &[usize]| -> Vec<(DVector<T>, DVector<T>)> {
                let mut out = Vec::new();
                for c in 0..d {
                    for &i in cols {
                        let fj = vec_jet(jet.values[(i, q)], (0..d).map(|s| jet.grads[s][(i, q)]).collect(), c);
                        let au = problem.apply_operator(x.as_slice(), &fj).expect("dimension checked");
                        out.push((fj.value, au));
                    }
                }
                out
            };
            let all_t: Vec<usize> = (0..nt).collect();
            let all_p: Vec<usize> = (0..np).collect();
            let tj = jets(&test, &all_t);
            let uj = jets(&trial, &all_p);
            let zj = jets(&skel, bl);
            let src = DVector::from_vec((problem.source)(x.as_slice()));
            for (k, (wk, awk)) in tj.iter().enumerate() {
                let row = e * ny + k;
                load[row] += src.dot(wk) * w;
                for (l, (vl, avl)) in tj.iter().enumerate() {
                    gram[(row, e * ny + l)] += (wk.dot(vl) + awk.dot(avl)) * w;
                }
                for (i, (ui, _)) in uj.iter().enumerate() {
                    b0[(row, e * nu + i)] -= ui.dot(awk) * w;
                }
                for (j, (zj_, azj)) in zj.iter().enumerate() {
                    b1[(row, sdofs[j])] += (azj.dot(wk) + zj_.dot(awk)) * w;
                }
            }
        }
    }
    Ok(DenseSystem { gram, b0, b1, load })
}
