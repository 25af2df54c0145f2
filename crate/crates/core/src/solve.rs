//! Solvers for the Schur-complement system `C x = g`, `C = Bᵀ A⁻¹ B`.
//!
//! Technique 1 runs conjugate gradients from `x0 = 0`; the Krylov iterates
//! stay in the range of `C`, so a singular but consistent system is fine.
//! Technique 2 adds `α M` on the skeleton block, condenses the
//! element-local trial unknowns and factors the result directly.

use std::time::Instant;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{AssemblyError, Assembler, GlobalSystem};
use crate::mesh::SpaceTimeMesh;
use crate::problem::WaveProblem;
use crate::scalar::Real;
use crate::spaces::SpaceLayout;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("regularization weight must be positive")]
    BadAlpha,
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("trial block of element {0} is singular")]
    SingularTrialBlock(usize),
    #[error("kernel report needs a dense SVD of {0} columns (limit {1})")]
    TooLarge(usize, usize),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    Cg,
    Regularized,
}

impl std::str::FromStr for Technique {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cg" | "1" => Ok(Self::Cg),
            "regularized" | "2" => Ok(Self::Regularized),
            other => Err(format!("unknown technique `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport<T: Real> {
    pub technique: Technique,
    pub iterations: usize,
    /// `‖g - C x‖ / ‖g‖` for the unregularized system.
    pub relative_residual: f64,
    pub converged: bool,
    pub alpha: Option<f64>,
    /// Trial coefficients.
    pub u: Vec<T>,
    /// Skeleton coefficients on all skeleton dofs, essential values included.
    pub z: Vec<T>,
    pub seconds: f64,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn relative_residual<T: Real>(system: &GlobalSystem<T>, x: &[T], g: &[T]) -> f64 {
    let gn = norm(g);
    if gn == T::zero() {
        return if norm(x) == T::zero() { 0.0 } else { f64::INFINITY };
    }
    let mut cx = vec![T::zero(); x.len()];
    system.apply(x, &mut cx);
    let r: Vec<T> = g.iter().zip(&cx).map(|(a, b)| *a - *b).collect();
    (norm(&r) / gn).as_f64()
}

fn report<T: Real>(
    system: &GlobalSystem<T>,
    technique: Technique,
    x: Vec<T>,
    iterations: usize,
    converged: bool,
    alpha: Option<f64>,
    start: Instant,
) -> SolveReport<T> {
    let g = system.rhs();
    let relative_residual = relative_residual(system, &x, &g);
    let u = x[..system.n_trial].to_vec();
    let z = system.skeleton_vector(&x[system.n_trial..]);
    SolveReport {
        technique,
        iterations,
        relative_residual,
        converged,
        alpha,
        u,
        z,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Technique 1 with the default iteration cap `20 · #unknowns`.
pub fn solve_cg<T: Real>(system: &GlobalSystem<T>, tol: T) -> Result<SolveReport<T>, SolveError> {
    solve_cg_observed(system, tol, 20 * system.n_unknowns(), |_| {})
}

/// Conjugate gradients on `C x = g` from `x0 = 0`, calling `observer` with
/// every iterate. The system is symmetrically scaled by the stored
/// diagonal; on meshes of equal-sized elements the scaling is a constant
/// and the iterates are those of plain CG.
pub fn solve_cg_observed<T: Real>(
    system: &GlobalSystem<T>,
    tol: T,
    max_iter: usize,
    mut observer: impl FnMut(&[T]),
) -> Result<SolveReport<T>, SolveError> {
    if tol <= T::zero() {
        return Err(SolveError::BadTolerance);
    }
    let start = Instant::now();
    let n = system.n_unknowns();
    let s = &system.scaling;
    let g = system.rhs();
    let b: Vec<T> = g.iter().zip(s).map(|(a, w)| *a * *w).collect();
    let bnorm = norm(&b);
    let mut y = vec![T::zero(); n];
    if bnorm == T::zero() {
        return Ok(report(system, Technique::Cg, y, 0, true, None, start));
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut sp = vec![T::zero(); n];
    let mut cp = vec![T::zero(); n];
    let mut x = vec![T::zero(); n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        for i in 0..n {
            sp[i] = s[i] * p[i];
        }
        system.apply(&sp, &mut cp);
        for i in 0..n {
            cp[i] *= s[i];
        }
        let pcp = dot(&p, &cp);
        if pcp <= T::zero() {
            break;
        }
        let alpha = rr / pcp;
        for i in 0..n {
            y[i] += alpha * p[i];
            r[i] -= alpha * cp[i];
        }
        iterations += 1;
        for i in 0..n {
            x[i] = s[i] * y[i];
        }
        observer(&x);
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= tol * bnorm {
            converged = true;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if !converged {
        log::warn!("CG stopped after {iterations} iterations without reaching tolerance");
    }
    let x: Vec<T> = y.iter().zip(s).map(|(a, w)| *a * *w).collect();
    Ok(report(system, Technique::Cg, x, iterations, converged, None, start))
}

/// Technique 2: solve `(C + diag(0, α M)) x = g`.
pub fn solve_regularized<T: Real>(system: &GlobalSystem<T>, alpha: T) -> Result<SolveReport<T>, SolveError> {
    if alpha <= T::zero() {
        return Err(SolveError::BadAlpha);
    }
    let start = Instant::now();
    let nu = system.trial_per_element;
    let nf = system.n_free;
    let nt = system.n_trial;
    let d = system.dim;

    // condense element-local trial unknowns
    struct Condensed<T: Real> {
        cuu: Cholesky<T, Dyn>,
        cuv: DMatrix<T>,
        free: Vec<(usize, usize)>,
        schur: DMatrix<T>,
        rhs: DVector<T>,
    }
    let mut condensed = Vec::with_capacity(system.elements.len());
    for (e, el) in system.elements.iter().enumerate() {
        let nv = el.columns.len() - nu;
        let cuu = el.schur.view((0, 0), (nu, nu)).into_owned();
        let cuv = el.schur.view((0, nu), (nu, nv)).into_owned();
        let cvv = el.schur.view((nu, nu), (nv, nv)).into_owned();
        let cuu = Cholesky::new(cuu).ok_or(SolveError::SingularTrialBlock(e))?;
        let x = cuu.solve(&cuv);
        let gu = el.rhs.rows(0, nu).into_owned();
        let gv = el.rhs.rows(nu, nv).into_owned();
        let mut schur = cvv - cuv.tr_mul(&x);
        let rhs = gv - x.tr_mul(&gu);
        let nb = nv / d;
        let mass = &system.skeleton_mass[e];
        for c in 0..d {
            for j in 0..nb {
                for k in 0..nb {
                    schur[(c * nb + j, c * nb + k)] += alpha * mass[(j, k)];
                }
            }
        }
        let free = el.columns[nu..]
            .iter()
            .enumerate()
            .filter_map(|(l, g)| g.map(|g| (l, g - nt)))
            .collect();
        condensed.push(Condensed { cuu, cuv, free, schur, rhs });
    }

    let mut entries = Vec::new();
    let mut rhs = faer::Col::<f64>::zeros(nf);
    for el in &condensed {
        for &(li, gi) in &el.free {
            rhs[gi] += el.rhs[li].as_f64();
            for &(lj, gj) in &el.free {
                if gj <= gi {
                    entries.push(Triplet::new(gi, gj, el.schur[(li, lj)].as_f64()));
                }
            }
        }
    }
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(nf, nf, &entries)
        .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
    let llt = mat
        .sp_cholesky(Side::Lower)
        .map_err(|e| SolveError::Factorization(e.to_string()))?;
    let zf = llt.solve(&rhs);
    let mut x = vec![T::zero(); nt + nf];
    for i in 0..nf {
        x[nt + i] = T::lit(zf[i]);
    }

    // recover trial unknowns
    for (e, (el, cd)) in system.elements.iter().zip(&condensed).enumerate() {
        let nv = el.columns.len() - nu;
        let zl = DVector::from_fn(nv, |l, _| el.columns[nu + l].map_or(T::zero(), |g| x[g]));
        let gu = el.rhs.rows(0, nu).into_owned();
        let ul = cd.cuu.solve(&(gu - &cd.cuv * zl));
        x[e * nu..(e + 1) * nu].copy_from_slice(ul.as_slice());
    }
    Ok(report(
        system,
        Technique::Regularized,
        x,
        1,
        true,
        Some(alpha.as_f64()),
        start,
    ))
}

/// Numerical kernel of the global `B1` restricted to free skeleton dofs.
#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    pub columns: usize,
    pub rank: usize,
    pub kernel_dimension: usize,
    pub sigma_max: f64,
    /// Largest singular value treated as zero and smallest one kept.
    pub gap: (f64, f64),
    /// Kernel basis over free skeleton dofs.
    pub kernel: Vec<Vec<f64>>,
    /// Mesh facets on which each kernel vector has a nonzero trace.
    pub supports: Vec<Vec<usize>>,
    /// Facets with `n_t² = c² |n_x|²`.
    pub characteristic_facets: Vec<usize>,
}

pub const KERNEL_COLUMN_LIMIT: usize = 5000;

pub fn kernel_report<T: Real>(
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
    problem: &WaveProblem<T>,
) -> Result<KernelReport, SolveError> {
    let d = layout.dim();
    let mask = layout.essential_mask();
    let mut free_index = vec![None; mask.len()];
    let mut free_dofs = Vec::new();
    for (s, &ess) in mask.iter().enumerate() {
        if !ess {
            free_index[s] = Some(free_dofs.len());
            free_dofs.push(s);
        }
    }
    let nf = free_dofs.len();
    if nf > KERNEL_COLUMN_LIMIT {
        return Err(SolveError::TooLarge(nf, KERNEL_COLUMN_LIMIT));
    }
    let asm = Assembler::new(problem, mesh, layout)?;
    let ny = layout.test_dofs_per_element();
    let rows = (mesh.num_elements() * ny).max(nf);
    let mut b1 = DMatrix::<f64>::zeros(rows, nf);
    for e in 0..mesh.num_elements() {
        let blocks = asm.local(e)?;
        for (j, &s) in layout.element_skeleton_dofs(e).iter().enumerate() {
            if let Some(f) = free_index[s] {
                for k in 0..ny {
                    b1[(e * ny + k, f)] += blocks.b1[(k, j)].as_f64();
                }
            }
        }
    }
    let svd = SVD::new(b1, false, true);
    let vt = svd.v_t.expect("requested");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.max();
    let threshold = 1e-10 * sigma_max;
    let mut kernel = Vec::new();
    let mut zero_max: f64 = 0.0;
    let mut kept_min = f64::INFINITY;
    for (i, &s) in sigma.iter().enumerate() {
        if s <= threshold {
            kernel.push(vt.row(i).iter().copied().collect::<Vec<f64>>());
            zero_max = zero_max.max(s);
        } else {
            kept_min = kept_min.min(s);
        }
    }

    // facet supports via nodes lying on each facet
    let sk = layout.skeleton_basis();
    let facet_nodes: Vec<Vec<usize>> = mesh
        .facets()
        .iter()
        .map(|f| {
            (0..sk.len())
                .filter(|&i| sk.node_on_facet(i, f.left.local))
                .filter_map(|i| layout.skeleton_node_of(layout.lagrange_node(f.left.element, i)))
                .collect()
        })
        .collect();
    let supports = kernel
        .iter()
        .map(|v| {
            let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let active: Vec<bool> = (0..layout.num_skeleton_nodes())
                .map(|s| (0..d).any(|c| free_index[s * d + c].is_some_and(|f| v[f].abs() > 1e-8 * vmax)))
                .collect();
            facet_nodes
                .iter()
                .enumerate()
                .filter(|(_, nodes)| nodes.iter().any(|&s| active[s]))
                .map(|(f, _)| f)
                .collect()
        })
        .collect();

    let c2 = (problem.wave_speed * problem.wave_speed).as_f64();
    let characteristic_facets = (0..mesh.facets().len())
        .filter(|&f| {
            let n = mesh.local_facet_normal(mesh.facets()[f].left.element, mesh.facets()[f].left.local).0;
            let nt = n[d - 1].as_f64();
            let nx2: f64 = n[..d - 1].iter().map(|x| x.as_f64().powi(2)).sum();
            (nt * nt - c2 * nx2).abs() < 1e-12
        })
        .collect();

    Ok(KernelReport {
        columns: nf,
        rank: nf - kernel.len(),
        kernel_dimension: kernel.len(),
        sigma_max,
        gap: (zero_max, kept_min),
        kernel,
        supports,
        characteristic_facets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_global;
    use crate::mesh::ElementFamily;
    use crate::problem::{conv2d, polynomial2d, FieldJet};
    use std::sync::Arc;

    type M = SpaceTimeMesh<f64>;

    fn unit(n: usize, family: ElementFamily) -> M {
        M::build_box_mesh(&[(0.0, 1.0); 2], &[n, n], family).unwrap()
    }

    #[test]
    fn zero_load_gives_zero_solution() {
        let mesh = unit(2, ElementFamily::Simplex);
        let layout = SpaceLayout::with_default_enrichment(&mesh, 1).unwrap();
        let mut problem = conv2d::<f64>(1.0);
        problem.source = Arc::new(|_| vec![0.0, 0.0]);
        problem.exact = Some(Arc::new(|_| FieldJet::zero(2)));
        let sys = assemble_global(&mesh, &layout, &problem).unwrap();
        let r = solve_cg(&sys, 1e-10).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.u.iter().all(|v| *v == 0.0));
        assert!(solve_cg(&sys, 0.0).is_err());
        assert!(solve_regularized(&sys, 0.0).is_err());
    }

    #[test]
    fn techniques_agree_on_kernel_free_mesh() {
        let mesh = unit(4, ElementFamily::Box);
        let layout = SpaceLayout::with_default_enrichment(&mesh, 1).unwrap();
        let sys = assemble_global(&mesh, &layout, &conv2d::<f64>(1.0)).unwrap();
        let a = solve_cg(&sys, 1e-10).unwrap();
        let b = solve_regularized(&sys, 1e-9).unwrap();
        assert!(a.converged && a.relative_residual <= 1e-10);
        let diff: f64 = a.u.iter().zip(&b.u).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let un: f64 = a.u.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff <= 1e-6 * un, "{}", diff / un);
    }

    #[test]
    fn large_alpha_degrades_solution() {
        let mesh = unit(4, ElementFamily::Box);
        let layout = SpaceLayout::with_default_enrichment(&mesh, 1).unwrap();
        let sys = assemble_global(&mesh, &layout, &conv2d::<f64>(1.0)).unwrap();
        let a = solve_regularized(&sys, 1e-9).unwrap();
        let b = solve_regularized(&sys, 1.0).unwrap();
        assert!(b.relative_residual > 1e3 * a.relative_residual.max(1e-14));
    }

    #[test]
    fn kernel_dimensions() {
        let mesh = unit(2, ElementFamily::Simplex);
        let layout = SpaceLayout::with_default_enrichment(&mesh, 1).unwrap();
        let r = kernel_report(&mesh, &layout, &conv2d::<f64>(1.0)).unwrap();
        // one kernel function per interior edge node of each characteristic edge
        assert_eq!(r.kernel_dimension, 4);
        assert_eq!(r.characteristic_facets.len(), 4);
        assert!(r.gap.0 < 1e-12 && r.gap.1 > 0.1);
        let l2 = SpaceLayout::with_default_enrichment(&mesh, 2).unwrap();
        assert_eq!(kernel_report(&mesh, &l2, &conv2d::<f64>(1.0)).unwrap().kernel_dimension, 8);
        for sup in &r.supports {
            assert!(sup.iter().all(|f| r.characteristic_facets.contains(f)));
        }
        let r2 = kernel_report(&mesh, &layout, &conv2d::<f64>(2.0)).unwrap();
        assert_eq!(r2.kernel_dimension, 0);
        let bm = unit(2, ElementFamily::Box);
        let bl = SpaceLayout::with_default_enrichment(&bm, 1).unwrap();
        assert_eq!(kernel_report(&bm, &bl, &conv2d::<f64>(1.0)).unwrap().kernel_dimension, 0);
    }

    #[test]
    fn kernel_of_b_is_kernel_of_c_and_cg_stays_orthogonal() {
        let mesh = unit(2, ElementFamily::Simplex);
        let layout = SpaceLayout::with_default_enrichment(&mesh, 1).unwrap();
        let problem = conv2d::<f64>(1.0);
        let rep = kernel_report(&mesh, &layout, &problem).unwrap();
        let sys = assemble_global(&mesh, &layout, &problem).unwrap();
        let n = sys.n_unknowns();
        let padded: Vec<Vec<f64>> = rep
            .kernel
            .iter()
            .map(|v| {
                let mut x = vec![0.0; n];
                x[sys.n_trial..].copy_from_slice(v);
                x
            })
            .collect();
        let mut cv = vec![0.0; n];
        for v in &padded {
            sys.apply(v, &mut cv);
            assert!(norm(&cv) <= 1e-8 * norm(v));
        }
        let mut worst: f64 = 0.0;
        let r = solve_cg_observed(&sys, 1e-10, 20 * n, |x| {
            let xn = norm(x);
            for v in &padded {
                if xn > 0.0 {
                    worst = worst.max(dot(x, v).abs() / (xn * norm(v)));
                }
            }
        })
        .unwrap();
        assert!(r.converged);
        assert!(worst <= 1e-8, "{worst}");
        let t2 = solve_regularized(&sys, 1e-9).unwrap();
        let diff: f64 = r.u.iter().zip(&t2.u).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 1e-4 * norm(&r.u));
    }

    #[test]
    fn polynomial_solution_is_reproduced() {
        let problem = polynomial2d::<f64>(1.0);
        for family in [ElementFamily::Box, ElementFamily::Simplex] {
            let mesh = unit(2, family);
            let layout = SpaceLayout::with_default_enrichment(&mesh, 3).unwrap();
            let sys = assemble_global(&mesh, &layout, &problem).unwrap();
            let r = solve_cg(&sys, 1e-12).unwrap();
            let ex = problem.exact.as_ref().unwrap();
            let pts = DMatrix::from_column_slice(2, 1, &[0.3, 0.2]);
            for e in 0..mesh.num_elements() {
                let x = mesh.affine_map(e).apply(&[0.3, 0.2]);
                let val = layout.eval_trial_field(e, &r.u, &pts);
                let exact = ex(x.as_slice()).value;
                for c in 0..2 {
                    assert!((val[(c, 0)] - exact[c]).abs() < 1e-8, "{family:?}");
                }
            }
        }
    }
}
