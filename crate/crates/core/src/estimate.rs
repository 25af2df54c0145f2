//! Error representation, element indicators and true errors.

use nalgebra::{Cholesky, DVector, Dyn};
use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::{AssemblyError, Assembler, GlobalSystem};
use crate::mesh::SpaceTimeMesh;
use crate::problem::WaveProblem;
use crate::scalar::Real;
use crate::solve::SolveReport;
use crate::spaces::quadrature::{quadrature_rule, MAX_EXACTNESS};
use crate::spaces::{SpaceError, SpaceLayout};

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("problem `{0}` has no exact solution")]
    NoExactSolution(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone)]
pub struct ErrorBreakdown<T: Real> {
    /// Coefficients of `e_h` per element.
    pub e_h: Vec<DVector<T>>,
    /// `‖e_h‖²_K + ‖A e_h‖²_K`.
    pub indicators: Vec<T>,
    pub eta: T,
    pub true_error: Option<T>,
    pub effectivity: Option<T>,
}

impl<T: Real> ErrorBreakdown<T> {
    /// Attach a field error and the resulting effectivity.
    pub fn with_true_error(mut self, err: T) -> Self {
        self.true_error = Some(err);
        self.effectivity = (err > T::zero()).then(|| self.eta / err);
        self
    }
}

/// `e_h = A⁻¹ (l - B0 u_h - B1 z_h)` element by element.
pub fn error_representation<T: Real>(
    problem: &WaveProblem<T>,
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
    solution: &SolveReport<T>,
) -> Result<ErrorBreakdown<T>, EstimateError> {
    let asm = Assembler::new(problem, mesh, layout)?;
    let nu = layout.trial_dofs_per_element();
    let per: Vec<(DVector<T>, T)> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| -> Result<(DVector<T>, T), EstimateError> {
            let b = asm.local(e)?;
            let u = DVector::from_column_slice(&solution.u[e * nu..(e + 1) * nu]);
            let dofs = layout.element_skeleton_dofs(e);
            let z = DVector::from_fn(dofs.len(), |j, _| solution.z[dofs[j]]);
            let r = b.load - &b.b0 * u - &b.b1 * z;
            let chol = Cholesky::<T, Dyn>::new(b.gram).ok_or(AssemblyError::NotPositiveDefinite(e))?;
            let eh = chol.solve(&r);
            let ind = r.dot(&eh).max(T::zero());
            Ok((eh, ind))
        })
        .collect::<Result<_, _>>()?;
    let (e_h, indicators): (Vec<_>, Vec<_>) = per.into_iter().unzip();
    let eta = indicators.iter().fold(T::zero(), |a, b| a + *b).sqrt();
    Ok(ErrorBreakdown {
        e_h,
        indicators,
        eta,
        true_error: None,
        effectivity: None,
    })
}

fn field_error<T: Real>(
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
    u: &[T],
    exact: &(dyn Fn(&[T]) -> Vec<T> + Sync),
) -> Result<Vec<T>, EstimateError> {
    let d = layout.dim();
    let rule = quadrature_rule::<T>(layout.family(), d, (2 * layout.p() + 10).min(MAX_EXACTNESS))?;
    Ok((0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let map = mesh.affine_map(e);
            let adet = map.det.abs();
            let vals = layout.eval_trial_field(e, u, &rule.points);
            let mut acc = T::zero();
            for q in 0..rule.len() {
                let x = map.apply(&rule.point(q));
                let ex = exact(x.as_slice());
                for c in 0..d {
                    acc += rule.weights[q] * adet * (ex[c] - vals[(c, q)]).powi(2);
                }
            }
            acc
        })
        .collect())
}

/// `‖u - u_h‖` in `L2(Ω)^{d+1}`.
pub fn true_error<T: Real>(
    problem: &WaveProblem<T>,
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
    u: &[T],
) -> Result<T, EstimateError> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| EstimateError::NoExactSolution(problem.name.clone()))?;
    let f = |x: &[T]| exact(x).value.iter().copied().collect::<Vec<T>>();
    let parts = field_error(mesh, layout, u, &f)?;
    Ok(parts.into_iter().fold(T::zero(), |a, b| a + b).sqrt())
}

/// `‖u‖` of the exact solution, with the same quadrature as [`true_error`].
pub fn exact_norm<T: Real>(
    problem: &WaveProblem<T>,
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
) -> Result<T, EstimateError> {
    true_error(problem, mesh, layout, &vec![T::zero(); layout.num_trial_dofs(mesh)])
}

/// `max |b((v, ρ), e_h)|` over the trial and free skeleton basis, relative
/// to `max |(Bᵀ A⁻¹ l)_i|`.
pub fn orthogonality_check<T: Real>(
    problem: &WaveProblem<T>,
    mesh: &SpaceTimeMesh<T>,
    layout: &SpaceLayout<T>,
    system: &GlobalSystem<T>,
    breakdown: &ErrorBreakdown<T>,
) -> Result<T, EstimateError> {
    let asm = Assembler::new(problem, mesh, layout)?;
    let mut res = vec![T::zero(); system.n_unknowns()];
    for (e, el) in system.elements.iter().enumerate() {
        let b = asm.local(e)?;
        let e_k = &breakdown.e_h[e];
        let r0 = b.b0.tr_mul(e_k);
        let r1 = b.b1.tr_mul(e_k);
        let nu = r0.len();
        for (i, col) in el.columns.iter().enumerate() {
            if let Some(g) = col {
                res[*g] += if i < nu { r0[i] } else { r1[i - nu] };
            }
        }
    }
    let scale = system.rhs().iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let worst = res.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    Ok(if scale == T::zero() { worst } else { worst / scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_global;
    use crate::mesh::ElementFamily;
    use crate::problem::{conv2d, polynomial2d, FieldJet};
    use crate::solve::{solve_cg, solve_cg_observed};
    use std::f64::consts::PI;
    use std::sync::Arc;

    type M = SpaceTimeMesh<f64>;

    fn unit(n: usize, family: ElementFamily) -> M {
        M::build_box_mesh(&[(0.0, 1.0); 2], &[n, n], family).unwrap()
    }

    #[test]
    fn zero_field_error_is_exact_norm() {
        let mesh = unit(4, ElementFamily::Box);
        let layout = SpaceLayout::with_default_enrichment(&mesh, 1).unwrap();
        let n = exact_norm(&conv2d::<f64>(1.0), &mesh, &layout).unwrap();
        assert!((n - (7.0 * PI * PI / 16.0).sqrt()).abs() < 1e-10);
        assert!((n - 2.0780).abs() < 1e-4);
    }

    #[test]
    fn estimator_vanishes_on_polynomial_solution() {
        let mesh = unit(2, ElementFamily::Simplex);
        let layout = SpaceLayout::with_default_enrichment(&mesh, 3).unwrap();
        let problem = polynomial2d::<f64>(1.0);
        let sys = assemble_global(&mesh, &layout, &problem).unwrap();
        let sol = solve_cg(&sys, 1e-12).unwrap();
        let br = error_representation(&problem, &mesh, &layout, &sol).unwrap();
        assert!(br.eta < 1e-7, "{}", br.eta);
        let err = true_error(&problem, &mesh, &layout, &sol.u).unwrap();
        assert!(err < 1e-8 * exact_norm(&problem, &mesh, &layout).unwrap());
        let total: f64 = br.indicators.iter().sum();
        assert!((br.eta * br.eta - total).abs() <= 1e-12 * total.max(1e-300));
    }

    #[test]
    fn zero_data_gives_zero_estimator() {
        let mesh = unit(2, ElementFamily::Box);
        let layout = SpaceLayout::with_default_enrichment(&mesh, 1).unwrap();
        let mut problem = conv2d::<f64>(1.0);
        problem.source = Arc::new(|_| vec![0.0, 0.0]);
        problem.exact = Some(Arc::new(|_| FieldJet::zero(2)));
        let sys = assemble_global(&mesh, &layout, &problem).unwrap();
        let sol = solve_cg(&sys, 1e-10).unwrap();
        let br = error_representation(&problem, &mesh, &layout, &sol).unwrap();
        assert_eq!(br.eta, 0.0);
        assert_eq!(orthogonality_check(&problem, &mesh, &layout, &sys, &br).unwrap(), 0.0);
    }

    #[test]
    fn orthogonality_tracks_convergence() {
        let mesh = unit(4, ElementFamily::Box);
        let layout = SpaceLayout::with_default_enrichment(&mesh, 1).unwrap();
        let problem = conv2d::<f64>(1.0);
        let sys = assemble_global(&mesh, &layout, &problem).unwrap();
        let sol = solve_cg(&sys, 1e-10).unwrap();
        let br = error_representation(&problem, &mesh, &layout, &sol).unwrap();
        assert!(orthogonality_check(&problem, &mesh, &layout, &sys, &br).unwrap() <= 1e-8);
        let rough = solve_cg_observed(&sys, 1e-10, 1, |_| {}).unwrap();
        assert!(!rough.converged);
        let br = error_representation(&problem, &mesh, &layout, &rough).unwrap();
        assert!(orthogonality_check(&problem, &mesh, &layout, &sys, &br).unwrap() > 1e-3);
    }

    #[test]
    fn interpolant_beats_zero() {
        let mesh = unit(4, ElementFamily::Box);
        let layout = SpaceLayout::with_default_enrichment(&mesh, 1).unwrap();
        let problem = conv2d::<f64>(1.0);
        let sys = assemble_global(&mesh, &layout, &problem).unwrap();
        let sol = solve_cg(&sys, 1e-10).unwrap();
        let err = true_error(&problem, &mesh, &layout, &sol.u).unwrap();
        assert!(err < exact_norm(&problem, &mesh, &layout).unwrap());
        let br = error_representation(&problem, &mesh, &layout, &sol).unwrap().with_true_error(err);
        assert!(br.effectivity.unwrap() > 0.0);
    }
}
