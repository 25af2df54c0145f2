#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SVD};
use spacetime_dpg::assembly::{assemble_global, dense_oracle};
use spacetime_dpg::mesh::{ElementFamily, SpaceTimeMesh};
use spacetime_dpg::problem::WaveProblem;
use spacetime_dpg::solve::{solve_cg, solve_regularized, SolveReport, Technique};
use spacetime_dpg::spaces::quadrature::quadrature_rule;
use spacetime_dpg::spaces::SpaceLayout;

pub type Mesh = SpaceTimeMesh<f64>;
pub type Layout = SpaceLayout<f64>;

pub fn cube(counts: &[usize], family: ElementFamily) -> Mesh {
    Mesh::build_box_mesh(&vec![(0.0, 1.0); counts.len()], counts, family).unwrap()
}

pub fn solve(
    problem: &WaveProblem<f64>,
    mesh: &Mesh,
    p: usize,
    technique: Technique,
) -> (Layout, SolveReport<f64>) {
    let layout = Layout::with_default_enrichment(mesh, p).unwrap();
    let system = assemble_global(mesh, &layout, problem).unwrap();
    let sol = match technique {
        Technique::Cg => solve_cg(&system, 1e-10).unwrap(),
        Technique::Regularized => solve_regularized(&system, 1e-9).unwrap(),
    };
    (layout, sol)
}

/// `‖a - b‖ / ‖b‖` for two trial fields, by quadrature.
pub fn relative_difference(mesh: &Mesh, layout: &Layout, a: &[f64], b: &[f64]) -> f64 {
    let rule = quadrature_rule::<f64>(layout.family(), layout.dim(), 2 * layout.p() + 2).unwrap();
    let (mut diff, mut norm) = (0.0, 0.0);
    for e in 0..mesh.num_elements() {
        let det = mesh.affine_map(e).det.abs();
        let va = layout.eval_trial_field(e, a, &rule.points);
        let vb = layout.eval_trial_field(e, b, &rule.points);
        for q in 0..rule.len() {
            for c in 0..layout.dim() {
                diff += rule.weights[q] * det * (va[(c, q)] - vb[(c, q)]).powi(2);
                norm += rule.weights[q] * det * vb[(c, q)].powi(2);
            }
        }
    }
    (diff / norm).sqrt()
}

/// Error of the element-wise L2 projection of the exact solution onto the
/// trial space: a lower bound for any `u_h`.
pub fn best_approximation(problem: &WaveProblem<f64>, mesh: &Mesh, layout: &Layout) -> f64 {
    let exact = problem.exact.clone().unwrap();
    let basis = layout.trial_basis();
    let rule = quadrature_rule::<f64>(layout.family(), layout.dim(), 2 * layout.p() + 12).unwrap();
    let tab = basis.tabulate(&rule.points).values;
    let nb = basis.len();
    let mut mass = DMatrix::<f64>::zeros(nb, nb);
    for q in 0..rule.len() {
        for i in 0..nb {
            for j in 0..nb {
                mass[(i, j)] += rule.weights[q] * tab[(i, q)] * tab[(j, q)];
            }
        }
    }
    let chol = mass.cholesky().unwrap();
    let mut total = 0.0f64;
    for e in 0..mesh.num_elements() {
        let map = mesh.affine_map(e);
        let det = map.det.abs();
        for c in 0..layout.dim() {
            let mut rhs = DVector::zeros(nb);
            let mut norm2 = 0.0;
            for q in 0..rule.len() {
                let v = exact(map.apply(&rule.point(q)).as_slice()).value[c];
                norm2 += rule.weights[q] * v * v;
                for i in 0..nb {
                    rhs[i] += rule.weights[q] * v * tab[(i, q)];
                }
            }
            let coef = chol.solve(&rhs);
            total += det * (norm2 - rhs.dot(&coef));
        }
    }
    total.max(0.0).sqrt()
}

/// Trial block of the least-norm solution of the dense saddle-point system
/// `[A B; Bᵀ 0] [e; x] = [l; 0]` with essential skeleton values lifted.
pub fn dense_least_norm_u(problem: &WaveProblem<f64>, mesh: &Mesh, layout: &Layout) -> DVector<f64> {
    let system = assemble_global(mesh, layout, problem).unwrap();
    let dense = dense_oracle(problem, mesh, layout).unwrap();
    let ny = dense.gram.nrows();
    let nt = system.n_trial;
    let nx = system.n_unknowns();
    let load = &dense.load - &dense.b1 * DVector::from_vec(system.essential_values.clone());
    let mut k = DMatrix::zeros(ny + nx, ny + nx);
    k.view_mut((0, 0), (ny, ny)).copy_from(&dense.gram);
    let mut b = DMatrix::zeros(ny, nx);
    b.columns_mut(0, nt).copy_from(&dense.b0);
    for (f, &s) in system.free_dofs.iter().enumerate() {
        b.column_mut(nt + f).copy_from(&dense.b1.column(s));
    }
    k.view_mut((0, ny), (ny, nx)).copy_from(&b);
    k.view_mut((ny, 0), (nx, ny)).copy_from(&b.transpose());
    let mut rhs = DVector::zeros(ny + nx);
    rhs.rows_mut(0, ny).copy_from(&load);
    let svd = SVD::new(k, true, true);
    let eps = 1e-12 * svd.singular_values.max();
    let x = svd.solve(&rhs, eps).unwrap();
    x.rows(ny, nt).into_owned()
}

/// Distance from element `e` to the line `x - 0.5 = sign · t`; zero when
/// the line crosses the element.
pub fn distance_to_characteristic(mesh: &Mesh, e: usize, sign: f64) -> f64 {
    let vals: Vec<f64> = mesh
        .element_vertices(e)
        .iter()
        .map(|&v| {
            let p = mesh.vertex(v);
            (p[0] - 0.5 - sign * p[1]) / 2f64.sqrt()
        })
        .collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo <= 0.0 && hi >= 0.0 {
        0.0
    } else {
        lo.abs().min(hi.abs())
    }
}

pub fn orders(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}
