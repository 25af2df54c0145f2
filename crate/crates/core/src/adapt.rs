//! Bulk marking and the adaptive solve-estimate-mark-refine loop.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::assembly::{assemble_global, AssemblyError};
use crate::estimate::{error_representation, true_error, EstimateError};
use crate::mesh::{MeshError, SpaceTimeMesh};
use crate::problem::WaveProblem;
use crate::scalar::Real;
use crate::solve::{solve_cg, solve_regularized, SolveError, SolveReport, Technique};
use crate::spaces::{SpaceError, SpaceLayout};
use crate::vtk::{export_fields, VtkError};

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("theta must lie in (0, 1], got {0}")]
    BadTheta(f64),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Vtk(#[from] VtkError),
}

/// Smallest set of elements, taken in order of decreasing indicator (ties
/// by index), whose squared indicators sum to at least `theta` of the total.
pub fn mark<T: Real>(indicators: &[T], theta: T) -> Result<Vec<usize>, AdaptError> {
    if !(theta > T::zero() && theta <= T::one()) {
        return Err(AdaptError::BadTheta(theta.as_f64()));
    }
    let total = indicators.iter().fold(T::zero(), |a, b| a + *b);
    if total <= T::zero() {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&a, &b| {
        indicators[b]
            .partial_cmp(&indicators[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let goal = theta * total;
    let mut sum = T::zero();
    let mut marked = Vec::new();
    for i in order {
        marked.push(i);
        sum += indicators[i];
        if sum >= goal {
            break;
        }
    }
    Ok(marked)
}

#[derive(Debug, Clone)]
pub struct AdaptiveOptions<T: Real> {
    pub p: usize,
    /// Test enrichment degree; `p + d + 1` when unset.
    pub m: Option<usize>,
    pub theta: T,
    pub steps: usize,
    pub technique: Technique,
    pub tol: T,
    pub alpha: T,
    /// Write `step_XX.vtk` files here when set.
    pub export_dir: Option<PathBuf>,
}

impl<T: Real> AdaptiveOptions<T> {
    pub fn new(p: usize, theta: T, steps: usize) -> Self {
        Self {
            p,
            m: None,
            theta,
            steps,
            technique: Technique::Cg,
            tol: T::lit(1e-10),
            alpha: T::lit(1e-9),
            export_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub elements: usize,
    pub dofs: usize,
    pub eta: f64,
    pub true_error: Option<f64>,
    pub marked: usize,
    pub iterations: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct AdaptiveHistory<T: Real> {
    pub records: Vec<StepRecord>,
    /// Mesh solved on at each step.
    pub meshes: Vec<SpaceTimeMesh<T>>,
    /// Elements marked at each step.
    pub marked: Vec<Vec<usize>>,
    pub exports: Vec<PathBuf>,
}

/// Solve and estimate once on `mesh`.
pub fn solve_and_estimate<T: Real>(
    problem: &WaveProblem<T>,
    mesh: &SpaceTimeMesh<T>,
    opts: &AdaptiveOptions<T>,
) -> Result<(SpaceLayout<T>, SolveReport<T>, Vec<T>, T, usize), AdaptError> {
    let clock = Instant::now();
    let layout = match opts.m {
        Some(m) => SpaceLayout::build(mesh, opts.p, m)?,
        None => SpaceLayout::with_default_enrichment(mesh, opts.p)?,
    };
    let t_layout = clock.elapsed().as_secs_f64();
    let system = assemble_global(mesh, &layout, problem)?;
    let t_assemble = clock.elapsed().as_secs_f64();
    let sol = match opts.technique {
        Technique::Cg => solve_cg(&system, opts.tol)?,
        Technique::Regularized => solve_regularized(&system, opts.alpha)?,
    };
    let t_solve = clock.elapsed().as_secs_f64();
    let br = error_representation(problem, mesh, &layout, &sol)?;
    log::debug!(
        "layout {t_layout:.2}s, assembly {:.2}s, solve {:.2}s, estimate {:.2}s",
        t_assemble - t_layout,
        t_solve - t_assemble,
        clock.elapsed().as_secs_f64() - t_solve
    );
    let dofs = system.n_unknowns();
    Ok((layout, sol, br.indicators, br.eta, dofs))
}

pub fn adaptive_loop<T: Real>(
    problem: &WaveProblem<T>,
    initial: SpaceTimeMesh<T>,
    opts: &AdaptiveOptions<T>,
) -> Result<AdaptiveHistory<T>, AdaptError> {
    if !(opts.theta > T::zero() && opts.theta <= T::one()) {
        return Err(AdaptError::BadTheta(opts.theta.as_f64()));
    }
    let start = Instant::now();
    let mut history = AdaptiveHistory {
        records: Vec::new(),
        meshes: Vec::new(),
        marked: Vec::new(),
        exports: Vec::new(),
    };
    let mut mesh = initial;
    for step in 0..=opts.steps {
        let (layout, sol, indicators, eta, dofs) = solve_and_estimate(problem, &mesh, opts)?;
        let err = match problem.exact {
            Some(_) => Some(true_error(problem, &mesh, &layout, &sol.u)?.as_f64()),
            None => None,
        };
        let marked = mark(&indicators, opts.theta)?;
        if let Some(dir) = &opts.export_dir {
            let path = dir.join(format!("step_{step:02}.vtk"));
            export_fields(&path, &mesh, &layout, &sol.u, Some(&indicators))?;
            history.exports.push(path);
        }
        log::info!(
            "step {step}: {} elements, {dofs} dofs, eta {:.4e}, {} marked",
            mesh.num_elements(),
            eta.as_f64(),
            marked.len()
        );
        history.records.push(StepRecord {
            step,
            elements: mesh.num_elements(),
            dofs,
            eta: eta.as_f64(),
            true_error: err,
            marked: marked.len(),
            iterations: sol.iterations,
            seconds: start.elapsed().as_secs_f64(),
        });
        let stop = marked.is_empty() || step == opts.steps;
        let next = if stop { None } else { Some(mesh.bisect_refine(&marked)?) };
        history.meshes.push(mesh);
        history.marked.push(marked);
        match next {
            Some(m) => mesh = m,
            None => break,
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::ElementFamily;
    use crate::problem::{adapt2d, conv2d};

    #[test]
    fn marking_examples() {
        assert_eq!(mark(&[4.0, 1.0, 1.0, 1.0, 1.0], 0.5).unwrap(), vec![0]);
        assert_eq!(mark(&[1.0, 1.0, 1.0, 1.0], 0.5).unwrap(), vec![0, 1]);
        assert!(mark(&[0.0, 0.0, 0.0], 0.3).unwrap().is_empty());
        assert!(mark(&[1.0], 0.0).is_err());
        assert!(mark(&[1.0], 1.5).is_err());
        assert_eq!(mark(&[1.0, 3.0, 3.0, 1.0], 0.6).unwrap(), vec![1, 2]);
    }

    proptest::proptest! {
        #[test]
        fn marking_is_minimal_and_greedy(
            ind in proptest::collection::vec(0.0f64..1e3, 1..60),
            theta in 0.05f64..1.0,
        ) {
            let marked = mark(&ind, theta).unwrap();
            let total: f64 = ind.iter().sum();
            proptest::prop_assume!(total > 0.0);
            let sum: f64 = marked.iter().map(|&i| ind[i]).sum();
            let last = ind[*marked.last().unwrap()];
            proptest::prop_assert!(sum >= theta * total * (1.0 - 1e-12));
            proptest::prop_assert!(sum - last < theta * total);
            let low = marked.iter().map(|&i| ind[i]).fold(f64::INFINITY, f64::min);
            for (i, v) in ind.iter().enumerate() {
                if !marked.contains(&i) {
                    proptest::prop_assert!(*v <= low);
                }
            }
        }
    }

    #[test]
    fn marking_is_scale_invariant() {
        let ind = [0.3, 2.0, 0.1, 0.7, 2.0, 0.05];
        let base = mark(&ind, 0.5).unwrap();
        for s in [1e-6, 3.0, 1e5] {
            let scaled: Vec<f64> = ind.iter().map(|v| v * s).collect();
            assert_eq!(mark(&scaled, 0.5).unwrap(), base);
        }
    }

    #[test]
    fn zero_data_terminates_immediately() {
        let mut problem = adapt2d::<f64>();
        problem.initial = std::sync::Arc::new(|_| vec![0.0, 0.0]);
        let mesh = SpaceTimeMesh::build_box_mesh(&[(0.0, 1.0); 2], &[2, 2], ElementFamily::Simplex).unwrap();
        let h = adaptive_loop(&problem, mesh, &AdaptiveOptions::new(1, 0.5, 5)).unwrap();
        assert_eq!(h.records.len(), 1);
        assert_eq!(h.records[0].eta, 0.0);
        assert_eq!(h.records[0].marked, 0);
    }

    #[test]
    fn short_loop_refines_and_records() {
        let problem = conv2d::<f64>(1.0);
        let mesh = SpaceTimeMesh::build_box_mesh(&[(0.0, 1.0); 2], &[2, 2], ElementFamily::Simplex).unwrap();
        let h = adaptive_loop(&problem, mesh, &AdaptiveOptions::new(1, 0.5, 3)).unwrap();
        assert_eq!(h.records.len(), 4);
        for w in h.records.windows(2) {
            assert!(w[1].elements > w[0].elements);
        }
        let last = h.records.last().unwrap();
        assert!(last.eta < h.records[0].eta);
        assert!(last.true_error.unwrap() < h.records[0].true_error.unwrap());
        // re-estimate on a stored mesh
        let opts = AdaptiveOptions::new(1, 0.5, 3);
        let (_, _, _, eta, _) = solve_and_estimate(&problem, &h.meshes[2], &opts).unwrap();
        assert!((eta - h.records[2].eta).abs() <= 1e-12 * eta);
    }
}
