//! The first-order acoustic wave system, its material variant and the
//! experiment presets.
//!
//! The operator is `A u = sum_s M_s ∂_s u` with symmetric coefficient
//! matrices `M_t = diag(κ_q I_d, κ_μ)` and `M_{x_i}` coupling `q_i` and `μ`
//! with weight `-c`. Without materials `κ_q = κ_μ = 1`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mesh::ElementFamily;
use crate::scalar::Real;

pub type VectorField<T> = Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;
pub type JetField<T> = Arc<dyn Fn(&[T]) -> FieldJet<T> + Send + Sync>;
pub type RegionMap<T> = Arc<dyn Fn(&[T]) -> usize + Send + Sync>;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("jet has {got} components, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("normal has length {0}, expected a unit vector")]
    NonUnitNormal(f64),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("problem `{0}` has no exact solution")]
    NoExactSolution(String),
}

/// Value and spacetime gradient of a vector field at one point:
/// `grad[(c, s)] = ∂_s u_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldJet<T: Real> {
    pub value: DVector<T>,
    pub grad: DMatrix<T>,
}

impl<T: Real> FieldJet<T> {
    pub fn zero(dim: usize) -> Self {
        Self {
            value: DVector::zeros(dim),
            grad: DMatrix::zeros(dim, dim),
        }
    }
}

/// Diagonal material coefficients of one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material<T> {
    pub kappa_q: T,
    pub kappa_mu: T,
}

impl<T: Real> Default for Material<T> {
    fn default() -> Self {
        Self {
            kappa_q: T::one(),
            kappa_mu: T::one(),
        }
    }
}

#[derive(Clone)]
pub struct WaveProblem<T: Real> {
    pub name: String,
    pub spatial_dim: usize,
    pub wave_speed: T,
    /// Per-region materials; empty means the plain wave operator.
    pub materials: Vec<Material<T>>,
    pub region_of: Option<RegionMap<T>>,
    /// Spacetime box `(x.., t)`; the last extent is `(0, T)`.
    pub extents: Vec<(T, T)>,
    /// `(g, f)` stacked as a `D`-vector.
    pub source: VectorField<T>,
    pub exact: Option<JetField<T>>,
    /// `(q, μ)` at `t = 0`.
    pub initial: VectorField<T>,
    /// `μ` on the lateral boundary.
    pub boundary_mu: Arc<dyn Fn(&[T]) -> T + Send + Sync>,
    /// Suggested coarse mesh cell counts per axis.
    pub coarse_counts: Vec<usize>,
}

impl<T: Real> std::fmt::Debug for WaveProblem<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WaveProblem")
            .field("name", &self.name)
            .field("spatial_dim", &self.spatial_dim)
            .field("wave_speed", &self.wave_speed)
            .field("materials", &self.materials)
            .field("extents", &self.extents)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

pub const PRESET_NAMES: [&str; 6] = ["conv2d", "adapt2d", "material2d", "conv3d", "adapt3d", "rotating3d"];

impl<T: Real> WaveProblem<T> {
    pub fn dim(&self) -> usize {
        self.spatial_dim + 1
    }

    pub fn final_time(&self) -> T {
        self.extents[self.spatial_dim].1
    }

    pub fn material(&self, region: usize) -> Material<T> {
        self.materials.get(region).copied().unwrap_or_default()
    }

    /// Coefficient matrix `M_s` of `∂_s` for a region: `(A u)_r = sum_{s,c} M_s[r][c] ∂_s u_c`.
    pub fn coefficient_matrix(&self, s: usize, region: usize) -> DMatrix<T> {
        let d = self.spatial_dim;
        let mat = self.material(region);
        let mut m = DMatrix::zeros(d + 1, d + 1);
        if s == d {
            for i in 0..d {
                m[(i, i)] = mat.kappa_q;
            }
            m[(d, d)] = mat.kappa_mu;
        } else {
            m[(s, d)] = -self.wave_speed;
            m[(d, s)] = -self.wave_speed;
        }
        m
    }

    /// `A u` at a point for the given region.
    pub fn apply_operator_in(&self, jet: &FieldJet<T>, region: usize) -> Result<DVector<T>, ProblemError> {
        let dim = self.dim();
        if jet.value.len() != dim || jet.grad.nrows() != dim || jet.grad.ncols() != dim {
            return Err(ProblemError::DimensionMismatch {
                expected: dim,
                got: jet.value.len(),
            });
        }
        let mut out = DVector::zeros(dim);
        for s in 0..dim {
            out += self.coefficient_matrix(s, region) * jet.grad.column(s);
        }
        Ok(out)
    }

    /// `A u` with the region taken from the problem's region map.
    pub fn apply_operator(&self, point: &[T], jet: &FieldJet<T>) -> Result<DVector<T>, ProblemError> {
        let region = self.region_of.as_ref().map_or(0, |r| r(point));
        self.apply_operator_in(jet, region)
    }

    /// `D_{x,t} = sum_s n_s M_s` for a unit spacetime normal.
    pub fn facet_coupling_matrix(&self, normal: &[T], region: usize) -> Result<DMatrix<T>, ProblemError> {
        let dim = self.dim();
        if normal.len() != dim {
            return Err(ProblemError::DimensionMismatch {
                expected: dim,
                got: normal.len(),
            });
        }
        let len = normal.iter().fold(T::zero(), |a, x| a + *x * *x).sqrt();
        if (len - T::one()).abs() > T::lit(1e-12) {
            return Err(ProblemError::NonUnitNormal(len.as_f64()));
        }
        let mut m = DMatrix::zeros(dim, dim);
        for (s, &n) in normal.iter().enumerate() {
            m += self.coefficient_matrix(s, region) * n;
        }
        Ok(m)
    }

    /// `(g, f)` obtained by applying the operator to the exact solution.
    pub fn manufacture_sources(&self) -> Result<VectorField<T>, ProblemError> {
        let exact = self
            .exact
            .clone()
            .ok_or_else(|| ProblemError::NoExactSolution(self.name.clone()))?;
        let me = self.clone();
        Ok(Arc::new(move |x: &[T]| {
            me.apply_operator(x, &exact(x))
                .expect("exact solution has problem dimension")
                .iter()
                .copied()
                .collect()
        }))
    }

    /// Largest relative deviation between the stored sources and the
    /// operator applied to the exact solution over the given points.
    pub fn source_consistency(&self, points: &[Vec<T>]) -> Result<T, ProblemError> {
        let manufactured = self.manufacture_sources()?;
        let mut worst = T::zero();
        for x in points {
            let a = (self.source)(x);
            let b = manufactured(x);
            let scale = b.iter().fold(T::one(), |m, v| m.max(v.abs()));
            for (u, v) in a.iter().zip(&b) {
                worst = worst.max((*u - *v).abs() / scale);
            }
        }
        Ok(worst)
    }

    /// Replace the sources by manufactured ones when the stored formulas
    /// disagree with the exact solution beyond `tol`.
    pub fn ensure_consistent_sources(mut self, points: &[Vec<T>], tol: T) -> Self {
        if let Ok(dev) = self.source_consistency(points) {
            if dev > tol {
                log::info!(
                    "{}: stored sources deviate by {:.3e}; regenerating from exact solution",
                    self.name,
                    dev.as_f64()
                );
                self.source = self.manufacture_sources().expect("exact solution present");
            }
        }
        self
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    /// Default element family the preset was run on.
    pub fn default_family(&self) -> ElementFamily {
        ElementFamily::Simplex
    }
}

/// Fourth-order central difference jet of a vector field.
pub fn finite_difference_jet<T: Real>(
    field: &dyn Fn(&[T]) -> Vec<T>,
    point: &[T],
    step: T,
) -> FieldJet<T> {
    let dim = point.len();
    let value = DVector::from_vec(field(point));
    let n = value.len();
    let mut grad = DMatrix::zeros(n, dim);
    let shifted = |s: usize, h: T| -> Vec<T> {
        let mut p = point.to_vec();
        p[s] += h;
        field(&p)
    };
    let eight = T::lit(8.0);
    let twelve = T::lit(12.0);
    for s in 0..dim {
        let (m2, m1, p1, p2) = (
            shifted(s, -step - step),
            shifted(s, -step),
            shifted(s, step),
            shifted(s, step + step),
        );
        for c in 0..n {
            grad[(c, s)] = (m2[c] - eight * m1[c] + eight * p1[c] - p2[c]) / (twelve * step);
        }
    }
    FieldJet { value, grad }
}

fn jet2<T: Real>(value: [T; 2], grad: [[T; 2]; 2]) -> FieldJet<T> {
    FieldJet {
        value: DVector::from_column_slice(&value),
        grad: DMatrix::from_fn(2, 2, |c, s| grad[c][s]),
    }
}

fn jet3<T: Real>(value: [T; 3], grad: [[T; 3]; 3]) -> FieldJet<T> {
    FieldJet {
        value: DVector::from_column_slice(&value),
        grad: DMatrix::from_fn(3, 3, |c, s| grad[c][s]),
    }
}

fn zero_field<T: Real>(dim: usize) -> VectorField<T> {
    Arc::new(move |_| vec![T::zero(); dim])
}

/// Initial data and lateral data read off an exact solution.
fn data_from_exact<T: Real>(exact: &JetField<T>) -> (VectorField<T>, Arc<dyn Fn(&[T]) -> T + Send + Sync>) {
    let e1 = exact.clone();
    let e2 = exact.clone();
    (
        Arc::new(move |x| e1(x).value.iter().copied().collect()),
        Arc::new(move |x| {
            let v = e2(x).value;
            v[v.len() - 1]
        }),
    )
}

/// Look up a named experiment.
pub fn preset<T: Real>(name: &str) -> Result<WaveProblem<T>, ProblemError> {
    match name {
        "conv2d" => Ok(conv2d(T::one())),
        "adapt2d" => Ok(adapt2d()),
        "material2d" => Ok(material2d()),
        "conv3d" => Ok(conv3d()),
        "adapt3d" => Ok(adapt3d()),
        "rotating3d" => Ok(rotating3d()),
        other => Err(ProblemError::UnknownPreset(other.to_string())),
    }
}

/// Standing wave on `(0,1)^2` built from `φ = sin(πx) sin²(πt)`.
pub fn conv2d<T: Real>(c: T) -> WaveProblem<T> {
    let pi = T::pi();
    let two = T::lit(2.0);
    let exact: JetField<T> = Arc::new(move |x: &[T]| {
        let (sx, cx) = ((pi * x[0]).sin(), (pi * x[0]).cos());
        let (st, ct) = ((pi * x[1]).sin(), (pi * x[1]).cos());
        let s2t = (two * pi * x[1]).sin();
        let c2t = (two * pi * x[1]).cos();
        jet2(
            [c * pi * cx * st * st, pi * sx * s2t],
            [
                [-c * pi * pi * sx * st * st, c * pi * cx * two * pi * st * ct],
                [pi * pi * cx * s2t, two * pi * pi * sx * c2t],
            ],
        )
    });
    let source: VectorField<T> = Arc::new(move |x: &[T]| {
        let st = (pi * x[1]).sin();
        vec![
            T::zero(),
            pi * pi * (pi * x[0]).sin() * (two * (two * pi * x[1]).cos() + c * c * st * st),
        ]
    });
    let (initial, boundary_mu) = data_from_exact(&exact);
    WaveProblem {
        name: "conv2d".into(),
        spatial_dim: 1,
        wave_speed: c,
        materials: Vec::new(),
        region_of: None,
        extents: vec![(T::zero(), T::one()); 2],
        source,
        exact: Some(exact),
        initial,
        boundary_mu,
        coarse_counts: vec![4, 4],
    }
}

/// Polynomial solution `u_q = t x`, `u_μ = t x (1 - x)` on `(0,1)^2`
/// with manufactured sources; lies in the discrete spaces for `p >= 2`.
pub fn polynomial2d<T: Real>(c: T) -> WaveProblem<T> {
    let exact: JetField<T> = Arc::new(move |x: &[T]| {
        let (xs, t) = (x[0], x[1]);
        let one = T::one();
        let two = T::lit(2.0);
        jet2([t * xs, t * xs * (one - xs)], [[t, xs], [t * (one - two * xs), xs * (one - xs)]])
    });
    let (initial, boundary_mu) = data_from_exact(&exact);
    let mut p = WaveProblem {
        name: "poly2d".into(),
        spatial_dim: 1,
        wave_speed: c,
        materials: Vec::new(),
        region_of: None,
        extents: vec![(T::zero(), T::one()); 2],
        source: zero_field(2),
        exact: Some(exact),
        initial,
        boundary_mu,
        coarse_counts: vec![2, 2],
    };
    p.source = p.manufacture_sources().expect("exact solution present");
    p
}

/// Pulse launched from `x = 1/2` reflecting off the Dirichlet boundary.
pub fn adapt2d<T: Real>() -> WaveProblem<T> {
    let phi0 = |x: T| (T::lit(-1000.0) * (x - T::lit(0.5)).powi(2)).exp();
    WaveProblem {
        name: "adapt2d".into(),
        spatial_dim: 1,
        wave_speed: T::one(),
        materials: Vec::new(),
        region_of: None,
        extents: vec![(T::zero(), T::one()); 2],
        source: zero_field(2),
        exact: None,
        initial: Arc::new(move |x: &[T]| vec![phi0(x[0]), -phi0(x[0])]),
        boundary_mu: Arc::new(|_| T::zero()),
        coarse_counts: vec![4, 4],
    }
}

/// Two-material slab with matched impedance: `κ = 2` left of `x = 1/2`
/// and `κ = 1/2` right of it.
pub fn material2d<T: Real>() -> WaveProblem<T> {
    let pulse = |x: T| (T::lit(-5000.0) * (x - T::lit(0.2)).powi(2)).exp();
    let half = T::lit(0.5);
    WaveProblem {
        name: "material2d".into(),
        spatial_dim: 1,
        wave_speed: T::one(),
        materials: vec![
            Material {
                kappa_q: T::lit(2.0),
                kappa_mu: T::lit(2.0),
            },
            Material {
                kappa_q: half,
                kappa_mu: half,
            },
        ],
        region_of: Some(Arc::new(move |x: &[T]| usize::from(x[0] > half))),
        extents: vec![(T::zero(), T::one()), (T::zero(), T::lit(1.4))],
        source: zero_field(2),
        exact: None,
        initial: Arc::new(move |x: &[T]| vec![pulse(x[0]), -pulse(x[0])]),
        boundary_mu: Arc::new(|_| T::zero()),
        coarse_counts: vec![10, 14],
    }
}

/// `φ = sin(πx) sin(πy) t²` on `(0,1)^3`.
pub fn conv3d<T: Real>() -> WaveProblem<T> {
    let pi = T::pi();
    let two = T::lit(2.0);
    let exact: JetField<T> = Arc::new(move |p: &[T]| {
        let (x, y, t) = (p[0], p[1], p[2]);
        let (sx, cx) = ((pi * x).sin(), (pi * x).cos());
        let (sy, cy) = ((pi * y).sin(), (pi * y).cos());
        let t2 = t * t;
        jet3(
            [pi * cx * sy * t2, pi * cy * sx * t2, two * sx * sy * t],
            [
                [-pi * pi * sx * sy * t2, pi * pi * cx * cy * t2, two * pi * cx * sy * t],
                [pi * pi * cx * cy * t2, -pi * pi * sx * sy * t2, two * pi * cy * sx * t],
                [two * pi * cx * sy * t, two * pi * sx * cy * t, two * sx * sy],
            ],
        )
    });
    let source: VectorField<T> = Arc::new(move |p: &[T]| {
        let f = (pi * p[0]).sin() * (pi * p[1]).sin() * (two + two * pi * pi * p[2] * p[2]);
        vec![T::zero(), T::zero(), f]
    });
    let (initial, boundary_mu) = data_from_exact(&exact);
    WaveProblem {
        name: "conv3d".into(),
        spatial_dim: 2,
        wave_speed: T::one(),
        materials: Vec::new(),
        region_of: None,
        extents: vec![(T::zero(), T::one()); 3],
        source,
        exact: Some(exact),
        initial,
        boundary_mu,
        coarse_counts: vec![1, 1, 1],
    }
}

/// Gaussian pulse travelling diagonally with speed `c = 1/2`.
pub fn adapt3d<T: Real>() -> WaveProblem<T> {
    let c = T::lit(0.5);
    let (x0, y0) = (T::lit(0.2), T::lit(0.2));
    let a = T::lit(200.0);
    let two = T::lit(2.0);
    let exact: JetField<T> = Arc::new(move |p: &[T]| {
        let xx = p[0] - x0 - c * p[2];
        let yy = p[1] - y0 - c * p[2];
        let e = (-a * (xx * xx + yy * yy)).exp();
        let dx = -two * a * xx * e;
        let dy = -two * a * yy * e;
        let dt = two * a * c * (xx + yy) * e;
        jet3([e, e, -e], [[dx, dy, dt], [dx, dy, dt], [-dx, -dy, -dt]])
    });
    let source: VectorField<T> = Arc::new(move |p: &[T]| {
        let xx = p[0] - x0 - c * p[2];
        let yy = p[1] - y0 - c * p[2];
        let e = (-a * (xx * xx + yy * yy)).exp();
        let k = T::lit(400.0) * c * e;
        vec![k * yy, k * xx, T::zero()]
    });
    let (initial, boundary_mu) = data_from_exact(&exact);
    WaveProblem {
        name: "adapt3d".into(),
        spatial_dim: 2,
        wave_speed: c,
        materials: Vec::new(),
        region_of: None,
        extents: vec![(T::zero(), T::one()); 3],
        source,
        exact: Some(exact),
        initial,
        boundary_mu,
        coarse_counts: vec![2, 2, 2],
    }
}

/// Pulse rotating about the time axis on `(-4,4)^2 × (0,8)`; sources are
/// manufactured from the exact solution.
pub fn rotating3d<T: Real>() -> WaveProblem<T> {
    let c = T::one();
    let w = T::lit(PI / 2.0);
    let a = T::lit(20.0);
    let two = T::lit(2.0);
    let exact: JetField<T> = Arc::new(move |p: &[T]| {
        let (x, y, t) = (p[0], p[1], p[2]);
        let xx = x - c * (w * t).cos();
        let yy = y + c * (w * t).sin();
        let e = (-a * (xx * xx + yy * yy)).exp();
        let dx = -two * a * xx * e;
        let dy = -two * a * yy * e;
        // d/dt xx = c w sin(wt), d/dt yy = c w cos(wt)
        let dt = -two * a * (xx * c * w * (w * t).sin() + yy * c * w * (w * t).cos()) * e;
        jet3([-e, -e, e], [[-dx, -dy, -dt], [-dx, -dy, -dt], [dx, dy, dt]])
    });
    let (initial, boundary_mu) = data_from_exact(&exact);
    let mut p = WaveProblem {
        name: "rotating3d".into(),
        spatial_dim: 2,
        wave_speed: c,
        materials: Vec::new(),
        region_of: None,
        extents: vec![(T::lit(-4.0), T::lit(4.0)), (T::lit(-4.0), T::lit(4.0)), (T::zero(), T::lit(8.0))],
        source: zero_field(3),
        exact: Some(exact),
        initial,
        boundary_mu,
        coarse_counts: vec![4, 4, 4],
    };
    p.source = p.manufacture_sources().expect("exact solution present");
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_points(p: &WaveProblem<f64>, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| p.extents.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect())
            .collect()
    }

    #[test]
    fn operator_examples() {
        let p = conv2d::<f64>(1.0);
        let zero = FieldJet::<f64> {
            value: DVector::from_vec(vec![3.0, -1.0]),
            grad: DMatrix::zeros(2, 2),
        };
        assert_eq!(p.apply_operator_in(&zero, 0).unwrap(), DVector::zeros(2));
        // u = (t, 0)
        let j = jet2([0.3, 0.0], [[0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(p.apply_operator_in(&j, 0).unwrap().as_slice(), &[1.0, 0.0]);
        // c = 2, u = (0, x): first component -2, second 0
        let p2 = conv2d::<f64>(2.0);
        let j = jet2([0.0, 0.3], [[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(p2.apply_operator_in(&j, 0).unwrap().as_slice(), &[-2.0, 0.0]);
        assert!(p.apply_operator_in(&FieldJet::zero(3), 0).is_err());
    }

    #[test]
    fn coupling_matrix_examples() {
        let p = conv2d::<f64>(1.0);
        assert_eq!(p.facet_coupling_matrix(&[0.0, 1.0], 0).unwrap(), DMatrix::identity(2, 2));
        let s = 0.5f64.sqrt();
        let m = p.facet_coupling_matrix(&[s, s], 0).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[s, -s, -s, s]);
        assert!((&m - expect).abs().max() < 1e-15);
        assert!(m.determinant().abs() < 1e-15);

        let p3 = conv3d::<f64>();
        let m = p3.facet_coupling_matrix(&[1.0, 0.0, 0.0], 0).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(m, expect);
        let mut eig: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((eig[0] + 1.0).abs() < 1e-14 && eig[1].abs() < 1e-14 && (eig[2] - 1.0).abs() < 1e-14);
        assert!(matches!(
            p.facet_coupling_matrix(&[1.0, 1.0], 0),
            Err(ProblemError::NonUnitNormal(_))
        ));
    }

    #[test]
    fn coupling_determinant_law() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        for (d, c) in [(1usize, 1.0f64), (1, 2.0), (2, 1.0), (2, 0.5)] {
            let p = if d == 1 { conv2d::<f64>(c) } else { WaveProblem { wave_speed: c, ..conv3d::<f64>() } };
            for _ in 0..100 {
                let mut n: Vec<f64> = (0..=d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let len = n.iter().map(|x| x * x).sum::<f64>().sqrt();
                n.iter_mut().for_each(|x| *x /= len);
                let det = p.facet_coupling_matrix(&n, 0).unwrap().determinant();
                let nt = n[d];
                let nx2: f64 = n[..d].iter().map(|x| x * x).sum();
                let law = (nt * nt - c * c * nx2) * nt.powi(d as i32 - 1);
                assert!((det - law).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn manufactured_source_examples() {
        let p = conv2d::<f64>(1.0);
        let f = p.manufacture_sources().unwrap()(&[0.5, 0.25]);
        assert!((f[1] - PI * PI / 2.0).abs() < 1e-12);
        assert!(f[0].abs() < 1e-12);

        let p3 = conv3d::<f64>();
        let f = p3.manufacture_sources().unwrap()(&[0.5, 0.5, 1.0]);
        assert!((f[2] - (2.0 + 2.0 * PI * PI)).abs() < 1e-12);

        let mut zero = conv2d::<f64>(1.0);
        zero.exact = Some(Arc::new(|_| FieldJet::zero(2)));
        assert_eq!(zero.manufacture_sources().unwrap()(&[0.3, 0.7]), vec![0.0, 0.0]);
        assert!(adapt2d::<f64>().manufacture_sources().is_err());
    }

    #[test]
    fn stored_sources_are_consistent() {
        for name in ["conv2d", "conv3d", "adapt3d", "rotating3d"] {
            let p = preset::<f64>(name).unwrap();
            let pts = random_points(&p, 100, 2);
            assert!(p.source_consistency(&pts).unwrap() < 1e-8, "{name}");
        }
        let p = polynomial2d::<f64>(1.0);
        assert!(p.source_consistency(&random_points(&p, 100, 3)).unwrap() < 1e-8);
    }

    #[test]
    fn closed_form_jets_match_finite_differences() {
        for name in ["conv2d", "conv3d", "adapt3d", "rotating3d"] {
            let p = preset::<f64>(name).unwrap();
            let exact = p.exact.clone().unwrap();
            let value = |x: &[f64]| exact(x).value.iter().copied().collect::<Vec<_>>();
            for x in random_points(&p, 20, 9) {
                let fd = finite_difference_jet(&value, &x, 1e-4);
                let cf = exact(&x);
                let scale = cf.grad.abs().max().max(1.0);
                assert!((fd.grad - cf.grad).abs().max() < 1e-6 * scale, "{name}");
            }
        }
    }

    #[test]
    fn preset_examples() {
        let p = preset::<f64>("conv2d").unwrap();
        let u = p.exact.as_ref().unwrap()(&[0.5, 0.5]);
        assert!(u.value[1].abs() < 1e-15);

        let m = preset::<f64>("material2d").unwrap();
        assert_eq!(m.final_time(), 1.4);
        let region = m.region_of.as_ref().unwrap();
        assert_eq!(m.material(region(&[0.25, 0.3])), Material { kappa_q: 2.0, kappa_mu: 2.0 });
        assert_eq!(m.material(region(&[0.75, 0.3])), Material { kappa_q: 0.5, kappa_mu: 0.5 });

        let a = preset::<f64>("adapt2d").unwrap();
        assert_eq!((a.source)(&[0.3, 0.4]), vec![0.0, 0.0]);
        let ic = (a.initial)(&[0.5, 0.0]);
        assert_eq!(ic, vec![1.0, -1.0]);
        assert!(preset::<f64>("nope").is_err());
    }

    #[test]
    fn rotating_pulse_starts_at_unit_radius() {
        let p = preset::<f64>("rotating3d").unwrap();
        let u = p.exact.as_ref().unwrap()(&[1.0, 0.0, 0.0]);
        assert_eq!(u.value.as_slice(), &[-1.0, -1.0, 1.0]);
        // two full turns by t = 8
        let u = p.exact.as_ref().unwrap()(&[1.0, 0.0, 8.0]);
        assert!((u.value[2] - 1.0).abs() < 1e-12);
    }
}
