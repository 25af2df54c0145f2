//! Gauss rules on reference boxes `[0,1]^D` and reference simplices
//! `{xi >= 0, sum xi <= 1}` (collapsed Gauss-Legendre products).

use nalgebra::DMatrix;

use super::SpaceError;
use crate::mesh::ElementFamily;
use crate::scalar::Real;

/// Highest polynomial degree a rule can be requested for.
pub const MAX_EXACTNESS: usize = 60;

#[derive(Debug, Clone)]
pub struct QuadratureRule<T: Real> {
    /// Reference points, one per column.
    pub points: DMatrix<T>,
    pub weights: Vec<T>,
}

impl<T: Real> QuadratureRule<T> {
    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, q: usize) -> Vec<T> {
        self.points.column(q).iter().copied().collect()
    }

    /// Integral of `f` over the reference element.
    pub fn integrate(&self, f: impl Fn(&[T]) -> T) -> T {
        (0..self.len()).fold(T::zero(), |acc, q| acc + self.weights[q] * f(&self.point(q)))
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Rule on the reference element integrating every polynomial of total
/// degree `<= degree` exactly.
pub fn quadrature_rule<T: Real>(
    family: ElementFamily,
    dim: usize,
    degree: usize,
) -> Result<QuadratureRule<T>, SpaceError> {
    if degree > MAX_EXACTNESS {
        return Err(SpaceError::UnsupportedDegree(degree));
    }
    if !(1..=3).contains(&dim) {
        return Err(SpaceError::UnsupportedDimension(dim));
    }
    let (pts, wts) = match family {
        ElementFamily::Box => {
            let n = degree / 2 + 1;
            let (x, w) = gauss_legendre(n);
            tensor(dim, n, |_, i| x[i], |_, i| w[i])
        }
        ElementFamily::Simplex => {
            // collapsed coordinates add up to dim-1 degrees through the Jacobian
            let n = (degree + dim) / 2 + 1;
            let (x, w) = gauss_legendre(n);
            let (u, uw) = tensor(dim, n, |_, i| x[i], |_, i| w[i]);
            let mut pts = Vec::with_capacity(u.len());
            let mut wts = Vec::with_capacity(u.len());
            for (up, w0) in u.iter().zip(uw) {
                let mut xi = vec![0.0; dim];
                let mut scale = 1.0;
                let mut jac = 1.0;
                for k in 0..dim {
                    xi[k] = up[k] * scale;
                    jac *= (1.0 - up[k]).powi((dim - 1 - k) as i32);
                    scale *= 1.0 - up[k];
                }
                pts.push(xi);
                wts.push(w0 * jac);
            }
            (pts, wts)
        }
    };
    let mut points = DMatrix::zeros(dim, pts.len());
    for (q, p) in pts.iter().enumerate() {
        for k in 0..dim {
            points[(k, q)] = T::lit(p[k]);
        }
    }
    Ok(QuadratureRule {
        points,
        weights: wts.into_iter().map(T::lit).collect(),
    })
}

fn tensor(
    dim: usize,
    n: usize,
    x: impl Fn(usize, usize) -> f64,
    w: impl Fn(usize, usize) -> f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let total = n.pow(dim as u32);
    let mut pts = Vec::with_capacity(total);
    let mut wts = Vec::with_capacity(total);
    for lin in 0..total {
        let mut p = vec![0.0; dim];
        let mut wt = 1.0;
        let mut rem = lin;
        for k in 0..dim {
            let i = rem % n;
            rem /= n;
            p[k] = x(k, i);
            wt *= w(k, i);
        }
        pts.push(p);
        wts.push(wt);
    }
    (pts, wts)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact integral of `prod xi_k^{a_k}` over the reference simplex:
    /// `prod a_k! / (D + sum a_k)!`.
    fn simplex_monomial(a: &[usize]) -> f64 {
        let fact = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
        a.iter().map(|&k| fact(k)).product::<f64>() / fact(a.len() + a.iter().sum::<usize>())
    }

    #[test]
    fn triangle_xt() {
        let r = quadrature_rule::<f64>(ElementFamily::Simplex, 2, 2).unwrap();
        assert!((r.integrate(|p| p[0] * p[1]) - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn tet_x_squared() {
        let r = quadrature_rule::<f64>(ElementFamily::Simplex, 3, 3).unwrap();
        assert!((r.integrate(|p| p[0] * p[0]) - 1.0 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn box_volume() {
        for d in 1..=3 {
            for deg in [0, 3, 9] {
                let r = quadrature_rule::<f64>(ElementFamily::Box, d, deg).unwrap();
                assert!((r.integrate(|_| 1.0) - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn simplex_exactness_all_monomials() {
        for dim in 1..=3usize {
            for deg in [4usize, 10, 16] {
                let r = quadrature_rule::<f64>(ElementFamily::Simplex, dim, deg).unwrap();
                let mut exps = vec![vec![]];
                for _ in 0..dim {
                    exps = exps
                        .into_iter()
                        .flat_map(|e: Vec<usize>| (0..=deg).map(move |k| [e.clone(), vec![k]].concat()))
                        .collect();
                }
                for a in exps.iter().filter(|a| a.iter().sum::<usize>() <= deg) {
                    let got = r.integrate(|p| (0..dim).map(|k| p[k].powi(a[k] as i32)).product());
                    let exact = simplex_monomial(a);
                    assert!((got - exact).abs() <= 1e-13 * exact.max(1e-3), "{a:?}");
                }
            }
        }
    }

    #[test]
    fn box_exactness() {
        let r = quadrature_rule::<f64>(ElementFamily::Box, 2, 11).unwrap();
        let got = r.integrate(|p| p[0].powi(11) * p[1].powi(11));
        assert!((got - 1.0 / 144.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_unsupported_degree() {
        assert!(quadrature_rule::<f64>(ElementFamily::Box, 2, MAX_EXACTNESS + 1).is_err());
    }
}
