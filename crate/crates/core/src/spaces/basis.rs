//! Scalar shape functions on reference elements.
//!
//! Two kinds are provided: equispaced Lagrange bases (continuous skeleton
//! space) and L2-orthonormal Legendre-type bases (broken trial and test
//! spaces, where no inter-element continuity is needed).

use nalgebra::DMatrix;

use super::quadrature::quadrature_rule;
use crate::mesh::ElementFamily;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Lagrange,
    Legendre,
}

/// An equispaced Lagrange node.
///
/// For simplices `index` holds the barycentric multi-index
/// `(alpha_0, .., alpha_D)` summing to the degree; for boxes it holds the
/// per-axis grid index in `0..=degree`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagrangeNode {
    pub index: Vec<usize>,
}

/// Basis values and reference gradients at a set of points.
#[derive(Debug, Clone)]
pub struct Tabulation<T: Real> {
    /// `values[(i, q)]`: function `i` at point `q`.
    pub values: DMatrix<T>,
    /// `grads[k][(i, q)]`: derivative along reference axis `k`.
    pub grads: Vec<DMatrix<T>>,
}

#[derive(Debug, Clone)]
pub struct ReferenceBasis<T: Real> {
    family: ElementFamily,
    dim: usize,
    degree: usize,
    kind: BasisKind,
    nodes: Vec<LagrangeNode>,
    exponents: Vec<Vec<usize>>,
    transform: Option<DMatrix<T>>,
}

/// Number of polynomials of total degree `<= k` in `dim` variables.
pub fn dim_p(dim: usize, k: usize) -> usize {
    (1..=dim).fold(1, |acc, i| acc * (k + i) / i)
}

/// Number of polynomials of degree `<= k` in each of `dim` variables.
pub fn dim_q(dim: usize, k: usize) -> usize {
    (k + 1).pow(dim as u32)
}

fn multi_indices(dim: usize, max_each: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|e: Vec<usize>| {
                (0..=max_each).map(move |k| {
                    let mut v = e.clone();
                    v.push(k);
                    v
                })
            })
            .collect();
    }
    // sort so the lowest axis varies fastest, matching tensor order
    out.sort_by(|a, b| a.iter().rev().cmp(b.iter().rev()));
    out
}

impl<T: Real> ReferenceBasis<T> {
    pub fn lagrange(family: ElementFamily, dim: usize, degree: usize) -> Self {
        assert!(degree >= 1, "Lagrange bases need degree >= 1");
        let nodes = match family {
            ElementFamily::Box => multi_indices(dim, degree)
                .into_iter()
                .map(|index| LagrangeNode { index })
                .collect(),
            ElementFamily::Simplex => multi_indices(dim, degree)
                .into_iter()
                .filter(|a| a.iter().sum::<usize>() <= degree)
                .map(|a| {
                    let mut index = vec![degree - a.iter().sum::<usize>()];
                    index.extend(a);
                    LagrangeNode { index }
                })
                .collect(),
        };
        Self {
            family,
            dim,
            degree,
            kind: BasisKind::Lagrange,
            nodes,
            exponents: Vec::new(),
            transform: None,
        }
    }

    pub fn legendre(family: ElementFamily, dim: usize, degree: usize) -> Self {
        let exponents: Vec<Vec<usize>> = match family {
            ElementFamily::Box => multi_indices(dim, degree),
            ElementFamily::Simplex => {
                let mut e: Vec<Vec<usize>> = multi_indices(dim, degree)
                    .into_iter()
                    .filter(|a| a.iter().sum::<usize>() <= degree)
                    .collect();
                e.sort_by_key(|a| a.iter().sum::<usize>());
                e
            }
        };
        let mut basis = Self {
            family,
            dim,
            degree,
            kind: BasisKind::Legendre,
            nodes: Vec::new(),
            exponents,
            transform: None,
        };
        if family == ElementFamily::Simplex {
            // Legendre products are not orthogonal on the simplex; fix that
            // with inverse Cholesky factors of their mass matrix. A second
            // pass removes the O(cond * eps) residue left on tetrahedra.
            let rule = quadrature_rule::<T>(family, dim, 2 * degree).expect("supported degree");
            for _ in 0..2 {
                let tab = basis.tabulate(&rule.points);
                let mut weighted = tab.values.clone();
                for (q, w) in rule.weights.iter().enumerate() {
                    weighted.column_mut(q).scale_mut(*w);
                }
                let mass = &weighted * tab.values.transpose();
                let chol = mass.cholesky().expect("mass matrix of a basis is SPD");
                let l_inv = chol
                    .l()
                    .try_inverse()
                    .expect("triangular factor is invertible");
                basis.transform = Some(match basis.transform.take() {
                    Some(t) => l_inv * t,
                    None => l_inv,
                });
            }
        }
        basis
    }

    pub fn family(&self) -> ElementFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        match self.kind {
            BasisKind::Lagrange => self.nodes.len(),
            BasisKind::Legendre => self.exponents.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> &[LagrangeNode] {
        &self.nodes
    }

    /// Reference coordinates of a Lagrange node.
    pub fn node_point(&self, i: usize) -> Vec<T> {
        let k = T::from_usize_lossy(self.degree);
        let idx = &self.nodes[i].index;
        match self.family {
            ElementFamily::Box => idx.iter().map(|&j| T::from_usize_lossy(j) / k).collect(),
            ElementFamily::Simplex => idx[1..].iter().map(|&j| T::from_usize_lossy(j) / k).collect(),
        }
    }

    /// Whether Lagrange node `i` vanishes on no facet, i.e. is a bubble node.
    pub fn is_interior_node(&self, i: usize) -> bool {
        let idx = &self.nodes[i].index;
        match self.family {
            ElementFamily::Simplex => idx.iter().all(|&a| a > 0),
            ElementFamily::Box => idx.iter().all(|&a| a > 0 && a < self.degree),
        }
    }

    /// Whether Lagrange node `i` lies on local facet `lf` (mesh numbering).
    pub fn node_on_facet(&self, i: usize, lf: usize) -> bool {
        let idx = &self.nodes[i].index;
        match self.family {
            ElementFamily::Simplex => idx[lf] == 0,
            ElementFamily::Box => {
                let (axis, side) = (lf / 2, lf % 2);
                idx[axis] == if side == 0 { 0 } else { self.degree }
            }
        }
    }

    /// Integer weights of the element vertices reproducing node `i`
    /// (barycentric or multilinear, scaled by `degree^D` for boxes).
    /// Zero weights are dropped; the result identifies the node globally.
    pub fn node_vertex_weights(&self, i: usize) -> Vec<(usize, usize)> {
        let idx = &self.nodes[i].index;
        let k = self.degree;
        match self.family {
            ElementFamily::Simplex => idx
                .iter()
                .enumerate()
                .filter(|(_, &a)| a > 0)
                .map(|(v, &a)| (v, a))
                .collect(),
            ElementFamily::Box => (0..(1usize << self.dim))
                .filter_map(|bits| {
                    let w: usize = (0..self.dim)
                        .map(|a| if (bits >> a) & 1 == 1 { idx[a] } else { k - idx[a] })
                        .product();
                    (w > 0).then_some((bits, w))
                })
                .collect(),
        }
    }

    /// Values and reference gradients at the columns of `points`.
    pub fn tabulate(&self, points: &DMatrix<T>) -> Tabulation<T> {
        assert_eq!(points.nrows(), self.dim, "point dimension mismatch");
        let np = points.ncols();
        let nb = self.len();
        let mut values = DMatrix::zeros(nb, np);
        let mut grads = vec![DMatrix::zeros(nb, np); self.dim];
        for q in 0..np {
            let xi: Vec<T> = points.column(q).iter().copied().collect();
            match self.kind {
                BasisKind::Lagrange => self.eval_lagrange(&xi, q, &mut values, &mut grads),
                BasisKind::Legendre => self.eval_legendre(&xi, q, &mut values, &mut grads),
            }
        }
        if let Some(t) = &self.transform {
            values = t * values;
            for g in grads.iter_mut() {
                *g = t * &*g;
            }
        }
        Tabulation { values, grads }
    }

    fn eval_legendre(&self, xi: &[T], q: usize, values: &mut DMatrix<T>, grads: &mut [DMatrix<T>]) {
        let d = self.dim;
        let table: Vec<(Vec<T>, Vec<T>)> = xi.iter().map(|&x| legendre_01(self.degree, x)).collect();
        for (i, e) in self.exponents.iter().enumerate() {
            let mut v = T::one();
            for k in 0..d {
                v *= table[k].0[e[k]];
            }
            values[(i, q)] = v;
            for (g, grad) in grads.iter_mut().enumerate() {
                let mut dv = T::one();
                for k in 0..d {
                    dv *= if k == g { table[k].1[e[k]] } else { table[k].0[e[k]] };
                }
                grad[(i, q)] = dv;
            }
        }
    }

    fn eval_lagrange(&self, xi: &[T], q: usize, values: &mut DMatrix<T>, grads: &mut [DMatrix<T>]) {
        let d = self.dim;
        let k = self.degree;
        match self.family {
            ElementFamily::Box => {
                let table: Vec<(Vec<T>, Vec<T>)> = xi.iter().map(|&x| lagrange_1d(k, x)).collect();
                for (i, node) in self.nodes.iter().enumerate() {
                    let idx = &node.index;
                    values[(i, q)] = (0..d).fold(T::one(), |acc, a| acc * table[a].0[idx[a]]);
                    for (g, grad) in grads.iter_mut().enumerate() {
                        grad[(i, q)] = (0..d).fold(T::one(), |acc, a| {
                            acc * if a == g { table[a].1[idx[a]] } else { table[a].0[idx[a]] }
                        });
                    }
                }
            }
            ElementFamily::Simplex => {
                let mut lambda = vec![T::one(); d + 1];
                for a in 0..d {
                    lambda[a + 1] = xi[a];
                    lambda[0] -= xi[a];
                }
                let kt = T::from_usize_lossy(k);
                // f[j][a] = prod_{l<a} (k*lambda_j - l)/(l+1) and its derivative
                let factors: Vec<(Vec<T>, Vec<T>)> = lambda
                    .iter()
                    .map(|&l| {
                        let mut f = vec![T::one(); k + 1];
                        let mut df = vec![T::zero(); k + 1];
                        for a in 1..=k {
                            let c = T::from_usize_lossy(a);
                            let term = (kt * l - T::from_usize_lossy(a - 1)) / c;
                            f[a] = f[a - 1] * term;
                            df[a] = df[a - 1] * term + f[a - 1] * kt / c;
                        }
                        (f, df)
                    })
                    .collect();
                for (i, node) in self.nodes.iter().enumerate() {
                    let a = &node.index;
                    let val = (0..=d).fold(T::one(), |acc, j| acc * factors[j].0[a[j]]);
                    values[(i, q)] = val;
                    let dlam: Vec<T> = (0..=d)
                        .map(|j| {
                            (0..=d).fold(T::one(), |acc, l| {
                                acc * if l == j { factors[l].1[a[l]] } else { factors[l].0[a[l]] }
                            })
                        })
                        .collect();
                    for (g, grad) in grads.iter_mut().enumerate() {
                        grad[(i, q)] = dlam[g + 1] - dlam[0];
                    }
                }
            }
        }
    }
}

/// Orthonormal shifted Legendre polynomials on `[0,1]` and derivatives.
fn legendre_01<T: Real>(n: usize, x: T) -> (Vec<T>, Vec<T>) {
    let two = T::lit(2.0);
    let s = two * x - T::one();
    let mut p = vec![T::one(); n + 1];
    let mut dp = vec![T::zero(); n + 1];
    if n >= 1 {
        p[1] = s;
        dp[1] = T::one();
    }
    for k in 1..n {
        let kt = T::from_usize_lossy(k);
        p[k + 1] = ((two * kt + T::one()) * s * p[k] - kt * p[k - 1]) / (kt + T::one());
        dp[k + 1] = dp[k - 1] + (two * kt + T::one()) * p[k];
    }
    for k in 0..=n {
        let c = (two * T::from_usize_lossy(k) + T::one()).sqrt();
        p[k] *= c;
        dp[k] *= c * two;
    }
    (p, dp)
}

/// Equispaced 1D Lagrange polynomials of degree `k` on `[0,1]`.
fn lagrange_1d<T: Real>(k: usize, x: T) -> (Vec<T>, Vec<T>) {
    let nodes: Vec<T> = (0..=k)
        .map(|i| T::from_usize_lossy(i) / T::from_usize_lossy(k))
        .collect();
    let mut v = vec![T::one(); k + 1];
    let mut dv = vec![T::zero(); k + 1];
    for i in 0..=k {
        for j in 0..=k {
            if j == i {
                continue;
            }
            let denom = nodes[i] - nodes[j];
            let term = (x - nodes[j]) / denom;
            dv[i] = dv[i] * term + v[i] / denom;
            v[i] *= term;
        }
    }
    (v, dv)
}
