//! Kernel families `{phi_k}` with values and gradients.
//!
//! Kernels are indexed from zero. For the one-dimensional polynomial families
//! index `k` is the degree; the Gaussian family stores order-0 kernels first,
//! then order-1, one per center, with the constant kernel (if any) last.
//! `Poly2d` is graded: total degree `s = 0, 1, ...`, and within a degree the
//! power of the second coordinate increases (`1, x, y, x^2, xy, y^2, ...`).

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, PointSet};
use crate::quadrature::QuadratureGrid;

/// Gaussian center placement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Centers {
    List(Vec<f64>),
    /// `count` equidistant points on `[lower, upper]`, endpoints included.
    Equidistant { lower: f64, upper: f64, count: usize },
}

impl Centers {
    pub fn points(&self) -> Vec<f64> {
        match self {
            Centers::List(v) => v.clone(),
            Centers::Equidistant {
                lower,
                upper,
                count,
            } => match count {
                0 => vec![],
                1 => vec![0.5 * (lower + upper)],
                n => (0..*n)
                    .map(|j| lower + (upper - lower) * j as f64 / (*n - 1) as f64)
                    .collect(),
            },
        }
    }
}

fn default_orders() -> Vec<u32> {
    vec![0, 1]
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    /// `x^k`, `k = 0..=degree`.
    Monomial { degree: usize },
    /// `u^k` with `u = (2x - (a + b)) / (b - a)` on `[a, b]`.
    NormalizedMonomial { degree: usize },
    /// `T_k(u)` with the same affine map, unnormalized.
    Chebyshev { degree: usize },
    /// `x^i exp(-(x - rho_j)^2 / sigma^2) / sqrt(2 pi sigma^2)`.
    GaussianMonomial {
        centers: Centers,
        sigma: f64,
        #[serde(default = "default_orders")]
        orders: Vec<u32>,
        #[serde(default = "yes")]
        include_constant: bool,
    },
    /// `x^k y^l` with `k + l <= max_degree`.
    Poly2d { max_degree: usize },
}

impl BasisSpec {
    /// The 15-kernel Gaussian family used for the one-dimensional interacting system.
    pub fn gaussian_default() -> Self {
        BasisSpec::GaussianMonomial {
            centers: Centers::Equidistant {
                lower: -1.5,
                upper: 1.5,
                count: 7,
            },
            sigma: 2.0 / 3.0,
            orders: vec![0, 1],
            include_constant: true,
        }
    }
}

#[derive(Clone, Debug)]
enum Family {
    Monomial { degree: usize },
    Affine { degree: usize, chebyshev: bool, center: f64, scale: f64 },
    Gaussian { centers: Vec<f64>, sigma: f64, orders: Vec<u32>, constant: bool, norm: f64 },
    Poly2d { exponents: Vec<(u32, u32)> },
}

#[derive(Clone, Debug)]
pub struct KernelBasis {
    spec: BasisSpec,
    domain: BoxDomain,
    family: Family,
    size: usize,
}

/// Values and gradients of every kernel at a set of points.
#[derive(Clone, Debug)]
pub struct EvalTable {
    pub points: PointSet,
    /// `n x M`, `values[(p, k)] = phi_k(points[p])`.
    pub values: DMatrix<f64>,
    /// Flattened `n x M x d`.
    gradients: Vec<f64>,
    dim: usize,
    size: usize,
}

impl EvalTable {
    pub fn gradient(&self, p: usize, k: usize, axis: usize) -> f64 {
        self.gradients[(p * self.size + k) * self.dim + axis]
    }

    pub fn gradients(&self) -> &[f64] {
        &self.gradients
    }
}

pub fn make_basis(spec: &BasisSpec, domain: &BoxDomain) -> Result<KernelBasis> {
    let one_d = |name: &str| -> Result<()> {
        if domain.dim() != 1 {
            return Err(Error::InvalidBasis(format!(
                "{name} kernels need a one-dimensional domain, got d = {}",
                domain.dim()
            )));
        }
        Ok(())
    };
    let (family, size) = match spec {
        BasisSpec::Monomial { degree } => {
            one_d("monomial")?;
            (Family::Monomial { degree: *degree }, degree + 1)
        }
        BasisSpec::NormalizedMonomial { degree } | BasisSpec::Chebyshev { degree } => {
            one_d("polynomial")?;
            let (a, b) = (domain.lower()[0], domain.upper()[0]);
            (
                Family::Affine {
                    degree: *degree,
                    chebyshev: matches!(spec, BasisSpec::Chebyshev { .. }),
                    center: 0.5 * (a + b),
                    scale: 2.0 / (b - a),
                },
                degree + 1,
            )
        }
        BasisSpec::GaussianMonomial {
            centers,
            sigma,
            orders,
            include_constant,
        } => {
            one_d("Gaussian")?;
            if !(sigma.is_finite() && *sigma > 0.0) {
                return Err(Error::InvalidBasis(format!("sigma must be positive, got {sigma}")));
            }
            let centers = centers.points();
            if let Some(c) = centers.iter().find(|c| !domain.contains(&[**c], 1e-12)) {
                return Err(Error::InvalidBasis(format!("center {c} lies outside the domain")));
            }
            let mut orders = orders.clone();
            orders.sort_unstable();
            orders.dedup();
            let size = centers.len() * orders.len() + usize::from(*include_constant);
            (
                Family::Gaussian {
                    centers,
                    sigma: *sigma,
                    orders,
                    constant: *include_constant,
                    norm: 1.0 / (2.0 * PI * sigma * sigma).sqrt(),
                },
                size,
            )
        }
        BasisSpec::Poly2d { max_degree } => {
            if domain.dim() != 2 {
                return Err(Error::InvalidBasis(format!(
                    "poly2d kernels need a two-dimensional domain, got d = {}",
                    domain.dim()
                )));
            }
            let mut exponents = Vec::new();
            for s in 0..=*max_degree as u32 {
                for l in 0..=s {
                    exponents.push((s - l, l));
                }
            }
            let size = exponents.len();
            (Family::Poly2d { exponents }, size)
        }
    };
    if size == 0 {
        return Err(Error::InvalidBasis("empty kernel family".into()));
    }
    let basis = KernelBasis {
        spec: spec.clone(),
        domain: domain.clone(),
        family,
        size,
    };
    let n = if domain.dim() == 1 { 401 } else { 61 };
    let cond = basis.gram_condition(&QuadratureGrid::trapezoid(domain, n))?;
    if cond > 1e12 {
        log::warn!("kernel Gram matrix is ill-conditioned (condition estimate {cond:.3e})");
    }
    Ok(basis)
}

fn powi(x: f64, k: u32) -> f64 {
    x.powi(k as i32)
}

impl KernelBasis {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    /// Index of the kernel that is identically one, if the family has one.
    pub fn constant_index(&self) -> Option<usize> {
        match &self.family {
            Family::Monomial { .. } | Family::Affine { .. } | Family::Poly2d { .. } => Some(0),
            Family::Gaussian { constant, .. } => constant.then(|| self.size - 1),
        }
    }

    /// Exponent pair `(k, l)` of kernel `idx` for the bivariate family.
    pub fn exponents(&self, idx: usize) -> Option<(u32, u32)> {
        match &self.family {
            Family::Poly2d { exponents } => exponents.get(idx).copied(),
            _ => None,
        }
    }

    /// Short human-readable kernel labels, used for CSV headers.
    pub fn labels(&self) -> Vec<String> {
        match &self.family {
            Family::Poly2d { exponents } => {
                exponents.iter().map(|(k, l)| format!("m_{k}_{l}")).collect()
            }
            _ => (1..=self.size).map(|k| format!("m_{k}")).collect(),
        }
    }

    /// Values into `values` (length `M`) and, optionally, gradients into
    /// `grads` (length `M * d`, kernel-major). No domain check.
    pub fn eval_point(&self, x: &[f64], values: &mut [f64], mut grads: Option<&mut [f64]>) {
        debug_assert_eq!(values.len(), self.size);
        match &self.family {
            Family::Monomial { degree } => {
                let x = x[0];
                let mut p = 1.0;
                for k in 0..=*degree {
                    values[k] = p;
                    if let Some(g) = grads.as_deref_mut() {
                        g[k] = if k == 0 { 0.0 } else { k as f64 * values[k - 1] };
                    }
                    p *= x;
                }
            }
            Family::Affine {
                degree,
                chebyshev,
                center,
                scale,
            } => {
                let u = (x[0] - center) * scale;
                if *chebyshev {
                    // T_{k+1} = 2u T_k - T_{k-1}, T'_{k+1} = 2 T_k + 2u T'_k - T'_{k-1}
                    let (mut t0, mut t1) = (1.0, u);
                    let (mut d0, mut d1) = (0.0, 1.0);
                    for k in 0..=*degree {
                        let (t, d) = match k {
                            0 => (1.0, 0.0),
                            1 => (u, 1.0),
                            _ => {
                                let t2 = 2.0 * u * t1 - t0;
                                let d2 = 2.0 * t1 + 2.0 * u * d1 - d0;
                                t0 = t1;
                                t1 = t2;
                                d0 = d1;
                                d1 = d2;
                                (t2, d2)
                            }
                        };
                        values[k] = t;
                        if let Some(g) = grads.as_deref_mut() {
                            g[k] = d * scale;
                        }
                    }
                } else {
                    let mut p = 1.0;
                    for k in 0..=*degree {
                        values[k] = p;
                        if let Some(g) = grads.as_deref_mut() {
                            g[k] = if k == 0 {
                                0.0
                            } else {
                                k as f64 * values[k - 1] * scale
                            };
                        }
                        p *= u;
                    }
                }
            }
            Family::Gaussian {
                centers,
                sigma,
                orders,
                constant,
                norm,
            } => {
                let x = x[0];
                let s2 = sigma * sigma;
                let nc = centers.len();
                for (io, &i) in orders.iter().enumerate() {
                    let xi = powi(x, i);
                    let dxi = if i == 0 { 0.0 } else { i as f64 * powi(x, i - 1) };
                    for (j, rho) in centers.iter().enumerate() {
                        let e = (-(x - rho) * (x - rho) / s2).exp() * norm;
                        let idx = io * nc + j;
                        values[idx] = xi * e;
                        if let Some(g) = grads.as_deref_mut() {
                            g[idx] = (dxi - xi * 2.0 * (x - rho) / s2) * e;
                        }
                    }
                }
                if *constant {
                    values[self.size - 1] = 1.0;
                    if let Some(g) = grads.as_deref_mut() {
                        g[self.size - 1] = 0.0;
                    }
                }
            }
            Family::Poly2d { exponents } => {
                let (x1, x2) = (x[0], x[1]);
                for (idx, &(k, l)) in exponents.iter().enumerate() {
                    let (pk, pl) = (powi(x1, k), powi(x2, l));
                    values[idx] = pk * pl;
                    if let Some(g) = grads.as_deref_mut() {
                        g[2 * idx] = if k == 0 { 0.0 } else { k as f64 * powi(x1, k - 1) * pl };
                        g[2 * idx + 1] = if l == 0 { 0.0 } else { l as f64 * pk * powi(x2, l - 1) };
                    }
                }
            }
        }
    }

    fn check_points(&self, points: &PointSet) -> Result<()> {
        if points.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "points have dimension {}, basis has {}",
                points.dim(),
                self.dim()
            )));
        }
        if let Some(index) = points.first_outside(&self.domain, 1e-12) {
            return Err(Error::DomainViolation {
                index,
                point: points.point(index).to_vec(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, points: &PointSet) -> Result<EvalTable> {
        self.check_points(points)?;
        let (n, m, d) = (points.len(), self.size, self.dim());
        let mut values = DMatrix::zeros(n, m);
        let mut gradients = vec![0.0; n * m * d];
        let mut row = vec![0.0; m];
        for (p, x) in points.iter().enumerate() {
            self.eval_point(x, &mut row, Some(&mut gradients[p * m * d..(p + 1) * m * d]));
            for k in 0..m {
                values[(p, k)] = row[k];
            }
        }
        Ok(EvalTable {
            points: points.clone(),
            values,
            gradients,
            dim: d,
            size: m,
        })
    }

    /// `n x M` value matrix, with the domain check.
    pub fn values(&self, points: &PointSet) -> Result<DMatrix<f64>> {
        self.check_points(points)?;
        Ok(self.values_unchecked(points))
    }

    pub fn values_unchecked(&self, points: &PointSet) -> DMatrix<f64> {
        let m = self.size;
        let mut out = DMatrix::zeros(points.len(), m);
        let mut row = vec![0.0; m];
        for (p, x) in points.iter().enumerate() {
            self.eval_point(x, &mut row, None);
            for k in 0..m {
                out[(p, k)] = row[k];
            }
        }
        out
    }

    /// 2-norm condition number of the weighted Gram matrix on `grid`.
    pub fn gram_condition(&self, grid: &QuadratureGrid) -> Result<f64> {
        let phi = self.values(grid.points())?;
        let mut g = DMatrix::zeros(self.size, self.size);
        for (p, &w) in grid.weights().iter().enumerate() {
            let r = phi.row(p);
            g += w * r.transpose() * r;
        }
        let eig = SymmetricEigen::new(g).eigenvalues;
        let hi = eig.max();
        let lo = eig.min();
        Ok(if lo <= 0.0 { f64::INFINITY } else { hi / lo })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line(a: f64, b: f64) -> BoxDomain {
        BoxDomain::interval(a, b).unwrap()
    }

    #[test]
    fn sizes() {
        let k = line(-2.0, 2.0);
        assert_eq!(make_basis(&BasisSpec::Monomial { degree: 14 }, &k).unwrap().size(), 15);
        assert_eq!(make_basis(&BasisSpec::gaussian_default(), &k).unwrap().size(), 15);
        let sq = BoxDomain::centered_cube(2, 2.0).unwrap();
        assert_eq!(make_basis(&BasisSpec::Poly2d { max_degree: 7 }, &sq).unwrap().size(), 36);
        let b0 = make_basis(&BasisSpec::Monomial { degree: 0 }, &k).unwrap();
        assert_eq!(b0.size(), 1);
        assert_eq!(b0.values(&PointSet::from_scalars(&[1.3])).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn rejects_bad_specs() {
        let k = line(-2.0, 2.0);
        let bad_sigma = BasisSpec::GaussianMonomial {
            centers: Centers::List(vec![0.0]),
            sigma: 0.0,
            orders: vec![0],
            include_constant: false,
        };
        assert!(make_basis(&bad_sigma, &k).is_err());
        let outside = BasisSpec::GaussianMonomial {
            centers: Centers::List(vec![3.0]),
            sigma: 1.0,
            orders: vec![0],
            include_constant: false,
        };
        assert!(make_basis(&outside, &k).is_err());
        let empty = BasisSpec::GaussianMonomial {
            centers: Centers::List(vec![]),
            sigma: 1.0,
            orders: vec![0],
            include_constant: false,
        };
        assert!(make_basis(&empty, &k).is_err());
        assert!(make_basis(&BasisSpec::Poly2d { max_degree: 2 }, &k).is_err());
    }

    #[test]
    fn point_values() {
        let b = make_basis(&BasisSpec::Monomial { degree: 3 }, &line(-2.0, 2.0)).unwrap();
        let v = b.values(&PointSet::from_scalars(&[2.0])).unwrap();
        assert_eq!(v.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 4.0, 8.0]);

        let g = make_basis(&BasisSpec::gaussian_default(), &line(-2.0, 2.0)).unwrap();
        let centers = [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5];
        // 1 / sqrt(2 pi (2/3)^2) = 3 / sqrt(8 pi) ~ 0.59841
        let peak = 3.0 / (8.0 * PI).sqrt();
        assert!((peak - 0.59841).abs() < 1e-5);
        for (j, c) in centers.iter().enumerate() {
            let v = g.values(&PointSet::from_scalars(&[*c])).unwrap();
            assert_relative_eq!(v[(0, j)], peak, epsilon = 1e-12);
            assert_relative_eq!(v[(0, 7 + j)], c * peak, epsilon = 1e-12);
        }
        assert_eq!(g.constant_index(), Some(14));

        let c = make_basis(&BasisSpec::Chebyshev { degree: 4 }, &line(-2.0, 2.0)).unwrap();
        let v = c.values(&PointSet::from_scalars(&[2.0, 1.0])).unwrap();
        assert_relative_eq!(v[(0, 2)], 1.0, epsilon = 1e-15);
        // T_2(1/2) = -1/2, T_3(1/2) = -1, T_4(1/2) = -1/2
        assert_relative_eq!(v[(1, 2)], -0.5, epsilon = 1e-15);
        assert_relative_eq!(v[(1, 3)], -1.0, epsilon = 1e-15);
        assert_relative_eq!(v[(1, 4)], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn out_of_domain_names_index() {
        let b = make_basis(&BasisSpec::Monomial { degree: 2 }, &line(-1.0, 1.0)).unwrap();
        match b.eval(&PointSet::from_scalars(&[0.0, 1.0 + 1e-13, 1.5])) {
            Err(Error::DomainViolation { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn poly2d_order() {
        let sq = BoxDomain::centered_cube(2, 2.0).unwrap();
        let b = make_basis(&BasisSpec::Poly2d { max_degree: 2 }, &sq).unwrap();
        let ex: Vec<_> = (0..b.size()).map(|i| b.exponents(i).unwrap()).collect();
        assert_eq!(ex, vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]);
    }
}
