//! Tensor-product trapezoidal grids on boxes.

use crate::geometry::{BoxDomain, PointSet};

#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    points: PointSet,
    weights: Vec<f64>,
    shape: Vec<usize>,
    domain: BoxDomain,
}

impl QuadratureGrid {
    /// `n` nodes per axis including both endpoints; weights sum to the box volume.
    pub fn trapezoid(domain: &BoxDomain, n: usize) -> Self {
        Self::trapezoid_shape(domain, &vec![n; domain.dim()])
    }

    pub fn trapezoid_shape(domain: &BoxDomain, shape: &[usize]) -> Self {
        let d = domain.dim();
        assert_eq!(shape.len(), d);
        assert!(shape.iter().all(|&n| n >= 2), "need at least two nodes per axis");
        let axes: Vec<(Vec<f64>, Vec<f64>)> = (0..d)
            .map(|a| {
                let n = shape[a];
                let (lo, hi) = (domain.lower()[a], domain.upper()[a]);
                let h = (hi - lo) / (n - 1) as f64;
                let nodes = (0..n)
                    .map(|i| if i == n - 1 { hi } else { lo + h * i as f64 })
                    .collect();
                let w = (0..n)
                    .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
                    .collect();
                (nodes, w)
            })
            .collect();
        let total: usize = shape.iter().product();
        let mut coords = Vec::with_capacity(total * d);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let mut w = 1.0;
            for a in 0..d {
                coords.push(axes[a].0[idx[a]]);
                w *= axes[a].1[idx[a]];
            }
            weights.push(w);
            // last axis fastest
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self {
            points: PointSet::new(d, coords).expect("grid coordinates"),
            weights,
            shape: shape.to_vec(),
            domain: domain.clone(),
        }
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Product grid over `K x K` (or `K x K_psi`), kept factored.
#[derive(Clone, Debug)]
pub struct PairGrid {
    pub x: QuadratureGrid,
    pub y: QuadratureGrid,
}

impl PairGrid {
    pub fn new(x: QuadratureGrid, y: QuadratureGrid) -> Self {
        Self { x, y }
    }

    pub fn square(domain: &BoxDomain, n: usize) -> Self {
        let g = QuadratureGrid::trapezoid(domain, n);
        Self { x: g.clone(), y: g }
    }

    pub fn len(&self) -> usize {
        self.x.len() * self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_volume() {
        let k = BoxDomain::new(vec![-2.0, 0.0], vec![2.0, 1.0]).unwrap();
        let g = QuadratureGrid::trapezoid(&k, 11);
        assert_eq!(g.len(), 121);
        let s: f64 = g.weights().iter().sum();
        assert!((s - 4.0).abs() < 1e-12);
        assert!(g.points().first_outside(&k, 0.0).is_none());
    }

    #[test]
    fn integrates_linear_exactly() {
        let k = BoxDomain::interval(-1.0, 3.0).unwrap();
        let g = QuadratureGrid::trapezoid(&k, 5);
        let v: Vec<f64> = g.points().iter().map(|p| 2.0 * p[0] + 1.0).collect();
        assert!((g.integrate(&v) - 12.0).abs() < 1e-12);
    }
}
