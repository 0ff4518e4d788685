use super::*;
use crate::dynamics::{ExprField, ExprPair, FnPair, LinearField, PolynomialField};
use crate::expr::Expression;
use proptest::prelude::*;

fn interval(a: f64, b: f64) -> BoxDomain {
    BoxDomain::interval(a, b).unwrap()
}

fn monomials(degree: usize, domain: &BoxDomain) -> KernelBasis {
    make_basis(&BasisSpec::Monomial { degree }, domain).unwrap()
}

fn field(text: &str, dim: usize) -> ExprField {
    ExprField(Expression::field(text, dim).unwrap())
}

fn pair_map(text: &str, dim: usize) -> ExprPair {
    ExprPair(Expression::pair(text, dim).unwrap())
}

#[test]
fn linear_decay_is_exact() {
    let k = interval(-1.0, 1.0);
    let basis = monomials(3, &k);
    let grid = QuadratureGrid::trapezoid(&k, 401);
    for norm in [FitNorm::L2, FitNorm::Linf] {
        let opts = FitOptions { norm, ..Default::default() };
        let (model, report) = fit_linear(&basis, &field("-x", 1), &grid, &opts, None).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, -1.0, -2.0, -3.0]));
        assert!((&model.a - expect).amax() < 1e-8, "{norm:?}: {}", model.a);
        assert!(report.eps_total < 1e-8);
        assert!(report.converged);
    }
}

#[test]
fn zero_field_gives_zero_matrix() {
    let k = interval(-1.0, 1.0);
    let basis = monomials(4, &k);
    let grid = QuadratureGrid::trapezoid(&k, 101);
    let (model, report) = fit_linear(&basis, &field("0", 1), &grid, &FitOptions::default(), None).unwrap();
    assert_eq!(model.a.amax(), 0.0);
    assert_eq!(report.eps_total, 0.0);
}

#[test]
fn quadratic_field_projection_row() {
    // d(x)/dx * x^2 = x^2 projected onto {1, x}: 1/3 with error max |x^2 - 1/3| = 2/3
    let k = interval(-1.0, 1.0);
    let basis = monomials(1, &k);
    let grid = QuadratureGrid::trapezoid(&k, 401);
    let f = PolynomialField { coefficients: vec![0.0, 0.0, 1.0] };
    let (model, report) = fit_linear(&basis, &f, &grid, &FitOptions::default(), None).unwrap();
    assert!((model.a[(1, 0)] - 1.0 / 3.0).abs() < 1e-5);
    assert!(model.a[(1, 1)].abs() < 1e-10);
    assert!((report.sup_residuals[1] - 2.0 / 3.0).abs() < 1e-5);
    assert_eq!(report.sup_residuals[0], 0.0);
}

#[test]
fn quadratic_fit_exact_for_difference() {
    let k = interval(-1.0, 1.0);
    let basis = monomials(3, &k);
    let grid = PairGrid::square(&k, 41);
    let (model, report) = fit_quadratic(&basis, &pair_map("x - y", 1), &grid, &FitOptions::default(), None).unwrap();
    assert!(report.eps_total < 1e-9, "{report:?}");
    let b2 = &model.b[2];
    assert!((b2[(2, 0)] - 2.0).abs() < 1e-9);
    assert!((b2[(1, 1)] + 2.0).abs() < 1e-9);
    let mut rest = b2.clone();
    rest[(2, 0)] = 0.0;
    rest[(1, 1)] = 0.0;
    assert!(rest.amax() < 1e-9);
}

#[test]
fn zero_interaction_gives_zero_tensors() {
    let k = interval(-1.0, 1.0);
    let basis = monomials(3, &k);
    let grid = PairGrid::square(&k, 21);
    let (model, _) = fit_quadratic(&basis, &pair_map("0", 1), &grid, &FitOptions::default(), None).unwrap();
    assert!(model.b.iter().all(|b| b.amax() == 0.0));
}

#[test]
fn leader_fit_exact_for_attraction() {
    let k = interval(-1.0, 1.0);
    let basis = monomials(2, &k);
    let grid = PairGrid::square(&k, 31);
    let (model, report) = fit_leader(&basis, &basis, &pair_map("y - x", 1), &grid, &FitOptions::default(), None).unwrap();
    assert!(report.eps_total < 1e-9);
    assert!((model.gamma[1][(1, 0)] - 1.0).abs() < 1e-9);
    assert!((model.gamma[0][(1, 1)] + 1.0).abs() < 1e-9);
    let zero = FnPair { dim: 1, f: |_: &[f64], _: &[f64], o: &mut [f64]| o[0] = 0.0 };
    let (model, _) = fit_leader(&basis, &basis, &zero, &grid, &FitOptions::default(), None).unwrap();
    assert!(model.gamma.iter().all(|g| g.amax() == 0.0));
}

#[test]
fn leader_fit_allows_distinct_psi_family() {
    let k = interval(-1.0, 1.0);
    let phi = monomials(3, &k);
    let psi = make_basis(&BasisSpec::Chebyshev { degree: 2 }, &k).unwrap();
    let grid = PairGrid::square(&k, 31);
    let (model, report) = fit_leader(&phi, &psi, &pair_map("y - x", 1), &grid, &FitOptions::default(), None).unwrap();
    assert_eq!(model.gamma.len(), 3);
    assert!(report.eps_total < 1e-9);
}

#[test]
fn l2_residual_is_orthogonal_to_basis() {
    let k = interval(-2.0, 2.0);
    let basis = make_basis(&BasisSpec::gaussian_default(), &k).unwrap();
    let grid = QuadratureGrid::trapezoid(&k, 401);
    let f = field("-x + x^3/4 - exp(-x^2)", 1);
    let (model, _) = fit_linear(&basis, &f, &grid, &FitOptions::default(), None).unwrap();
    let tab = basis.eval(grid.points()).unwrap();
    let mut fv = [0.0];
    let m = basis.size();
    let mut target = DMatrix::zeros(grid.len(), m);
    for (p, x) in grid.points().iter().enumerate() {
        f.eval(x, &mut fv);
        for kk in 0..m {
            target[(p, kk)] = tab.gradient(p, kk, 0) * fv[0];
        }
    }
    let resid = &target - &tab.values * model.a.transpose();
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(grid.weights()));
    let inner = tab.values.transpose() * &w * &resid;
    let scale = (tab.values.transpose() * &w * &target).amax();
    assert!(inner.amax() <= 1e-8 * scale, "{} vs {scale}", inner.amax());
}

#[test]
fn quadratic_pair_l2_matches_dense_solve() {
    // the separable projection equals the dense Kronecker least-squares solution
    let k = interval(-1.0, 1.0);
    let basis = monomials(3, &k);
    let grid = PairGrid::square(&k, 15);
    let g = pair_map("2*exp(-0.6*(x-y)^2)*(x-y)", 1);
    let (model, report) = fit_quadratic(&basis, &g, &grid, &FitOptions::default(), None).unwrap();
    let m = basis.size();
    let tab = basis.eval(grid.x.points()).unwrap();
    let n = grid.x.len();
    let design = DMatrix::from_fn(n * n, m * m, |row, col| {
        tab.values[(row / n, col / m)] * tab.values[(row % n, col % m)]
    });
    let w = DVector::from_fn(n * n, |row, _| (grid.x.weights()[row / n] * grid.y.weights()[row % n]).sqrt());
    let mut gv = [0.0];
    for kk in 0..m {
        let target = DVector::from_fn(n * n, |row, _| {
            g.eval(grid.x.points().point(row / n), grid.y.points().point(row % n), &mut gv);
            tab.gradient(row / n, kk, 0) * gv[0]
        });
        let a = DMatrix::from_fn(n * n, m * m, |r, c| design[(r, c)] * w[r]);
        let b = target.component_mul(&w);
        let sol = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        for l in 0..m {
            for j in 0..m {
                assert!((model.b[kk][(l, j)] - sol[l * m + j]).abs() < 1e-7, "k={kk} l={l} j={j}");
            }
        }
        let resid = &target - &design * &sol;
        assert!((resid.amax() - report.sup_residuals[kk]).abs() < 1e-9);
    }
}

#[test]
fn linear_constraint_is_respected() {
    let k = interval(-2.0, 2.0);
    let basis = make_basis(&BasisSpec::gaussian_default(), &k).unwrap();
    let grid = QuadratureGrid::trapezoid(&k, 201);
    let f = field("x - x^3/3", 1);
    let opts = FitOptions { max_iter: 20_000, ..Default::default() };
    let (free, free_report) = fit_linear(&basis, &f, &grid, &opts, None).unwrap();
    let nu = log_norm_2(&free.a).unwrap();
    let kappa = nu - 1.0;
    let (model, report) = fit_linear(&basis, &f, &grid, &opts, Some(kappa)).unwrap();
    assert!(log_norm_2(&model.a).unwrap() <= kappa + 1e-8);
    assert!(report.constraint_violation <= 1e-8);
    assert!(report.objective >= free_report.objective - 1e-12);
}

#[test]
fn pair_constraints_are_respected() {
    let k = interval(-1.0, 1.0);
    let basis = monomials(3, &k);
    let grid = PairGrid::square(&k, 21);
    let g = pair_map("2*exp(-0.6*(x-y)^2)*(x-y)", 1);
    let opts = FitOptions { max_iter: 20_000, ..Default::default() };
    let (free, _) = fit_quadratic(&basis, &g, &grid, &opts, None).unwrap();
    let kappa: Vec<f64> = free.btilde.iter().map(|b| 0.5 * log_norm_2_abs(b).unwrap()).collect();
    let (model, report) = fit_quadratic(&basis, &g, &grid, &opts, Some(&kappa)).unwrap();
    for (b, kp) in model.btilde.iter().zip(&kappa) {
        assert!(log_norm_2_abs(b).unwrap() <= kp + 1e-8);
    }
    assert!(report.constraint_violation <= 1e-8);

    let eta = pair_map("(1 - x^2)*(y - x)", 1);
    let (free, _) = fit_leader(&basis, &basis, &eta, &grid, &opts, None).unwrap();
    let kappa: Vec<f64> = free.gamma.iter().map(|g| 0.5 * log_norm_2_abs(g).unwrap()).collect();
    let (model, _) = fit_leader(&basis, &basis, &eta, &grid, &opts, Some(&kappa)).unwrap();
    for (g, kp) in model.gamma.iter().zip(&kappa) {
        assert!(log_norm_2_abs(g).unwrap() <= kp + 1e-8);
    }
}

#[test]
fn linf_dominates_l2_on_sup() {
    let k = interval(-2.0, 2.0);
    let basis = monomials(5, &k);
    let grid = QuadratureGrid::trapezoid(&k, 201);
    let f = field("-x + exp(-x^2)", 1);
    let (_, l2) = fit_linear(&basis, &f, &grid, &FitOptions::default(), None).unwrap();
    let opts = FitOptions { norm: FitNorm::Linf, ..Default::default() };
    let (_, linf) = fit_linear(&basis, &f, &grid, &opts, None).unwrap();
    for (a, b) in linf.sup_residuals.iter().zip(&l2.sup_residuals) {
        assert!(a <= &(b + 1e-9));
    }
    assert!(linf.eps_total < l2.eps_total);

    let pgrid = PairGrid::square(&k, 21);
    let g = pair_map("2*exp(-0.6*(x-y)^2)*(x-y)", 1);
    let basis = monomials(3, &k);
    let (_, l2) = fit_quadratic(&basis, &g, &pgrid, &FitOptions::default(), None).unwrap();
    let opts = FitOptions { norm: FitNorm::Linf, linf_points: Some(21), ..Default::default() };
    let (_, linf) = fit_quadratic(&basis, &g, &pgrid, &opts, None).unwrap();
    for (a, b) in linf.sup_residuals.iter().zip(&l2.sup_residuals) {
        assert!(a <= &(b + 1e-9));
    }
}

#[test]
fn singular_gram_is_an_error() {
    let k = interval(-1.0, 1.0);
    let basis = monomials(6, &k);
    let grid = QuadratureGrid::trapezoid(&k, 4);
    let err = fit_linear(&basis, &LinearField { dim: 1, rate: -1.0 }, &grid, &FitOptions::default(), None);
    assert!(matches!(err, Err(Error::SingularGram)));
}

#[test]
fn lipschitz_examples() {
    let k = interval(-1.0, 1.0);
    let grid = QuadratureGrid::trapezoid(&k, 101);
    assert!((lipschitz_log_constant(&LinearField { dim: 1, rate: -1.0 }, &grid).unwrap() + 1.0).abs() < 1e-15);
    let unit = interval(0.0, 1.0);
    let grid = QuadratureGrid::trapezoid(&unit, 101);
    let sq = PolynomialField { coefficients: vec![0.0, 0.0, 1.0] };
    assert!((lipschitz_log_constant(&sq, &grid).unwrap() - 2.0).abs() < 1e-12);
    let plane = BoxDomain::centered_cube(2, 1.0).unwrap();
    let grid = QuadratureGrid::trapezoid(&plane, 11);
    let rot = field("[x2, -x1]", 2);
    assert!(lipschitz_log_constant(&rot, &grid).unwrap().abs() < 1e-15);
    let nojac = crate::dynamics::FnField { dim: 1, f: |x: &[f64], o: &mut [f64]| o[0] = x[0] };
    assert!(matches!(lipschitz_log_constant(&nojac, &grid_1d()), Err(Error::JacobianUnavailable)));
}

fn grid_1d() -> QuadratureGrid {
    QuadratureGrid::trapezoid(&interval(-1.0, 1.0), 11)
}

#[test]
fn lipschitz_refinement_is_monotone() {
    // nested grids (2^j + 1 points) can only raise the grid maximum
    let f = field("x^3 - 2*x^2 + exp(-3*x^2)", 1);
    let mut prev = f64::NEG_INFINITY;
    for j in 2..9 {
        let grid = QuadratureGrid::trapezoid(&interval(-1.0, 1.0), (1 << j) + 1);
        let v = lipschitz_log_constant(&f, &grid).unwrap();
        assert!(v >= prev);
        prev = v;
    }
}

#[test]
fn document_round_trip() {
    let k = interval(-1.0, 1.0);
    let basis = monomials(2, &k);
    let grid = PairGrid::square(&k, 21);
    let (model, report) = fit_leader(&basis, &basis, &pair_map("(y - x)*exp(-x^2)", 1), &grid, &FitOptions::default(), None).unwrap();
    let doc = ModelDocument::leader(&model, &basis, &report);
    let text = serde_json::to_string_pretty(&doc).unwrap();
    let back: ModelDocument = serde_json::from_str(&text).unwrap();
    assert_eq!(back, doc);
    let restored = back.to_leader().unwrap();
    assert_eq!(restored.gamma, model.gamma);
    assert!(back.to_quadratic().is_err());
}

proptest! {
    #[test]
    fn btilde_consistent(seed in 0u64..1000, m in 1usize..6) {
        let mut rng = crate::rng::SeededRng::new(seed);
        let b: Vec<DMatrix<f64>> = (0..m)
            .map(|_| DMatrix::from_fn(m, m, |_, _| rng.uniform_in(-1.0, 1.0)))
            .collect();
        let q = QuadraticModel::from_b(b.clone()).unwrap();
        for l in 0..m {
            for i in 0..m {
                for j in 0..m {
                    prop_assert_eq!(q.btilde[l][(i, j)], b[i][(l, j)] + b[i][(j, l)]);
                }
            }
        }
        // the Jacobian of m -> (m^T B_k m)_k is sum_j m_j B~_j
        let mv: Vec<f64> = (0..m).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let jac = q.jacobian(&mv);
        let h = 1e-6;
        let mut fp = vec![0.0; m];
        let mut fm = vec![0.0; m];
        for l in 0..m {
            let mut a = mv.clone();
            a[l] += h;
            q.rhs(&a, &mut fp);
            a[l] -= 2.0 * h;
            q.rhs(&a, &mut fm);
            for i in 0..m {
                prop_assert!((jac[(i, l)] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn polynomial_fields_are_represented_exactly(c0 in -1.0f64..1.0, c1 in -1.0f64..1.0, c2 in -1.0f64..1.0) {
        // (d x^k) f has degree k + 1 <= 4 for quadratic f: exact with monomials up to 4
        // only for kernels k <= 2
        let k = interval(-1.0, 1.0);
        let basis = monomials(4, &k);
        let grid = QuadratureGrid::trapezoid(&k, 101);
        let f = PolynomialField { coefficients: vec![c0, c1, c2] };
        let (l2_model, l2) = fit_linear(&basis, &f, &grid, &FitOptions::default(), None).unwrap();
        for kk in 0..3 {
            prop_assert!(l2.sup_residuals[kk] < 1e-9);
            // row k: k c0 x^{k-1} + k c1 x^k + k c2 x^{k+1}
            for l in 0..5 {
                let expect = if kk == 0 { 0.0 } else if l + 1 == kk { kk as f64 * c0 }
                    else if l == kk { kk as f64 * c1 } else if l == kk + 1 { kk as f64 * c2 } else { 0.0 };
                prop_assert!((l2_model.a[(kk, l)] - expect).abs() < 1e-8);
            }
        }
    }
}
