use moment_convergence::*;

#[test]
fn monomial_properties_full_range() {
    let r = verify_en_properties(15, 12).unwrap();
    let bad: Vec<_> = r.failures().collect();
    assert!(r.pass, "{bad:?}");
    assert!(r.exact.iter().all(|c| c.pass));
}

#[test]
fn exact_identities_to_sixty() {
    assert!(verify_p_identities(60).iter().all(|c| c.pass));
}

#[test]
fn sandwich_all_pairs() {
    for k in 1..=15 {
        for n in 0..k {
            let r = verify_sandwich(k, n).unwrap();
            assert!(r.pass, "{r:?}");
        }
    }
}

#[test]
fn remez_equioscillates_for_monomials() {
    for k in 1..=16 {
        for n in 0..k.min(13) {
            let r = best_linf_poly(|x| x.powi(k as i32), n as usize, [-1.0, 1.0], 1e-10).unwrap();
            assert!(r.converged && r.equioscillates(1e-9), "k={k} n={n}: {r:?}");
        }
    }
}

#[test]
fn report_serializes() {
    let r = verify_sandwich(5, 2).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    assert_eq!(v["p"]["value"], "3/8");
    assert_eq!(v["pass"], true);
}
