//! Grid minimax fits as epigraph linear programs.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::lp::{LinearProgram, LpOptions};

pub(crate) struct MinimaxFit {
    pub coefficients: DVector<f64>,
    pub iterations: u32,
    pub solved: bool,
}

/// `min_c max_p |target_p - (design c)_p|`. Columns are equilibrated before
/// the solve; a failed or inaccurate solve leaves `solved = false` and falls
/// back to `fallback`.
pub(crate) fn minimax(
    design: &DMatrix<f64>,
    target: &DVector<f64>,
    fallback: &DVector<f64>,
    max_iter: u32,
) -> Result<MinimaxFit> {
    let (n, p) = design.shape();
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let s = design.column(j).amax();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let t = p;
    let mut lp = LinearProgram::new(p + 1);
    lp.set_objective(t, 1.0);
    for i in 0..n {
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(p + 1);
        for j in 0..p {
            let v = design[(i, j)] / scale[j];
            if v != 0.0 {
                row.push((j, v));
            }
        }
        let mut neg: Vec<(usize, f64)> = row.iter().map(|&(j, v)| (j, -v)).collect();
        row.push((t, -1.0));
        neg.push((t, -1.0));
        lp.add_le(row, target[i]);
        lp.add_le(neg, -target[i]);
    }
    let sol = lp.solve(&LpOptions {
        tol: 1e-10,
        max_iter,
    })?;

    let sup_of = |c: &DVector<f64>| (target - design * c).amax();
    let fallback_sup = sup_of(fallback);
    if sol.is_usable() {
        let c = DVector::from_fn(p, |j, _| sol.x[j] / scale[j]);
        let sup = sup_of(&c);
        if sup <= fallback_sup {
            return Ok(MinimaxFit {
                coefficients: c,
                iterations: sol.iterations,
                solved: true,
            });
        }
        log::debug!("minimax LP result ({sup:e}) no better than least squares ({fallback_sup:e})");
        return Ok(MinimaxFit {
            coefficients: fallback.clone(),
            iterations: sol.iterations,
            solved: true,
        });
    }
    log::warn!("minimax LP did not converge ({:?})", sol.status);
    Ok(MinimaxFit {
        coefficients: fallback.clone(),
        iterations: sol.iterations,
        solved: false,
    })
}
