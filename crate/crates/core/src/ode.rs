//! Classical fixed-step fourth-order Runge-Kutta.

use crate::error::{Error, Result};

/// Number of steps covering `[0, t_end]` with nominal step `h`; the effective
/// step is `t_end / n`.
pub fn step_count(t_end: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be nonnegative, got {t_end}")));
    }
    Ok(((t_end / h).round() as usize).max(usize::from(t_end > 0.0)))
}

/// Scratch space for one RK4 step of a system of size `n`.
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    /// Advances `y` from `t` to `t + h`. `rhs(t, y, dy)` writes the derivative.
    pub fn step<F>(&mut self, rhs: &mut F, t: f64, h: f64, y: &mut [f64]) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y.len();
        rhs(t, y, &mut self.k1)?;
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        rhs(t + 0.5 * h, &self.tmp, &mut self.k2)?;
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        rhs(t + 0.5 * h, &self.tmp, &mut self.k3)?;
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        rhs(t + h, &self.tmp, &mut self.k4)?;
        for i in 0..n {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay_error(h: f64) -> f64 {
        let n = step_count(1.0, h).unwrap();
        let h = 1.0 / n as f64;
        let mut y = [1.0];
        let mut rk = Rk4::new(1);
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            Ok(())
        };
        for s in 0..n {
            rk.step(&mut f, s as f64 * h, h, &mut y).unwrap();
        }
        (y[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn fourth_order() {
        let r = decay_error(0.1) / decay_error(0.05);
        assert!((12.0..=20.0).contains(&r), "ratio {r}");
        assert!(decay_error(1e-3) < 1e-8);
    }

    #[test]
    fn step_counts() {
        assert_eq!(step_count(1.0, 1e-3).unwrap(), 1000);
        assert_eq!(step_count(0.0, 0.1).unwrap(), 0);
        assert_eq!(step_count(0.01, 0.1).unwrap(), 1);
        assert!(step_count(1.0, 0.0).is_err());
    }
}
