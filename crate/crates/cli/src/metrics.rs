//! Scalar summaries of moment trajectories and agent histograms.

use nalgebra::DVector;
use serde::Serialize;

/// Paired samples of the true and reduced moments at common times.
pub struct Paired<'a> {
    pub times: &'a [f64],
    pub truth: &'a [DVector<f64>],
    pub model: &'a [DVector<f64>],
}

impl Paired<'_> {
    fn size(&self) -> usize {
        self.truth.first().map_or(0, |v| v.len())
    }

    /// `max_k sup_t |m_k - m̄_k| / (1 + sup_t |m_k|)`.
    pub fn max_relative_error(&self) -> f64 {
        (0..self.size())
            .map(|k| {
                let mut diff: f64 = 0.0;
                let mut scale: f64 = 0.0;
                for (a, b) in self.truth.iter().zip(self.model) {
                    diff = diff.max((a[k] - b[k]).abs());
                    scale = scale.max(a[k].abs());
                }
                diff / (1.0 + scale)
            })
            .fold(0.0, f64::max)
    }

    /// Per kernel `RMS_t |m_k - m̄_k| / (1 + RMS_t |m_k|)`.
    pub fn rms_ratios(&self) -> Vec<f64> {
        let n = self.truth.len().max(1) as f64;
        (0..self.size())
            .map(|k| {
                let mut d2 = 0.0;
                let mut m2 = 0.0;
                for (a, b) in self.truth.iter().zip(self.model) {
                    d2 += (a[k] - b[k]).powi(2);
                    m2 += a[k].powi(2);
                }
                (d2 / n).sqrt() / (1.0 + (m2 / n).sqrt())
            })
            .collect()
    }

    /// `||m(t) - m̄(t)||_2` at every time.
    pub fn errors(&self) -> Vec<f64> {
        self.truth.iter().zip(self.model).map(|(a, b)| (a - b).norm()).collect()
    }
}

/// `sup ||m(t)||_2` over samples with `t` in `[lo, hi]`; `None` when empty.
pub fn sup_norm(times: &[f64], values: &[DVector<f64>], lo: f64, hi: f64) -> Option<f64> {
    times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= lo - 1e-12 && **t <= hi + 1e-12)
        .map(|(_, v)| v.norm())
        .reduce(f64::max)
}

/// Largest peak-to-peak range of a single component over `[lo, hi]`.
pub fn max_peak_to_peak(times: &[f64], values: &[DVector<f64>], lo: f64, hi: f64) -> Option<f64> {
    let inside: Vec<&DVector<f64>> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= lo - 1e-12 && **t <= hi + 1e-12)
        .map(|(_, v)| v)
        .collect();
    let first = inside.first()?;
    (0..first.len())
        .map(|k| {
            let (lo, hi) = inside
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v[k]), b.max(v[k])));
            hi - lo
        })
        .reduce(f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins on `[lower, upper]`; the last bin is closed.
    pub fn new(xs: impl IntoIterator<Item = f64>, lower: f64, upper: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        let w = (upper - lower) / bins as f64;
        for x in xs {
            if x < lower || x > upper {
                continue;
            }
            let i = (((x - lower) / w) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Self { lower, upper, counts }
    }

    pub fn centers(&self) -> Vec<f64> {
        let b = self.counts.len();
        let w = (self.upper - self.lower) / b as f64;
        (0..b).map(|i| self.lower + (i as f64 + 0.5) * w).collect()
    }

    /// Counts normalized to a probability density.
    pub fn density(&self) -> Vec<f64> {
        let total: usize = self.counts.iter().sum();
        let w = (self.upper - self.lower) / self.counts.len() as f64;
        self.counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / (total as f64 * w) })
            .collect()
    }

    /// Local maxima (flat tops count once) whose topographic prominence is at
    /// least `min_prominence` times the tallest bin.
    pub fn modes(&self, min_prominence: f64) -> Vec<Mode> {
        let c: Vec<f64> = self.counts.iter().map(|&v| v as f64).collect();
        let n = c.len();
        let tallest = c.iter().copied().fold(0.0, f64::max);
        if tallest == 0.0 {
            return Vec::new();
        }
        let centers = self.centers();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && c[j + 1] == c[i] {
                j += 1;
            }
            let h = c[i];
            let left_lower = i == 0 || c[i - 1] < h;
            let right_lower = j + 1 == n || c[j + 1] < h;
            if h > 0.0 && left_lower && right_lower {
                // walking off the edge without meeting higher ground counts as 0
                let mut lmin = h;
                let mut k = i;
                while k > 0 && c[k - 1] <= h {
                    k -= 1;
                    lmin = lmin.min(c[k]);
                }
                if k == 0 {
                    lmin = 0.0;
                }
                let mut rmin = h;
                let mut k = j;
                while k + 1 < n && c[k + 1] <= h {
                    k += 1;
                    rmin = rmin.min(c[k]);
                }
                if k + 1 == n {
                    rmin = 0.0;
                }
                let prominence = h - lmin.max(rmin);
                if prominence >= min_prominence * tallest {
                    out.push(Mode {
                        center: 0.5 * (centers[i] + centers[j]),
                        height: self.counts[i],
                        prominence: prominence as usize,
                    });
                }
            }
            i = j + 1;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mode {
    pub center: f64,
    pub height: usize,
    pub prominence: usize,
}

/// L1 distance of two densities on the same cells after normalizing each to
/// unit mass.
pub fn normalized_l1(a: &[f64], b: &[f64], cell_volume: f64) -> f64 {
    let ma: f64 = a.iter().sum::<f64>() * cell_volume;
    let mb: f64 = b.iter().sum::<f64>() * cell_volume;
    if ma <= 0.0 || mb <= 0.0 {
        return f64::NAN;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x / ma - y / mb).abs())
        .sum::<f64>()
        * cell_volume
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hist(counts: &[usize]) -> Histogram {
        Histogram {
            lower: 0.0,
            upper: counts.len() as f64,
            counts: counts.to_vec(),
        }
    }

    #[test]
    fn mode_counting() {
        assert_eq!(hist(&[0, 5, 0, 5, 0, 5, 0]).modes(0.05).len(), 3);
        // flat top is one mode
        assert_eq!(hist(&[1, 4, 4, 4, 1]).modes(0.05).len(), 1);
        // a one-count ripple on a plateau of 100 is not a mode
        assert_eq!(hist(&[0, 100, 50, 51, 50, 100, 0]).modes(0.05).len(), 2);
        assert_eq!(hist(&[0, 100, 40, 60, 40, 100, 0]).modes(0.05).len(), 3);
        // edges count as lower ground
        assert_eq!(hist(&[9, 1, 9]).modes(0.05).len(), 2);
        assert!(hist(&[0, 0]).modes(0.05).is_empty());
    }

    #[test]
    fn histogram_binning() {
        let h = Histogram::new([-2.0, -1.99, 0.0, 2.0, 3.0], -2.0, 2.0, 4);
        assert_eq!(h.counts, vec![2, 0, 1, 1]);
        let d = h.density();
        assert!((d.iter().sum::<f64>() * 1.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_measures() {
        let t = [0.0, 1.0];
        let a = [DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![1.0, 4.0])];
        let b = [DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![1.0, 3.0])];
        let p = Paired {
            times: &t,
            truth: &a,
            model: &b,
        };
        assert!((p.max_relative_error() - 0.2).abs() < 1e-15);
        let r = p.rms_ratios();
        assert_eq!(r[0], 0.0);
        assert!((r[1] - (0.5f64).sqrt() / (1.0 + 10f64.sqrt())).abs() < 1e-15);
        assert_eq!(p.errors(), vec![0.0, 1.0]);
        assert_eq!(sup_norm(&t, &a, 0.5, 1.0), Some(17f64.sqrt()));
        assert_eq!(max_peak_to_peak(&t, &a, 0.0, 1.0), Some(2.0));
        assert_eq!(sup_norm(&t, &a, 2.0, 3.0), None);
    }

    proptest! {
        #[test]
        fn l1_is_a_bounded_metric(a in prop::collection::vec(0.0..5.0f64, 8), b in prop::collection::vec(0.0..5.0f64, 8)) {
            prop_assume!(a.iter().sum::<f64>() > 0.1 && b.iter().sum::<f64>() > 0.1);
            let d = normalized_l1(&a, &b, 0.25);
            prop_assert!((0.0..=2.0 + 1e-12).contains(&d));
            prop_assert!(normalized_l1(&a, &a, 0.25) < 1e-12);
            prop_assert!((d - normalized_l1(&b, &a, 0.25)).abs() < 1e-12);
        }

        #[test]
        fn modes_never_exceed_half_the_bins(c in prop::collection::vec(0usize..50, 1..40)) {
            let h = hist(&c);
            prop_assert!(h.modes(0.0).len() <= c.len().div_ceil(2));
        }
    }
}
