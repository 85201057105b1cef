//! Streaming accumulators and small statistical helpers.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

/// Log-log least-squares slope of `deviations` against `scales`.
///
/// A positive value `p` means `deviation ~ scale^p`. Points with a zero
/// deviation are skipped; if every deviation is zero the order is infinite.
pub fn convergence_order(scales: &[f64], deviations: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = scales
        .iter()
        .zip(deviations)
        .filter(|(_, &d)| d > 0.0)
        .map(|(&s, &d)| (s.ln(), d.ln()))
        .collect();
    if pts.is_empty() {
        return f64::INFINITY;
    }
    if pts.len() == 1 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Running `log sum exp(w_i)` together with `sum exp(2 w_i)` for the
/// effective sample size. Merging is exact up to rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSumExp {
    count: u64,
    shift: f64,
    sum: f64,
    sum_sq: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        LogSumExp {
            count: 0,
            shift: f64::NEG_INFINITY,
            sum: 0.0,
            sum_sq: 0.0,
        }
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, w: f64) {
        self.count += 1;
        if w > self.shift {
            let r = (self.shift - w).exp();
            self.sum = self.sum * r + 1.0;
            self.sum_sq = self.sum_sq * r * r + 1.0;
            self.shift = w;
        } else {
            let e = (w - self.shift).exp();
            self.sum += e;
            self.sum_sq += e * e;
        }
    }

    pub fn merge(&mut self, other: &LogSumExp) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let shift = self.shift.max(other.shift);
        let ra = (self.shift - shift).exp();
        let rb = (other.shift - shift).exp();
        self.sum = self.sum * ra + other.sum * rb;
        self.sum_sq = self.sum_sq * ra * ra + other.sum_sq * rb * rb;
        self.shift = shift;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `log sum_i exp(w_i)`.
    pub fn log_sum(&self) -> f64 {
        if self.count == 0 {
            return f64::NEG_INFINITY;
        }
        self.shift + self.sum.ln()
    }

    /// `log (1/n) sum_i exp(w_i)`.
    pub fn log_mean(&self) -> f64 {
        self.log_sum() - (self.count as f64).ln()
    }

    /// Kish effective sample size `(sum e^w)^2 / sum e^{2w}`.
    pub fn effective_sample_size(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.sum * self.sum / self.sum_sq
    }
}

/// Delete-one-group jackknife of `log mean exp` over group accumulators.
///
/// Returns `(estimate from all groups, standard error)`.
pub fn jackknife_log_mean(groups: &[LogSumExp]) -> (f64, f64) {
    let mut all = LogSumExp::new();
    for g in groups {
        all.merge(g);
    }
    let full = all.log_mean();
    let k = groups.len();
    if k < 2 {
        return (full, f64::INFINITY);
    }
    let leave_out: Vec<f64> = (0..k)
        .map(|skip| {
            let mut acc = LogSumExp::new();
            for (i, g) in groups.iter().enumerate() {
                if i != skip {
                    acc.merge(g);
                }
            }
            acc.log_mean()
        })
        .collect();
    (full, jackknife_stderr(&leave_out))
}

/// Jackknife standard error from leave-one-out replicates.
pub fn jackknife_stderr(leave_out: &[f64]) -> f64 {
    let k = leave_out.len() as f64;
    if leave_out.len() < 2 {
        return f64::INFINITY;
    }
    let mean = leave_out.iter().sum::<f64>() / k;
    let ss: f64 = leave_out.iter().map(|x| (x - mean) * (x - mean)).sum();
    ((k - 1.0) / k * ss).sqrt()
}

/// Mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Two-sided Kolmogorov–Smirnov distance between the sample and `cdf`.
/// Sorts `sample` in place.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sample.len() {
        // ties: the empirical cdf jumps once over the whole run
        let x = sample[i];
        let mut j = i;
        while j < sample.len() && sample[j] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max(j as f64 / n - f);
        i = j;
    }
    d
}

/// Upper 1% point of the Kolmogorov distribution, `K_{0.99} = 1.6276`.
pub const KOLMOGOROV_99: f64 = 1.627_624;

/// Critical KS distance at the 1% level for `n` samples, with Stephens'
/// finite-sample correction.
pub fn ks_critical_1pct(n: usize) -> f64 {
    let rn = (n as f64).sqrt();
    KOLMOGOROV_99 / (rn + 0.12 + 0.11 / rn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn order_of_power_law() {
        let e = [0.1, 0.05, 0.025];
        let d: Vec<f64> = e.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        assert!((convergence_order(&e, &d) - 2.0).abs() < 1e-12);
        assert_eq!(convergence_order(&e, &[0.0; 3]), f64::INFINITY);
    }

    #[test]
    fn log_sum_exp_handles_large_weights() {
        let mut a = LogSumExp::new();
        for w in [1000.0, 1000.0, 999.0] {
            a.push(w);
        }
        let expected = 1000.0 + (2.0 + (-1.0f64).exp()).ln();
        assert!((a.log_sum() - expected).abs() < 1e-12);
        assert_eq!(a.count(), 3);
    }

    #[test]
    fn equal_weights_have_full_ess_and_zero_log_mean() {
        let mut a = LogSumExp::new();
        for _ in 0..10 {
            a.push(0.0);
        }
        assert_eq!(a.log_mean(), 0.0);
        assert!((a.effective_sample_size() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let mut xs: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                // invert the logistic as a stand-in distribution
                (p / (1.0 - p)).ln()
            })
            .collect();
        let d = ks_statistic(&mut xs, |x| 1.0 / (1.0 + (-x).exp()));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn ks_counts_ties_once() {
        let mut xs = [0.0; 10];
        let d = ks_statistic(&mut xs, normal_cdf);
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-12);
    }

    #[test]
    fn critical_value_shape() {
        assert!((ks_critical_1pct(10_000) - 1.627_624 / 100.121_1).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn merge_matches_pooled(ws in proptest::collection::vec(-50.0f64..50.0, 1..60), split in 0usize..60) {
            let split = split.min(ws.len());
            let mut pooled = LogSumExp::new();
            ws.iter().for_each(|&w| pooled.push(w));
            let (l, r) = ws.split_at(split);
            let mut a = LogSumExp::new();
            let mut b = LogSumExp::new();
            l.iter().for_each(|&w| a.push(w));
            r.iter().for_each(|&w| b.push(w));
            let mut ab = a;
            ab.merge(&b);
            let mut ba = b;
            ba.merge(&a);
            prop_assert!((ab.log_sum() - pooled.log_sum()).abs() < 1e-12);
            prop_assert!((ba.log_sum() - pooled.log_sum()).abs() < 1e-12);
            prop_assert!((ab.effective_sample_size() - pooled.effective_sample_size()).abs() < 1e-9);
            prop_assert_eq!(ab.count(), ws.len() as u64);
        }
    }
}
