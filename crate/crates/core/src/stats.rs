//! Running statistics and goodness-of-fit helpers.

use serde::Serialize;

/// Sufficient statistics (count, sum, sum of squares) with Neumaier
/// compensation, so estimates merged across batches agree with a single
/// sequential pass to within an ulp.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RunningStats {
    pub n: u64,
    sum: f64,
    sum_c: f64,
    sumsq: f64,
    sumsq_c: f64,
}

fn neumaier(acc: &mut f64, comp: &mut f64, v: f64) {
    let t = *acc + v;
    if acc.abs() >= v.abs() {
        *comp += (*acc - t) + v;
    } else {
        *comp += (v - t) + *acc;
    }
    *acc = t;
}

impl RunningStats {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        neumaier(&mut self.sum, &mut self.sum_c, v);
        neumaier(&mut self.sumsq, &mut self.sumsq_c, v * v);
    }

    /// Merge another batch (merge order must be fixed by the caller).
    pub fn merge(&mut self, other: &RunningStats) {
        self.n += other.n;
        neumaier(&mut self.sum, &mut self.sum_c, other.sum);
        neumaier(&mut self.sum, &mut self.sum_c, other.sum_c);
        neumaier(&mut self.sumsq, &mut self.sumsq_c, other.sumsq);
        neumaier(&mut self.sumsq, &mut self.sumsq_c, other.sumsq_c);
    }

    pub fn total(&self) -> f64 {
        self.sum + self.sum_c
    }

    pub fn mean(&self) -> f64 {
        self.total() / self.n as f64
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let mean = self.mean();
        ((self.sumsq + self.sumsq_c) - n * mean * mean) / (n - 1.0)
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        (self.variance() / self.n as f64).max(0.0).sqrt()
    }
}

/// One-sample KS statistic against the unit exponential.
pub fn ks_exponential(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let cdf = -(-x).exp_m1();
        d = d.max(cdf - i as f64 / n).max((i + 1) as f64 / n - cdf);
    }
    d
}

/// One-sample KS statistic against the uniform law on `[0, hi]`.
pub fn ks_uniform(samples: &mut [f64], hi: f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let cdf = (x / hi).clamp(0.0, 1.0);
        d = d.max(cdf - i as f64 / n).max((i + 1) as f64 / n - cdf);
    }
    d
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value of the one-sample KS statistic at level 1%.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// Asymptotic critical value of the two-sample KS statistic at level 1%.
pub fn ks_two_sample_critical_1pct(n: usize, m: usize) -> f64 {
    1.63 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Pearson chi-square statistic for observed counts against expected
/// probabilities (cells with negligible expectation are pooled away).
pub fn chi_square(observed: &[u64], expected_probs: &[f64]) -> (f64, usize) {
    let total: u64 = observed.iter().sum();
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (o, p) in observed.iter().zip(expected_probs.iter()) {
        let e = p * total as f64;
        if e > 1e-9 {
            stat += (*o as f64 - e) * (*o as f64 - e) / e;
            dof += 1;
        }
    }
    (stat, dof.saturating_sub(1))
}

/// Upper 1% quantiles of the chi-square law, dof 1..=8.
pub const CHI2_CRIT_99: [f64; 8] = [6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn running_stats_match_direct_formulas() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let mut st = RunningStats::default();
        for &x in &xs {
            st.push(x);
        }
        assert_relative_eq!(st.mean(), 3.75);
        assert_relative_eq!(st.variance(), 9.583333333333334, max_relative = 1e-12);
    }

    #[test]
    fn merge_is_order_insensitive_to_an_ulp() {
        let mut rng = crate::rng::single(5);
        use rand::Rng;
        let xs: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() * 1e6).collect();
        let mut single = RunningStats::default();
        for &x in &xs {
            single.push(x);
        }
        let mut parts: Vec<RunningStats> = Vec::new();
        for chunk in xs.chunks(1000) {
            let mut s = RunningStats::default();
            for &x in chunk {
                s.push(x);
            }
            parts.push(s);
        }
        let mut merged = RunningStats::default();
        for p in &parts {
            merged.merge(p);
        }
        assert!((merged.mean() - single.mean()).abs() <= 1e-12 * single.mean().abs());
        assert!((merged.variance() - single.variance()).abs() <= 1e-9 * single.variance());
    }

    #[test]
    fn ks_uniform_detects_shift() {
        let mut close: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_uniform(&mut close, 1.0) < 0.01);
        let mut shifted: Vec<f64> = (0..1000).map(|i| ((i as f64 + 0.5) / 1000.0).powi(2)).collect();
        assert!(ks_uniform(&mut shifted, 1.0) > 0.2);
    }

    #[test]
    fn ks_exponential_on_exact_quantiles() {
        let mut qs: Vec<f64> = (0..2000)
            .map(|i| -(1.0 - (i as f64 + 0.5) / 2000.0).ln())
            .collect();
        assert!(ks_exponential(&mut qs) < 0.001);
    }
}
