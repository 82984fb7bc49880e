//! Streaming moments, Monte-Carlo estimates, regression and two-sample tests.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Monte-Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub stderr: f64,
    pub reps: u64,
}

impl EstimateWithError {
    pub fn new(value: f64, stderr: f64, reps: u64) -> Self {
        Self {
            value,
            stderr,
            reps,
        }
    }

    /// Sample mean with standard error `sd / sqrt(n)`.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let stats: RunningStats = samples.iter().copied().collect();
        stats.estimate()
    }

    /// Number of standard errors separating the estimate from `target`.
    /// `floor` guards against a zero standard error.
    pub fn z_score(&self, target: f64, floor: f64) -> f64 {
        (self.value - target).abs() / self.stderr.max(floor)
    }

    pub fn within(&self, target: f64, n_sigma: f64) -> bool {
        (self.value - target).abs() <= n_sigma * self.stderr
    }
}

/// Welford accumulator with an associative merge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        Self { n, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (0 for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> Result<EstimateWithError> {
        if self.n < 2 {
            return Err(domain("an estimate needs at least two replicates"));
        }
        Ok(EstimateWithError::new(
            self.mean,
            (self.variance() / self.n as f64).sqrt(),
            self.n,
        ))
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// Standard error of a proportion under the hypothesised value `p0`.
/// Used when comparing event frequencies to an oracle, where the sample
/// proportion can legitimately be 0.
pub fn null_binomial_stderr(p0: f64, reps: u64) -> f64 {
    (p0 * (1.0 - p0) / reps as f64).sqrt()
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
}

/// Weighted least squares; weights are inverse variances of `y`.
/// With `weights = None` all points count equally and the slope error comes
/// from the residual scatter.
pub fn linear_fit(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(domain("linear fit needs two or more paired points"));
    }
    let w: Vec<f64> = match weights {
        Some(w) if w.len() == x.len() => w.to_vec(),
        Some(_) => return Err(domain("weights must match the data length")),
        None => vec![1.0; x.len()],
    };
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(domain("linear fit needs distinct abscissae"));
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(&w)
        .map(|((a, c), b)| b * (a - mx) * (c - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    // residual variance per unit weight: 1 for known weights, else estimated
    let sigma2 = if weights.is_some() {
        1.0
    } else if x.len() > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, c)| (c - intercept - slope * a).powi(2))
            .sum();
        rss / (x.len() - 2) as f64
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: (sigma2 / sxx).sqrt(),
        intercept_stderr: (sigma2 * (1.0 / sw + mx * mx / sxx)).sqrt(),
    })
}

/// Log-log slope fit of positive estimates against positive abscissae,
/// weighting each point by its relative standard error.
pub fn loglog_fit(x: &[f64], est: &[EstimateWithError]) -> Result<LinearFit> {
    if est.iter().any(|e| e.value <= 0.0) || x.iter().any(|&v| v <= 0.0) {
        return Err(domain("log-log fit needs positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = est.iter().map(|e| e.value.ln()).collect();
    let all_have_errors = est.iter().all(|e| e.stderr > 0.0);
    if all_have_errors {
        let w: Vec<f64> = est.iter().map(|e| (e.value / e.stderr).powi(2)).collect();
        linear_fit(&lx, &ly, Some(&w))
    } else {
        linear_fit(&lx, &ly, None)
    }
}

/// Result of a two-sample Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(domain("KS test needs nonempty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
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
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    })
}

/// Kolmogorov survival function `Q(x) = 2 sum (-1)^{k-1} exp(-2 k^2 x^2)`.
pub fn kolmogorov_q(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..200 {
        let term = (-2.0 * (k * k) as f64 * x * x).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn running_stats_match_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25];
        let s: RunningStats = xs.iter().copied().collect();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert_relative_eq!(s.mean(), mean, epsilon = 1e-14);
        assert_relative_eq!(s.variance(), var, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn merge_is_order_independent(xs in prop::collection::vec(-1e3f64..1e3, 2..60), split in 0usize..60) {
            let k = split.min(xs.len());
            let whole: RunningStats = xs.iter().copied().collect();
            let left: RunningStats = xs[..k].iter().copied().collect();
            let right: RunningStats = xs[k..].iter().copied().collect();
            let m1 = left.merge(&right);
            let m2 = right.merge(&left);
            prop_assert!((m1.mean() - whole.mean()).abs() < 1e-9);
            prop_assert!((m2.variance() - whole.variance()).abs() < 1e-6 * (1.0 + whole.variance()));
            prop_assert_eq!(m1.count(), whole.count());
        }
    }

    #[test]
    fn exact_line_is_recovered() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 1.8 * v).collect();
        let fit = linear_fit(&x, &y, None).unwrap();
        assert_relative_eq!(fit.slope, -1.8, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn kolmogorov_q_reference_values() {
        // Q(1.0) and Q(1.36) from the series, summed independently below.
        let direct = |x: f64| {
            2.0 * (1..50)
                .map(|k| (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * x * x).exp())
                .sum::<f64>()
        };
        assert_relative_eq!(kolmogorov_q(1.0), direct(1.0), epsilon = 1e-12);
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn ks_identical_samples_has_zero_statistic() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn ks_detects_shift() {
        let a: Vec<f64> = (0..400).map(|i| i as f64 / 400.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert_relative_eq!(r.statistic, 0.3, epsilon = 1e-2);
        assert!(r.p_value < 1e-6);
    }
}
