//! Critical heavy-tailed offspring law with generating function
//! `g(s) = s + (1 - s)^{1+beta} / (1 + beta)`.
//!
//! Closed forms used throughout (k >= 1):
//!
//! * `P(K > k) = beta / (1+beta) * Gamma(k-beta) / (Gamma(1-beta) Gamma(k+1))`
//! * `E[K; K > k] = Gamma(k-beta) / (Gamma(1-beta) Gamma(k))`
//! * `p_k = beta Gamma(k-1-beta) / (Gamma(1-beta) Gamma(k+1))` for `k >= 2`

use rand::{Rng, RngExt};
use serde::Serialize;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{domain, Result};

/// Default number of explicitly tabulated probabilities.
pub const DEFAULT_TAIL_CUTOFF: usize = 4096;

/// `ln Gamma(x + a) - ln Gamma(x + b)`, accurate for large `x` where the
/// direct difference would cancel.
pub fn ln_gamma_ratio(x: f64, a: f64, b: f64) -> f64 {
    if x < 1000.0 {
        return ln_gamma(x + a) - ln_gamma(x + b);
    }
    // asymptotic series with Bernoulli polynomials B_2, B_3, B_4
    let b2 = |u: f64| u * u - u + 1.0 / 6.0;
    let b3 = |u: f64| u * u * u - 1.5 * u * u + 0.5 * u;
    let b4 = |u: f64| u.powi(4) - 2.0 * u.powi(3) + u * u - 1.0 / 30.0;
    (a - b) * x.ln() + (b2(a) - b2(b)) / (2.0 * x) - (b3(a) - b3(b)) / (6.0 * x * x)
        + (b4(a) - b4(b)) / (12.0 * x * x * x)
}

/// Offspring distribution of the particle scheme.
#[derive(Debug, Clone, Serialize)]
pub struct OffspringLaw {
    beta: f64,
    cutoff: usize,
    probs: Vec<f64>,
    cdf: Vec<f64>,
    ln_gamma_one_minus_beta: f64,
}

impl OffspringLaw {
    /// Tabulates `p_0..p_M` by the recursion `p_{k+1} = p_k (k-1-beta)/(k+1)`.
    pub fn new(beta: f64, cutoff: usize) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(domain(format!("beta must lie in (0,1), got {beta}")));
        }
        if cutoff < 2 {
            return Err(domain("tail cutoff must be at least 2"));
        }
        let mut probs = vec![0.0; cutoff + 1];
        probs[0] = 1.0 / (1.0 + beta);
        probs[2] = beta / 2.0;
        for k in 2..cutoff {
            probs[k + 1] = probs[k] * (k as f64 - 1.0 - beta) / (k as f64 + 1.0);
        }
        let cdf = probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            beta,
            cutoff,
            probs,
            cdf,
            ln_gamma_one_minus_beta: ln_gamma(1.0 - beta),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Tabulated `p_0..p_M`.
    pub fn table(&self) -> &[f64] {
        &self.probs
    }

    /// `p_k` for any `k`, from the table or the closed form beyond it.
    pub fn prob(&self, k: u64) -> f64 {
        match k {
            k if (k as usize) <= self.cutoff => self.probs[k as usize],
            k => {
                let x = k as f64;
                (self.beta.ln() + ln_gamma_ratio(x, -1.0 - self.beta, 1.0)
                    - self.ln_gamma_one_minus_beta)
                    .exp()
            }
        }
    }

    /// `P(K > k)`.
    pub fn tail(&self, k: u64) -> f64 {
        self.ln_tail(k).exp()
    }

    fn ln_tail(&self, k: u64) -> f64 {
        let b = self.beta;
        if k == 0 {
            return (b / (1.0 + b)).ln();
        }
        (b / (1.0 + b)).ln() + ln_gamma_ratio(k as f64, -b, 1.0) - self.ln_gamma_one_minus_beta
    }

    /// `E[K; K > k]`, the size-biased tail weight.
    pub fn tail_mean(&self, k: u64) -> f64 {
        if k == 0 {
            return 1.0;
        }
        self.ln_tail_mean(k).exp()
    }

    fn ln_tail_mean(&self, k: u64) -> f64 {
        ln_gamma_ratio(k as f64, -self.beta, 0.0) - self.ln_gamma_one_minus_beta
    }

    /// `E[(K-1); K > k]`: mean net mass (in particles) of events with more
    /// than `k` offspring.
    pub fn tail_net_mean(&self, k: u64) -> f64 {
        self.tail_mean(k) - self.tail(k)
    }

    /// Draws `K`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        self.invert(u, rng)
    }

    /// Draws `K` conditioned on `K >= 2`.
    pub fn sample_at_least_two<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        self.invert(self.probs[0] + u * (1.0 - self.probs[0]), rng)
    }

    fn invert<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> u64 {
        if u < self.cdf[0] {
            return 0;
        }
        if u < self.cdf[2] {
            return 2;
        }
        if u >= self.cdf[self.cutoff] {
            return self.sample_tail_above(self.cutoff as u64, rng);
        }
        // smallest k with cdf[k] > u
        let idx = self.cdf[3..=self.cutoff].partition_point(|c| *c <= u);
        (idx + 3) as u64
    }

    /// Draws `K` conditioned on `K > m` by inverting the closed-form tail.
    pub fn sample_tail_above<R: Rng + ?Sized>(&self, m: u64, rng: &mut R) -> u64 {
        let u: f64 = 1.0 - rng.random::<f64>();
        let level = u.ln() + self.ln_tail(m);
        invert_decreasing(m, level, |k| self.ln_tail(k))
    }

    /// Draws from the size-biased law `k p_k / E[K; K > m]` on `k > m`.
    pub fn sample_size_biased_above<R: Rng + ?Sized>(&self, m: u64, rng: &mut R) -> u64 {
        let m = m.max(1);
        let u: f64 = 1.0 - rng.random::<f64>();
        let level = u.ln() + self.ln_tail_mean(m);
        invert_decreasing(m, level, |k| self.ln_tail_mean(k))
    }
}

/// Smallest `k > m` with `ln_tail(k) < level`, for a strictly decreasing
/// `ln_tail`. Saturates at `u64::MAX / 2` for astronomically small levels.
fn invert_decreasing(m: u64, level: f64, ln_tail: impl Fn(u64) -> f64) -> u64 {
    const CEILING: u64 = u64::MAX / 2;
    let mut lo = m; // ln_tail(lo) >= level
    let mut hi = m.saturating_add(1).max(2);
    while ln_tail(hi) >= level {
        lo = hi;
        if hi >= CEILING {
            return CEILING;
        }
        hi = hi.saturating_mul(2).min(CEILING);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ln_tail(mid) >= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// `Gamma(1 - beta)`, exposed for the jump-rate constants.
pub fn gamma_one_minus(beta: f64) -> f64 {
    gamma(1.0 - beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replicate_rng;

    /// Coefficients of `g` by a discrete Cauchy integral on the circle
    /// `|s| = r`, using only the generating function itself.
    fn pgf_coefficients(beta: f64, kmax: usize) -> Vec<f64> {
        let n = 1 << 14;
        let r: f64 = 0.85;
        let mut coef = vec![0.0; kmax + 1];
        for j in 0..n {
            let th = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            let (sr, si) = (r * th.cos(), r * th.sin());
            // (1 - s)^{1+beta} on the principal branch
            let (zr, zi) = (1.0 - sr, -si);
            let (lnr, arg) = ((zr * zr + zi * zi).sqrt().ln(), zi.atan2(zr));
            let a = 1.0 + beta;
            let mag = (a * lnr).exp() / (1.0 + beta);
            let (gr, gi) = (sr + mag * (a * arg).cos(), si + mag * (a * arg).sin());
            for (k, c) in coef.iter_mut().enumerate() {
                let ph = -(k as f64) * th;
                *c += gr * ph.cos() - gi * ph.sin();
            }
        }
        coef.iter()
            .enumerate()
            .map(|(k, c)| c / n as f64 / r.powi(k as i32))
            .collect()
    }

    #[test]
    fn table_matches_generating_function() {
        let law = OffspringLaw::new(0.8, 64).unwrap();
        let coef = pgf_coefficients(0.8, 30);
        for k in 0..=30 {
            assert!((law.prob(k as u64) - coef[k]).abs() < 1e-10, "k={k}");
        }
        assert!((law.prob(0) - 1.0 / 1.8).abs() < 1e-15);
        assert_eq!(law.prob(1), 0.0);
        assert!((law.prob(2) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn closed_forms_agree_with_table() {
        for beta in [0.3, 0.55, 0.8, 0.95] {
            let law = OffspringLaw::new(beta, 2000).unwrap();
            let ln_g = ln_gamma(1.0 - beta);
            for k in [2u64, 3, 10, 500, 2000] {
                let closed =
                    (beta.ln() + ln_gamma(k as f64 - 1.0 - beta) - ln_gamma(k as f64 + 1.0) - ln_g)
                        .exp();
                assert!((law.table()[k as usize] / closed - 1.0).abs() < 1e-10);
            }
            // tail beyond the table continues the closed form
            let p = law.prob(2001);
            let q = law.table()[2000] * (2000.0 - 1.0 - beta) / 2001.0;
            assert!((p / q - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn normalisation_and_criticality() {
        for beta in [0.2, 0.5, 0.8, 0.99] {
            let law = OffspringLaw::new(beta, DEFAULT_TAIL_CUTOFF).unwrap();
            let m = law.cutoff() as u64;
            let mass: f64 = law.table().iter().sum::<f64>() + law.tail(m);
            let mean: f64 = law
                .table()
                .iter()
                .enumerate()
                .map(|(k, p)| k as f64 * p)
                .sum::<f64>()
                + law.tail_mean(m);
            assert!((mass - 1.0).abs() < 1e-12, "beta={beta}: {mass}");
            assert!((mean - 1.0).abs() < 1e-10, "beta={beta}: {mean}");
        }
    }

    #[test]
    fn ratio_asymptotics_are_accurate() {
        for x in [1000.0, 5e3, 1e6, 1e12] {
            for (a, b) in [(-0.8, 1.0), (-1.8, 1.0), (-0.3, 0.0)] {
                let series = ln_gamma_ratio(x, a, b);
                // compare against the recursion Gamma(x+1+a)/Gamma(x+1+b)
                let shifted = ln_gamma_ratio(x + 1.0, a, b) - ((x + a).ln() - (x + b).ln());
                assert!((series - shifted).abs() < 1e-12);
            }
        }
        let direct = ln_gamma(1000.0 - 0.8) - ln_gamma(1001.0);
        assert!((ln_gamma_ratio(1000.0, -0.8, 1.0) - direct).abs() < 1e-11);
    }

    #[test]
    fn tail_sampler_matches_tail_probabilities() {
        let law = OffspringLaw::new(0.8, 16).unwrap();
        let mut rng = replicate_rng(3, 0);
        let n = 400_000;
        let draws: Vec<u64> = (0..n).map(|_| law.sample(&mut rng)).collect();
        for k in [0u64, 1, 2, 5, 16, 40, 200] {
            let emp = draws.iter().filter(|&&x| x > k).count() as f64 / n as f64;
            let p = law.tail(k);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((emp - p).abs() < 4.0 * se + 1e-12, "k={k}: {emp} vs {p}");
        }
        assert!(draws.iter().all(|&k| k != 1));
    }

    #[test]
    fn size_biased_sampler_matches_weights() {
        let law = OffspringLaw::new(0.8, 64).unwrap();
        let mut rng = replicate_rng(4, 0);
        let m = 10;
        let n = 200_000;
        let draws: Vec<u64> = (0..n)
            .map(|_| law.sample_size_biased_above(m, &mut rng))
            .collect();
        assert!(draws.iter().all(|&k| k > m));
        for k in [11u64, 20, 100, 1000] {
            let emp = draws.iter().filter(|&&x| x > k).count() as f64 / n as f64;
            let p = law.tail_mean(k) / law.tail_mean(m);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((emp - p).abs() < 4.0 * se + 1e-12, "k={k}: {emp} vs {p}");
        }
    }

    #[test]
    fn rejects_bad_beta() {
        assert!(OffspringLaw::new(1.0, 10).is_err());
        assert!(OffspringLaw::new(0.0, 10).is_err());
        assert!(OffspringLaw::new(0.5, 1).is_err());
    }
}
