//! Closed-form references for the total-mass process, both in the
//! continuum limit and at finite particle resolution.

use statrs::function::gamma::gamma;

use crate::offspring::OffspringLaw;

/// `v_0(t, theta) = (theta^{-beta} + beta t)^{-1/beta}`, the solution of
/// `v' = -v^{1+beta}` started at `theta`.
pub fn v0(t: f64, theta: f64, beta: f64) -> f64 {
    (theta.powf(-beta) + beta * t).powf(-1.0 / beta)
}

/// `E exp(-lambda |xi_t|)` for `xi_0` of mass `m`.
pub fn mass_laplace_oracle(m: f64, t: f64, lambda: f64, beta: f64) -> f64 {
    (-m * v0(t, lambda, beta)).exp()
}

/// `P(|xi_t| = 0)` for `xi_0` of mass `m`.
pub fn extinction_prob_oracle(m: f64, t: f64, beta: f64) -> f64 {
    (-m * (beta * t).powf(-1.0 / beta)).exp()
}

/// `(beta h)^{1/beta}`: the continuum cluster normaliser.
pub fn cluster_normalizer(h: f64, beta: f64) -> f64 {
    (beta * h).powf(1.0 / beta)
}

/// Probability that one particle has descendants alive `tau` later:
/// `w^{-beta} = 1 + beta N^beta tau`.
pub fn particle_survival(tau: f64, beta: f64, mass_scale: u64) -> f64 {
    let n = mass_scale as f64;
    (1.0 + beta * n.powf(beta) * tau).powf(-1.0 / beta)
}

/// Exact `E exp(-lambda |xi_t|)` for the particle system started from
/// `round(m N)` particles.
pub fn particle_mass_laplace(m: f64, t: f64, lambda: f64, beta: f64, mass_scale: u64) -> f64 {
    let n = mass_scale as f64;
    let w0 = -(-lambda / n).exp_m1();
    let nw = ((n * w0).powf(-beta) + beta * t).powf(-1.0 / beta);
    let particles = (m * n).round();
    (particles * (-nw / n).ln_1p()).exp()
}

/// Exact extinction probability of the particle system by time `t`.
pub fn particle_extinction_prob(m: f64, t: f64, beta: f64, mass_scale: u64) -> f64 {
    let w = particle_survival(t, beta, mass_scale);
    let particles = (m * mass_scale as f64).round();
    (particles * (-w).ln_1p()).exp()
}

/// Particle-level normaliser `a_N(h) = -1 / (N log(1 - w(h)))`, so that
/// the number of surviving ancestors from mass `m` has mean close to `m / a_N(h)`.
pub fn particle_cluster_normalizer(h: f64, beta: f64, mass_scale: u64) -> f64 {
    let w = particle_survival(h, beta, mass_scale);
    -1.0 / (mass_scale as f64 * (-w).ln_1p())
}

/// `c_beta = beta (1+beta) / Gamma(1-beta)`, the density constant of the
/// jump measure `c_beta r^{-2-beta} dr`.
pub fn c_beta(beta: f64) -> f64 {
    beta * (1.0 + beta) / gamma(1.0 - beta)
}

/// `int_0^inf (e^{-lambda r} - 1 + lambda r) c_beta r^{-2-beta} dr` by the
/// trapezoidal rule in `s = log r`, where the integrand decays exponentially
/// at both ends. Equals `lambda^{1+beta}` when `c_beta` is right.
pub fn levy_laplace_exponent(lambda: f64, beta: f64) -> f64 {
    let f = |s: f64| {
        let r = s.exp();
        let x = lambda * r;
        if x < 1e-3 {
            // series form avoids 0 * inf for tiny r
            0.5 * lambda * lambda * (x * (1.0 / 3.0 - x / 12.0)).mul_add(-1.0, 1.0)
                * ((1.0 - beta) * s).exp()
        } else {
            ((-x).exp_m1() + x) * r.powf(-1.0 - beta)
        }
    };
    // centre the window on the integrand's peak near r = 1/lambda
    let c = -lambda.ln();
    let (lo, hi) = (c - 40.0 / (1.0 - beta), c + 40.0 / beta);
    let h = 0.02;
    let n = ((hi - lo) / h).ceil() as usize;
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum();
    c_beta(beta) * h * (inner + 0.5 * (f(lo) + f(hi)))
}

/// Expected number of jumps larger than `r` per unit of `int |xi_s| ds`:
/// `c_beta r^{-1-beta} / (1+beta)`.
pub fn jump_tail_rate(r: f64, beta: f64) -> f64 {
    c_beta(beta) * r.powf(-1.0 - beta) / (1.0 + beta)
}

/// Particle-level counterpart of [`jump_tail_rate`]: `N rho P(K - 1 > rN)`.
pub fn particle_jump_tail_rate(r: f64, law: &OffspringLaw, mass_scale: u64) -> f64 {
    let n = mass_scale as f64;
    let rho = (1.0 + law.beta()) * n.powf(law.beta());
    let kr = (r * n * (1.0 + 1e-15)).floor() as u64 + 1;
    n * rho * law.tail(kr)
}

/// Exponential decay rate of `E |xi^K_t|`:
/// `C_K = rho sum_{(k-1)/N > K} (k-1) p_k`.
pub fn k_process_decay_rate(law: &OffspringLaw, mass_scale: u64, truncation: f64) -> f64 {
    let n = mass_scale as f64;
    let rho = (1.0 + law.beta()) * n.powf(law.beta());
    let kstar = (truncation * n * (1.0 + 1e-15)).floor() as u64 + 1;
    rho * law.tail_net_mean(kstar)
}

/// Rate (per particle) of truncated events: `rho P(K > kstar)`.
pub fn truncated_event_rate(law: &OffspringLaw, mass_scale: u64, truncation: f64) -> f64 {
    let n = mass_scale as f64;
    let rho = (1.0 + law.beta()) * n.powf(law.beta());
    let kstar = (truncation * n * (1.0 + 1e-15)).floor() as u64 + 1;
    rho * law.tail(kstar)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Classical RK4 for `v' = -v^{1+beta}`.
    fn rk4(theta: f64, t: f64, beta: f64, steps: usize) -> f64 {
        let f = |v: f64| -v.powf(1.0 + beta);
        let h = t / steps as f64;
        let mut v = theta;
        for _ in 0..steps {
            let k1 = f(v);
            let k2 = f(v + 0.5 * h * k1);
            let k3 = f(v + 0.5 * h * k2);
            let k4 = f(v + h * k3);
            v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        v
    }

    #[test]
    fn v0_matches_integrator() {
        for beta in [0.5, 0.8] {
            for theta in [0.1, 1.0, 5.0] {
                for t in [0.1, 0.5, 2.0] {
                    let a = v0(t, theta, beta);
                    let b = rk4(theta, t, beta, 20_000);
                    assert!((a - b).abs() < 1e-10, "{beta} {theta} {t}: {a} {b}");
                }
            }
        }
    }

    #[test]
    fn laplace_reference_values() {
        assert!((mass_laplace_oracle(2.0, 0.0, 0.7, 0.8) - (-1.4f64).exp()).abs() < 1e-15);
        let want = (-(1.4f64).powf(-1.25)).exp();
        assert!((mass_laplace_oracle(1.0, 0.5, 1.0, 0.8) - want).abs() < 1e-15);
        // lambda -> infinity, beta = 0.5, t = 2: exponent (0.5*2)^{-2} = 1
        assert!((mass_laplace_oracle(1.0, 2.0, 1e24, 0.5) - (-1.0f64).exp()).abs() < 1e-9);
        assert!((extinction_prob_oracle(1.0, 1.25, 0.8) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn particle_forms_converge_to_continuum() {
        for (m, t, lam) in [(0.5, 0.25, 0.5), (1.0, 1.0, 2.0)] {
            let c = mass_laplace_oracle(m, t, lam, 0.8);
            let p = particle_mass_laplace(m, t, lam, 0.8, 1_000_000_000);
            assert!((c - p).abs() < 1e-6);
        }
        let c = extinction_prob_oracle(1.0, 1.0, 0.8);
        let p = particle_extinction_prob(1.0, 1.0, 0.8, 1_000_000_000);
        assert!((c - p).abs() < 1e-6);
        let a = particle_cluster_normalizer(0.01, 0.8, 1_000_000_000);
        assert!((a / cluster_normalizer(0.01, 0.8) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn particle_jump_rate_tends_to_levy_tail() {
        let law = OffspringLaw::new(0.8, 4096).unwrap();
        for r in [0.01, 0.1] {
            let p = particle_jump_tail_rate(r, &law, 1_000_000);
            let c = jump_tail_rate(r, 0.8);
            assert!((p / c - 1.0).abs() < 0.01, "{r}: {p} vs {c}");
        }
    }

    #[test]
    fn levy_identity_holds() {
        for beta in [0.3, 0.5, 0.8, 0.95] {
            for lambda in [0.1, 1.0, 7.0] {
                let q = levy_laplace_exponent(lambda, beta);
                let exact = lambda.powf(1.0 + beta);
                assert!((q / exact - 1.0).abs() < 1e-8, "{beta} {lambda}: {q} vs {exact}");
            }
        }
    }
}
