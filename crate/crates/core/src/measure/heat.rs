use std::f64::consts::{E, PI};

use crate::error::{domain, Result};

/// Gaussian density with covariance `t I` in dimension `x.len()`.
pub fn heat_kernel(t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(domain(format!(
            "heat kernel time must be positive, got {t}"
        )));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok((2.0 * PI * t).powf(-(x.len() as f64) / 2.0) * (-r2 / (2.0 * t)).exp())
}

/// `p_t` evaluated at any point of norm `r` in dimension `d`.
pub fn heat_kernel_radial(t: f64, r: f64, d: usize) -> Result<f64> {
    if !(t > 0.0) {
        return Err(domain(format!(
            "heat kernel time must be positive, got {t}"
        )));
    }
    Ok((2.0 * PI * t).powf(-(d as f64) / 2.0) * (-r * r / (2.0 * t)).exp())
}

/// `p_t(x + y) / p_{2t}(x)`.
pub fn kernel_domination_ratio(t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(domain("x and y must have the same dimension"));
    }
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    let num = heat_kernel(t, &xy)?;
    let den = heat_kernel(2.0 * t, x)?;
    Ok(num / den)
}

/// The constant `2^{d/2} e` dominating `p_t(x + y) / p_{2t}(x)` for `|y|^2 <= t`.
pub fn kernel_domination_bound(d: usize) -> f64 {
    2f64.powf(d as f64 / 2.0) * E
}

/// Supremum of `p_t(x + y)/p_{2t}(x)` over `|y|^2 <= t`, by numerical
/// maximisation. The ratio depends on `(x, y)` only through `|x|/sqrt(t)`,
/// `|y|/sqrt(t)` and the angle between them, and is maximised with `y`
/// pointing at the origin; a golden-section search over `u = |x|/sqrt(t)`
/// then finds the peak.
pub fn max_kernel_domination_ratio(d: usize) -> f64 {
    // log ratio with |y| = sqrt(t) pointing at the origin, t = 1
    let log_ratio = |u: f64| {
        let near = (u - 1.0).max(0.0);
        (d as f64 / 2.0) * 2f64.ln() - near * near / 2.0 + u * u / 4.0
    };
    let (mut a, mut b) = (0.0f64, 20.0f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let e = a + g * (b - a);
        if log_ratio(c) > log_ratio(e) {
            b = e;
        } else {
            a = c;
        }
    }
    log_ratio(0.5 * (a + b)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};

    #[test]
    fn value_at_origin() {
        let v = heat_kernel(1.0, &[0.0; 3]).unwrap();
        assert!((v - 0.063_493_635_934_240_97).abs() < 1e-15);
        assert!(heat_kernel(-1.0, &[0.0]).is_err());
        assert_eq!(heat_kernel(0.3, &[60.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    fn grid_integral_3d(f: impl Fn(&[f64]) -> f64, half: f64, n: usize) -> f64 {
        let h = 2.0 * half / n as f64;
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let x = [
                        -half + (i as f64 + 0.5) * h,
                        -half + (j as f64 + 0.5) * h,
                        -half + (k as f64 + 0.5) * h,
                    ];
                    sum += f(&x);
                }
            }
        }
        sum * h * h * h
    }

    #[test]
    fn normalised_on_grid() {
        let total = grid_integral_3d(|x| heat_kernel(0.5, x).unwrap(), 6.0, 120);
        assert!((total - 1.0).abs() < 1e-8, "{total}");
    }

    #[test]
    fn semigroup_property() {
        // 1-d midpoint rule: smooth Gaussian integrands converge spectrally
        let (s, t) = (0.3, 0.9);
        for x in [0.0, 0.4, 1.7] {
            let n = 4000;
            let half = 12.0;
            let h = 2.0 * half / n as f64;
            let conv: f64 = (0..n)
                .map(|i| {
                    let y = -half + (i as f64 + 0.5) * h;
                    heat_kernel(s, &[x - y]).unwrap() * heat_kernel(t, &[y]).unwrap()
                })
                .sum::<f64>()
                * h;
            assert!((conv - heat_kernel(s + t, &[x]).unwrap()).abs() < 1e-6);
        }
        let x = [0.2, -0.5, 0.1];
        let conv = grid_integral_3d(
            |y| {
                let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
                heat_kernel(s, &d).unwrap() * heat_kernel(t, y).unwrap()
            },
            6.0,
            140,
        );
        assert!((conv - heat_kernel(s + t, &x).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn domination_ratio_bounded_on_random_samples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut sup: f64 = 0.0;
        for _ in 0..200_000 {
            let t: f64 = rng.random_range(0.01..10.0);
            let x: Vec<f64> = (0..3)
                .map(|_| rng.random_range(-4.0..4.0) * t.sqrt())
                .collect();
            let mut y: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = rng.random_range(0.0..1.0) * t.sqrt() / n;
            y.iter_mut().for_each(|v| *v *= scale);
            sup = sup.max(kernel_domination_ratio(t, &x, &y).unwrap());
        }
        let peak = max_kernel_domination_ratio(3);
        assert!(sup <= peak * (1.0 + 1e-9));
        assert!(peak <= kernel_domination_bound(3) + 1e-9);
        // analytic peak 2^{d/2} e^{1/2} at |x| = 2 sqrt(t)
        assert!((peak - 2f64.powf(1.5) * 0.5f64.exp()).abs() < 1e-9);
    }
}
