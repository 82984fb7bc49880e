//! Lebesgue measure of `eps`-neighbourhoods of atomic supports.

mod hash;
mod lebesgue;
mod overlap;
mod raster;
mod scaling;

pub use hash::{median_spacing, SpatialHash};
pub use lebesgue::{corrected_plateau, lebesgue_constant, lebesgue_ratios, LebesgueRow};
pub use overlap::{overlap_defect, overlap_ladder, snapshot_defects, OverlapLadder, OverlapReport};
pub use raster::{rasterize, Coverage, MAX_DIM, MIN_VOXELS_PER_EPS};
pub use scaling::{
    ensemble_scaling, scaling_curve, validity_band, Component, EnsembleCurve, EnsembleRow,
    EnsembleScaling, ScalingCurve, ScalingOptions, ScalingReport, ScalingRow, ValidityBand,
};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::measure::{AtomicMeasure, Window};

/// Bounded continuous test function with a product structure, so that sums
/// over boxes of voxels factor into per-axis sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// The constant 1.
    One,
    /// `prod_k (1 - ((x_k - c_k)/w)^2)_+^2`: a compactly supported bump of
    /// height 1 and half-width `w` in every coordinate.
    Bump { center: Vec<f64>, width: f64 },
}

impl TestFunction {
    /// Factor of the function along axis `k`.
    pub fn axis(&self, k: usize, x: f64) -> f64 {
        match self {
            Self::One => 1.0,
            Self::Bump { center, width } => {
                let u = (x - center[k]) / width;
                let s = 1.0 - u * u;
                if s > 0.0 {
                    s * s
                } else {
                    0.0
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (0..x.len()).map(|k| self.axis(k, x[k])).product()
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            Self::One => Ok(()),
            Self::Bump { center, width } => {
                if center.len() != d {
                    Err(domain("test function centre has the wrong dimension"))
                } else if !(*width > 0.0) {
                    Err(domain("bump width must be positive"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// `int f dmu`.
    pub fn integrate(&self, m: &AtomicMeasure) -> f64 {
        m.iter().map(|(x, w)| w * self.eval(x)).sum()
    }

    /// The constant plus bumps of width `width` at `centers`.
    pub fn default_family(centers: &[Vec<f64>], width: f64) -> Vec<Self> {
        let mut out = vec![Self::One];
        out.extend(centers.iter().map(|c| Self::Bump {
            center: c.clone(),
            width,
        }));
        out
    }
}

/// Volume of the `eps`-neighbourhood of the atoms of `m` inside `window`.
pub fn dilation_volume(m: &AtomicMeasure, eps: f64, window: &Window) -> Result<Coverage> {
    rasterize(m, None, eps, window, &[])
}

/// `int 1{dist(x, supp m) < eps} f(x) dx` over `window`.
pub fn neighborhood_integral(
    m: &AtomicMeasure,
    eps: f64,
    window: &Window,
    f: &TestFunction,
) -> Result<f64> {
    Ok(rasterize(m, None, eps, window, std::slice::from_ref(f))?.integrals[0])
}

/// Exponent `c` of the age schedule `h = eps^c` balancing the overlap
/// defect against the number of clusters.
pub fn age_exponent(beta: f64, d: usize) -> Result<f64> {
    let d = d as f64;
    if !(d > 2.0 / beta) || d < 2.0 {
        return Err(domain(format!(
            "age schedule needs d > 2/beta, got d={d}, beta={beta}"
        )));
    }
    Ok((d - 2.0 / beta) / ((d - 1.0) / 2.0))
}

/// Cluster age `h = eps^c` matched to the neighbourhood radius `eps`.
pub fn age_schedule(eps: f64, beta: f64, d: usize) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(domain("eps must be positive"));
    }
    Ok(eps.powf(age_exponent(beta, d)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn ball(eps: f64) -> f64 {
        4.0 / 3.0 * PI * eps.powi(3)
    }

    #[test]
    fn age_schedule_values() {
        assert!((age_exponent(0.8, 3).unwrap() - 0.5).abs() < 1e-15);
        assert!((age_schedule(0.01, 0.8, 3).unwrap() - 0.1).abs() < 1e-15);
        assert!(age_exponent(0.6, 3).is_err());
        for d in 3..9 {
            for i in 1..100 {
                let beta = i as f64 / 100.0;
                if let Ok(c) = age_exponent(beta, d) {
                    assert!(c > 0.0 && c < 2.0);
                }
            }
        }
    }

    #[test]
    fn disjoint_balls_add() {
        let eps = 0.1;
        let m = AtomicMeasure::from_parts(3, vec![0.0, 0.0, 0.0, 0.5, 0.0, 0.0], vec![1.0, 1.0])
            .unwrap();
        let w = Window::covering(&m, eps, eps / 16.0).unwrap().unwrap();
        let two = dilation_volume(&m, eps, &w).unwrap().volume;
        let a = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let b = AtomicMeasure::dirac(&[0.5, 0.0, 0.0], 1.0).unwrap();
        let va = dilation_volume(&a, eps, &w).unwrap().volume;
        let vb = dilation_volume(&b, eps, &w).unwrap().volume;
        assert!((two - va - vb).abs() < 1e-15);
        assert!((two / (2.0 * ball(eps)) - 1.0).abs() < 0.02);
    }

    #[test]
    fn coincident_atoms_are_one_ball() {
        let eps = 0.1;
        let one = AtomicMeasure::dirac(&[0.1, 0.2, 0.3], 1.0).unwrap();
        let two = AtomicMeasure::equal_atoms_at(&[0.1, 0.2, 0.3], 2, 0.5).unwrap();
        let w = Window::covering(&one, eps, eps / 16.0).unwrap().unwrap();
        assert_eq!(
            dilation_volume(&one, eps, &w).unwrap().voxels,
            dilation_volume(&two, eps, &w).unwrap().voxels
        );
    }

    #[test]
    fn heat_kernel_integral_over_small_ball() {
        let eps = 0.05;
        let m = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let w = Window::covering(&m, eps, eps / 32.0).unwrap().unwrap();
        // a wide bump is within O(eps^2) of its peak value on the ball
        let f = TestFunction::Bump {
            center: vec![0.0; 3],
            width: 2.0,
        };
        let got = neighborhood_integral(&m, eps, &w, &f).unwrap();
        let vol = dilation_volume(&m, eps, &w).unwrap().volume;
        assert!((got / vol - 1.0).abs() < 3.0 * (eps / 2.0).powi(2));
        assert!((vol / ball(eps) - 1.0).abs() < 0.01);
    }

    fn random_measure(seed: u64, n: usize) -> AtomicMeasure {
        use rand::RngExt;
        let mut rng = crate::rng::replicate_rng(seed, 0);
        let mut m = AtomicMeasure::new(3).unwrap();
        for _ in 0..n {
            let p: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
            m.push(&p, 1.0).unwrap();
        }
        m
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn monotone_in_eps_and_atoms(seed in 0u64..1000, n in 1usize..30, extra in 1usize..10) {
            let m = random_measure(seed, n + extra);
            let keep: Vec<bool> = (0..m.len()).map(|i| i < n).collect();
            let w = Window::cube(3, 0.8, 0.005).unwrap();
            let small = rasterize(&m, Some(&keep), 0.05, &w, &[]).unwrap();
            let all = rasterize(&m, None, 0.05, &w, &[]).unwrap();
            let wider = rasterize(&m, None, 0.08, &w, &[]).unwrap();
            prop_assert!(small.voxels <= all.voxels);
            prop_assert!(all.voxels <= wider.voxels);
        }

        #[test]
        fn scale_covariance(seed in 0u64..1000, s in 0.5f64..3.0) {
            let m = random_measure(seed, 10);
            let eps = 0.06;
            let w = Window::covering(&m, eps, eps / 16.0).unwrap().unwrap();
            let v = dilation_volume(&m, eps, &w).unwrap().volume;
            let coords: Vec<f64> = m.coords().iter().map(|x| x * s).collect();
            let ms = AtomicMeasure::from_parts(3, coords, m.masses().to_vec()).unwrap();
            let ws = Window::covering(&ms, eps * s, eps * s / 16.0).unwrap().unwrap();
            let vs = dilation_volume(&ms, eps * s, &ws).unwrap().volume;
            prop_assert!((vs / (v * s.powi(3)) - 1.0).abs() < 0.03);
        }

        #[test]
        fn nonnegative_integrals(seed in 0u64..1000) {
            let m = random_measure(seed, 15);
            let w = Window::cube(3, 0.7, 0.01).unwrap();
            let f = TestFunction::Bump { center: vec![0.1, -0.1, 0.0], width: 0.3 };
            let c = rasterize(&m, None, 0.1, &w, &[f]).unwrap();
            prop_assert!(c.integrals[0] >= 0.0);
        }
    }
}
