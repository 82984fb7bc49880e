use serde::{Deserialize, Serialize};

use super::AtomicMeasure;
use crate::error::{Error, Result};

/// One component `weight * N(mean, variance I)` of a Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// Initial measures for the local-finiteness predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum DensitySpec {
    FiniteAtomic {
        measure: AtomicMeasure,
    },
    GaussianMixture {
        components: Vec<GaussianComponent>,
    },
    /// Density proportional to `(1 + |x|)^a exp(c |x|^gamma)`.
    TailPowerExp {
        a: f64,
        c: f64,
        gamma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Finiteness {
    FiniteForAllT,
    InfiniteForSomeT,
}

impl DensitySpec {
    /// Builds a spec from a class name and its numeric parameters, as read
    /// from configuration files.
    pub fn from_class(class: &str, params: &[f64]) -> Result<Self> {
        match (class, params) {
            ("tail-power-exp", [a, c, gamma]) => {
                let spec = Self::TailPowerExp {
                    a: *a,
                    c: *c,
                    gamma: *gamma,
                };
                spec.validate()?;
                Ok(spec)
            }
            ("tail-power-exp", _) => Err(Error::UnsupportedSpec(
                "tail-power-exp takes parameters a, c, gamma".into(),
            )),
            (other, _) => Err(Error::UnsupportedSpec(format!(
                "class '{other}' cannot be built from bare parameters"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::FiniteAtomic { .. } => Ok(()),
            Self::GaussianMixture { components } => {
                if components
                    .iter()
                    .all(|c| c.weight >= 0.0 && c.variance > 0.0 && c.weight.is_finite())
                {
                    Ok(())
                } else {
                    Err(Error::UnsupportedSpec(
                        "mixture weights must be nonnegative and variances positive".into(),
                    ))
                }
            }
            Self::TailPowerExp { a, c, gamma } => {
                if a.is_finite() && c.is_finite() && *c >= 0.0 && gamma.is_finite() && *gamma > 0.0
                {
                    Ok(())
                } else {
                    Err(Error::UnsupportedSpec(format!(
                        "tail-power-exp needs finite a, c >= 0 and gamma > 0 (got a={a}, c={c}, gamma={gamma})"
                    )))
                }
            }
        }
    }
}

/// Decides whether `mu p_t` is finite for every `t > 0`.
///
/// Finite measures always qualify. For `(1+|x|)^a exp(c|x|^gamma)` the
/// exponential factor is compared with the Gaussian decay `exp(-|x|^2/2t)`:
/// growth slower than quadratic is absorbed for every `t`, quadratic growth
/// with `c > 0` only for `t < 1/(2c)`, faster growth never.
pub fn local_finiteness(mu: &DensitySpec) -> Result<Finiteness> {
    mu.validate()?;
    Ok(match mu {
        DensitySpec::FiniteAtomic { .. } | DensitySpec::GaussianMixture { .. } => {
            Finiteness::FiniteForAllT
        }
        DensitySpec::TailPowerExp { c, gamma, .. } => {
            if *c == 0.0 || *gamma < 2.0 {
                Finiteness::FiniteForAllT
            } else {
                Finiteness::InfiniteForSomeT
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Radial quadrature of `mu p_t` over `|x| < rmax` in d = 3.
    fn radial_mu_pt(a: f64, c: f64, gamma: f64, t: f64, rmax: f64) -> f64 {
        let n = 200_000;
        let h = rmax / n as f64;
        (0..n)
            .map(|i| {
                let r = (i as f64 + 0.5) * h;
                let log_f = a * (1.0 + r).ln() + c * r.powf(gamma) - r * r / (2.0 * t);
                4.0 * PI * r * r * log_f.exp() * (2.0 * PI * t).powf(-1.5)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn finite_measures_are_finite() {
        let m = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        assert_eq!(
            local_finiteness(&DensitySpec::FiniteAtomic { measure: m }).unwrap(),
            Finiteness::FiniteForAllT
        );
    }

    #[test]
    fn subquadratic_exponent_converges_numerically() {
        let spec = DensitySpec::TailPowerExp {
            a: 0.0,
            c: 1.0,
            gamma: 1.5,
        };
        assert_eq!(local_finiteness(&spec).unwrap(), Finiteness::FiniteForAllT);
        for t in [0.5, 2.0, 8.0] {
            let a = radial_mu_pt(0.0, 1.0, 1.5, t, 400.0);
            let b = radial_mu_pt(0.0, 1.0, 1.5, t, 800.0);
            assert!(
                a.is_finite() && (a - b).abs() <= 1e-6 * b,
                "t={t}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn quadratic_exponent_diverges_for_large_t() {
        let spec = DensitySpec::TailPowerExp {
            a: 0.0,
            c: 1.0,
            gamma: 2.0,
        };
        assert_eq!(
            local_finiteness(&spec).unwrap(),
            Finiteness::InfiniteForSomeT
        );
        // t = 0.25 < 1/2 converges, t = 1 > 1/2 grows without bound with the cutoff
        let a = radial_mu_pt(0.0, 1.0, 2.0, 0.25, 20.0);
        let b = radial_mu_pt(0.0, 1.0, 2.0, 0.25, 40.0);
        assert!((a - b).abs() <= 1e-9 * b);
        let c = radial_mu_pt(0.0, 1.0, 2.0, 1.0, 10.0);
        let d = radial_mu_pt(0.0, 1.0, 2.0, 1.0, 20.0);
        assert!(d > 1e10 * c);
    }

    #[test]
    fn rejects_unsupported_input() {
        assert!(matches!(
            DensitySpec::from_class("cauchy", &[1.0]),
            Err(Error::UnsupportedSpec(_))
        ));
        assert!(DensitySpec::from_class("tail-power-exp", &[0.0, -1.0, 1.0]).is_err());
        assert!(DensitySpec::from_class("tail-power-exp", &[0.0, 1.0, 1.0]).is_ok());
    }
}
