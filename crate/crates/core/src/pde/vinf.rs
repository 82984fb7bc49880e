//! `v_infinity = lim_{lambda -> infinity} v_lambda` by extrapolation along a
//! ladder of amplitudes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve_radial, GridSpec, InitialProfile, PdeProblem, RadialPdeSolution};
use crate::error::{precondition, Error, Result};
use crate::measure::heat_kernel_radial;

/// Default amplitude ladder.
pub const DEFAULT_LAMBDA_LADDER: [f64; 4] = [1e2, 1e3, 1e4, 1e5];

/// Values below this fraction of the peak are reported without
/// extrapolation.
pub const NEGLIGIBLE: f64 = 1e-12;

/// Solutions for every amplitude of a ladder, sharing grid and output times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VInfinityField {
    pub beta: f64,
    pub d: usize,
    pub profile: InitialProfile,
    pub lambdas: Vec<f64>,
    /// Convergence exponent used for extrapolation.
    pub exponent: f64,
    pub solutions: Vec<RadialPdeSolution>,
}

/// An extrapolated limit with its error estimate and the raw ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrapolated {
    pub value: f64,
    pub error: f64,
    pub ladder: Vec<f64>,
}

impl VInfinityField {
    pub fn solve(
        beta: f64,
        d: usize,
        profile: InitialProfile,
        lambdas: &[f64],
        times: &[f64],
        grid: GridSpec,
    ) -> Result<Self> {
        if lambdas.len() < 2 || lambdas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(precondition(
                "lambda ladder needs two or more increasing values",
            ));
        }
        let solutions = lambdas
            .par_iter()
            .map(|&lambda| {
                let p = PdeProblem::new(beta, d, lambda)
                    .with_profile(profile)
                    .with_grid(grid);
                solve_radial(&p, times)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            beta,
            d,
            profile,
            lambdas: lambdas.to_vec(),
            exponent: profile.ladder_exponent(beta),
            solutions,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.solutions[0].t_grid
    }

    /// `v_lambda(t, r)` for every ladder amplitude.
    pub fn ladder(&self, t: f64, r: f64) -> Result<Vec<f64>> {
        self.solutions.iter().map(|s| s.at(t, r)).collect()
    }

    /// Extrapolated `v_infinity(t, r)`.
    ///
    /// Requires the ladder to increase (up to roundoff) and its increments
    /// to shrink. The limit is a Richardson extrapolation from the top two
    /// rungs with the profile's convergence exponent; the error is its
    /// disagreement with the extrapolation from the rungs below.
    pub fn evaluate(&self, t: f64, r: f64) -> Result<Extrapolated> {
        let ladder = self.ladder(t, r)?;
        let top = self.solutions.last().unwrap();
        let ti = top.time_index(t).unwrap_or(0);
        let peak = top.values[ti].iter().cloned().fold(0.0f64, f64::max);
        if ladder[ladder.len() - 1] < NEGLIGIBLE * peak {
            // far tail: below tolerance, bounded by the largest rung
            let value = ladder[ladder.len() - 1];
            return Ok(Extrapolated {
                value,
                error: value,
                ladder,
            });
        }
        extrapolate(&self.lambdas, &ladder, self.exponent)
    }
}

fn extrapolate(lambdas: &[f64], v: &[f64], q: f64) -> Result<Extrapolated> {
    let n = v.len();
    let top = v[n - 1];
    if top < 1e-280 {
        return Ok(Extrapolated {
            value: top,
            error: 0.0,
            ladder: v.to_vec(),
        });
    }
    let slack = 1e-9 * top;
    if v.windows(2).any(|w| w[1] < w[0] - slack) {
        return Err(Error::NonConverged(format!(
            "lambda ladder is not increasing: {v:?}"
        )));
    }
    let diffs: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.len() >= 2 {
        let (a, b) = (diffs[diffs.len() - 2], diffs[diffs.len() - 1]);
        if b > 1.05 * a && b > 1e-12 * top {
            return Err(Error::NonConverged(format!(
                "lambda ladder increments do not shrink: {diffs:?}"
            )));
        }
    }
    let richardson = |i: usize| {
        let rho = (lambdas[i - 1] / lambdas[i]).powf(q);
        v[i] + (v[i] - v[i - 1]) * rho / (1.0 - rho)
    };
    let value = richardson(n - 1);
    let error = if n >= 3 {
        (value - richardson(n - 2)).abs()
    } else {
        value - top
    };
    Ok(Extrapolated {
        value,
        error,
        ladder: v.to_vec(),
    })
}

/// `v_infinity(t, r)` with the bump profile, default grid and the given
/// amplitude ladder.
pub fn v_infinity(beta: f64, d: usize, t: f64, r: f64, lambdas: &[f64]) -> Result<Extrapolated> {
    VInfinityField::solve(
        beta,
        d,
        InitialProfile::Bump,
        lambdas,
        &[t],
        GridSpec::default(),
    )?
    .evaluate(t, r)
}

/// Comparison of `v_infinity` with heat kernels over a `(t, r)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VInfinityBounds {
    /// `max v_infinity(t, r) / p_{2t}(r)`.
    pub upper_constant: f64,
    /// `min v_infinity(t, r) / p_{t'}(r)` with `t' = beta t/(1+beta)`.
    pub lower_ratio: f64,
    /// `(t, r, v_infinity, p_{2t}, p_{t'})` at every grid point.
    pub points: Vec<[f64; 5]>,
}

/// Evaluates the heat-kernel envelope of `v_infinity` on every output
/// time of the field (all must be at least 1) and the radii `rs`.
pub fn vinf_bounds(field: &VInfinityField, rs: &[f64]) -> Result<VInfinityBounds> {
    if field.times().iter().any(|&t| t < 1.0) {
        return Err(precondition(
            "the heat-kernel envelope is checked for t >= 1",
        ));
    }
    let beta = field.beta;
    let mut points = Vec::new();
    let mut upper = 0.0f64;
    let mut lower = f64::INFINITY;
    for &t in field.times() {
        for &r in rs {
            let v = field.evaluate(t, r)?.value;
            let p2 = heat_kernel_radial(2.0 * t, r, field.d)?;
            let pl = heat_kernel_radial(beta * t / (1.0 + beta), r, field.d)?;
            // ratios are meaningless once both sides underflow
            if p2 > 1e-250 && pl > 1e-250 {
                upper = upper.max(v / p2);
                lower = lower.min(v / pl);
            }
            points.push([t, r, v, p2, pl]);
        }
    }
    Ok(VInfinityBounds {
        upper_constant: upper,
        lower_ratio: lower,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extrapolation_is_exact_for_the_model_form() {
        let lambdas = [1e2, 1e3, 1e4];
        let q = 0.3;
        let v: Vec<f64> = lambdas
            .iter()
            .map(|l: &f64| 2.0 - 0.7 * l.powf(-q))
            .collect();
        let e = extrapolate(&lambdas, &v, q).unwrap();
        assert!((e.value - 2.0).abs() < 1e-12);
        assert!(e.error < 1e-12);
    }

    #[test]
    fn decreasing_ladder_is_rejected() {
        let e = extrapolate(&[1.0, 10.0, 100.0], &[1.0, 0.9, 0.95], 0.5);
        assert!(matches!(e, Err(Error::NonConverged(_))));
    }

    #[test]
    fn far_field_is_negligible_and_bounds_hold() {
        let field = VInfinityField::solve(
            0.8,
            3,
            InitialProfile::Bump,
            &DEFAULT_LAMBDA_LADDER,
            &[1.0, 2.0, 4.0],
            GridSpec::default(),
        )
        .unwrap();
        let far = field.evaluate(1.0, 12.0).unwrap();
        assert!(far.value < 1e-12);
        let b = vinf_bounds(&field, &[0.0, 0.5, 1.0, 2.0, 3.0]).unwrap();
        assert!(b.lower_ratio >= 1.0, "{b:?}");
        assert!(b.upper_constant.is_finite() && b.upper_constant > 0.0);
    }
}
