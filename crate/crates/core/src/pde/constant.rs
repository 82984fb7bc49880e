//! The constant `c_{beta,d} = lim eps^{-d} v_infinity(eps^{-2} t, eps^{-1} x) / p_t(x)`.

use serde::{Deserialize, Serialize};

use super::vinf::{VInfinityField, DEFAULT_LAMBDA_LADDER};
use super::{GridSpec, InitialProfile};
use crate::error::{domain, Error, Result};
use crate::measure::heat_kernel_radial;
use crate::stats::linear_fit;

/// How an estimate of `c_{beta,d}` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstantMethod {
    PdeScaling,
    HittingMc,
    LebesgueRatio,
}

/// One rung of an `eps` ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub eps: f64,
    /// Rescaled time `t / eps^2`.
    pub big_t: f64,
    /// The uncorrected finite-`eps` ratio.
    pub raw: f64,
    /// The ratio after the Gaussian-closure correction.
    pub corrected: f64,
    pub raw_stderr: f64,
    /// Error of the corrected ratio.
    pub stderr: f64,
}

impl LadderPoint {
    /// Rung with an uncorrected ratio `raw` at rescaled time `big_t`; the
    /// corrected value and its error follow from [`gaussian_closure`].
    pub fn from_raw(eps: f64, big_t: f64, raw: f64, raw_stderr: f64, beta: f64, d: usize) -> Self {
        LadderPoint {
            eps,
            big_t,
            raw,
            corrected: gaussian_closure(raw, big_t, beta, d),
            raw_stderr,
            stderr: raw_stderr * gaussian_closure_slope(raw, big_t, beta, d),
        }
    }
}

/// A probe point `(t, |x|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEstimate {
    pub probe: Probe,
    pub value: f64,
    pub error_bar: f64,
    pub ladder: Vec<LadderPoint>,
}

/// An estimate of `c_{beta,d}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub method: ConstantMethod,
    pub value: f64,
    pub error_bar: f64,
    pub probes: Vec<ProbeEstimate>,
}

/// Exponent `gamma = d beta/2 - 1` of the slow `T^{-gamma}` approach to
/// the limit.
pub fn closure_exponent(beta: f64, d: usize) -> f64 {
    d as f64 * beta / 2.0 - 1.0
}

/// Extrapolates a ratio `S` observed at rescaled time `T` to `T = infinity`
/// assuming the solution keeps the shape `S p_T` from then on.
///
/// Under that closure `S' = -S^{1+beta} int p_T^{1+beta}`, and
/// `int p_T^{1+beta} = k T^{-d beta/2}` with
/// `k = (1+beta)^{-d/2} (2 pi)^{-d beta/2}`, which integrates to
/// `S_inf^{-beta} = S^{-beta} + beta k T^{-gamma}/gamma`.
pub fn gaussian_closure(s: f64, big_t: f64, beta: f64, d: usize) -> f64 {
    let gamma = closure_exponent(beta, d);
    let df = d as f64;
    let k = (1.0 + beta).powf(-df / 2.0) * (2.0 * std::f64::consts::PI).powf(-df * beta / 2.0);
    (s.powf(-beta) + beta * k * big_t.powf(-gamma) / gamma).powf(-1.0 / beta)
}

/// Derivative of [`gaussian_closure`] with respect to `s`.
pub fn gaussian_closure_slope(s: f64, big_t: f64, beta: f64, d: usize) -> f64 {
    (gaussian_closure(s, big_t, beta, d) / s).powf(1.0 + beta)
}

/// Extrapolates an `eps` ladder to `T = infinity`.
///
/// The raw ratio approaches the limit from above and the closure-corrected
/// ratio from below, both with a leading `T^{-gamma}` remainder. Each is fitted
/// by `c + A T^{-gamma}` (weighted by the point errors when `weighted`);
/// the estimate is the midpoint of the two intercepts and the error bar
/// combines half their gap with the fit errors. A single rung gives the
/// midpoint of its raw and corrected values.
pub fn extrapolate_ladder(
    points: &[LadderPoint],
    beta: f64,
    d: usize,
    weighted: bool,
) -> Result<(f64, f64)> {
    match points.len() {
        0 => Err(domain("empty eps ladder")),
        1 => {
            let p = &points[0];
            let value = 0.5 * (p.raw + p.corrected);
            Ok((
                value,
                (0.5 * (p.raw - p.corrected)).abs().hypot(p.raw_stderr),
            ))
        }
        _ => {
            let gamma = closure_exponent(beta, d);
            let x: Vec<f64> = points.iter().map(|p| p.big_t.powf(-gamma)).collect();
            let fit = |y: Vec<f64>, se: Vec<f64>| {
                if weighted && se.iter().all(|&s| s > 0.0) {
                    let w: Vec<f64> = se.iter().map(|s| 1.0 / (s * s)).collect();
                    linear_fit(&x, &y, Some(&w))
                } else {
                    linear_fit(&x, &y, None)
                }
            };
            let raw = fit(
                points.iter().map(|p| p.raw).collect(),
                points.iter().map(|p| p.raw_stderr).collect(),
            )?;
            let cor = fit(
                points.iter().map(|p| p.corrected).collect(),
                points.iter().map(|p| p.stderr).collect(),
            )?;
            let value = 0.5 * (raw.intercept + cor.intercept);
            let gap = 0.5 * (raw.intercept - cor.intercept).abs();
            let stat = raw.intercept_stderr.max(cor.intercept_stderr);
            let worst = points.iter().map(|p| p.raw_stderr).fold(0.0f64, f64::max);
            Ok((
                value,
                gap.hypot(stat).hypot(if weighted { 0.0 } else { worst }),
            ))
        }
    }
}

/// Combines per-probe estimates, failing if they disagree by more than
/// twice the combined error bar.
pub fn combine_probes(
    method: ConstantMethod,
    probes: Vec<ProbeEstimate>,
) -> Result<ConstantEstimate> {
    if probes.is_empty() {
        return Err(domain("no probes"));
    }
    let lo = probes.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
    let hi = probes
        .iter()
        .map(|p| p.value)
        .fold(f64::NEG_INFINITY, f64::max);
    let combined = probes
        .iter()
        .map(|p| p.error_bar * p.error_bar)
        .sum::<f64>()
        .sqrt();
    let spread = hi - lo;
    if spread > 2.0 * combined {
        return Err(Error::InconsistentEstimate {
            spread,
            error_bar: combined,
        });
    }
    let value = probes.iter().map(|p| p.value).sum::<f64>() / probes.len() as f64;
    let worst = probes.iter().map(|p| p.error_bar).fold(0.0f64, f64::max);
    Ok(ConstantEstimate {
        method,
        value,
        error_bar: worst.max(spread / 2.0),
        probes,
    })
}

/// Numerical options for [`estimate_c_beta_d`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeConstantOptions {
    pub lambdas: Vec<f64>,
    pub profile: InitialProfile,
    pub grid: GridSpec,
}

impl Default for PdeConstantOptions {
    fn default() -> Self {
        Self {
            lambdas: DEFAULT_LAMBDA_LADDER.to_vec(),
            profile: InitialProfile::Bump,
            grid: GridSpec {
                h0: 0.005,
                ..GridSpec::default()
            },
        }
    }
}

/// Default `eps` ladder.
pub const DEFAULT_EPS_LADDER: [f64; 6] = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5];

/// Default probes `(t, |x|) = (1, 0)` and `(2, 1)`.
pub const DEFAULT_PROBES: [Probe; 2] = [Probe { t: 1.0, x: 0.0 }, Probe { t: 2.0, x: 1.0 }];

/// Estimates `c_{beta,d}` from `eps^{-d} v_infinity(eps^{-2} t, eps^{-1} x) / p_t(x)`
/// along `eps_ladder` at every probe.
///
/// At rescaled time `T = t/eps^2` the ratio equals
/// `v_infinity(T, x/eps) / p_T(x/eps)`, which approaches its limit only
/// like `T^{-gamma}`; see [`extrapolate_ladder`].
pub fn estimate_c_beta_d(
    beta: f64,
    d: usize,
    eps_ladder: &[f64],
    probes: &[Probe],
    opts: &PdeConstantOptions,
) -> Result<ConstantEstimate> {
    if (d as f64) <= 2.0 / beta {
        return Err(domain("c_{beta,d} exists only for d > 2/beta"));
    }
    if eps_ladder.is_empty() || eps_ladder.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(domain("eps ladder values must lie in (0, 1]"));
    }
    if probes.is_empty() || probes.iter().any(|p| !(p.t > 0.0) || p.x < 0.0) {
        return Err(domain("probes need t > 0 and |x| >= 0"));
    }
    let times: Vec<f64> = probes
        .iter()
        .flat_map(|p| eps_ladder.iter().map(move |e| p.t / (e * e)))
        .collect();
    let field = VInfinityField::solve(beta, d, opts.profile, &opts.lambdas, &times, opts.grid)?;
    let estimates = probes
        .iter()
        .map(|&probe| {
            let ladder = eps_ladder
                .iter()
                .map(|&eps| {
                    let big_t = probe.t / (eps * eps);
                    let r = probe.x / eps;
                    let v = field.evaluate(big_t, r)?;
                    let p = heat_kernel_radial(big_t, r, d)?;
                    let raw = v.value / p;
                    Ok(LadderPoint {
                        eps,
                        big_t,
                        raw,
                        corrected: gaussian_closure(raw, big_t, beta, d),
                        raw_stderr: v.error / p,
                        stderr: v.error / p * gaussian_closure_slope(raw, big_t, beta, d),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (value, error_bar) = extrapolate_ladder(&ladder, beta, d, false)?;
            Ok(ProbeEstimate {
                probe,
                value,
                error_bar,
                ladder,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    combine_probes(ConstantMethod::PdeScaling, estimates)
}
