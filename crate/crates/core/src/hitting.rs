//! Monte-Carlo hitting probabilities of small balls and the diagnostics
//! built on them.
//!
//! A ball is hit when an atom lies strictly inside it. Every estimator
//! evaluates a whole `eps` ladder on the same replicates, so estimates are
//! exactly monotone in `eps`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cluster::{cluster_hit_from_xi, ClusterSampler};
use crate::engine::oracles::{cluster_normalizer, particle_extinction_prob};
use crate::engine::{run_replicates, EngineParams, Focus, ReducedOptions, ReducedSampler};
use crate::error::{domain, precondition, Error, Result};
use crate::measure::{dist2, heat_kernel_radial, AtomicMeasure};
use crate::neighborhood::SpatialHash;
use crate::pde::{
    combine_probes, extrapolate_ladder, ConstantEstimate,
    ConstantMethod, LadderPoint, Probe, ProbeEstimate,
};
use crate::rng::derive_seed;
use crate::stats::EstimateWithError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitTarget {
    Full,
    Truncated,
    /// A cluster of age `t` with root drawn from `initial / |initial|`; the
    /// estimate is `|initial|` times the hitting frequency.
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitQuery {
    pub initial: AtomicMeasure,
    pub t: f64,
    pub center: Vec<f64>,
    pub eps: f64,
    pub target: HitTarget,
}

/// Hitting frequencies of `B(center, eps)` along a ladder for both
/// components of the coupled pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitLadder {
    pub t: f64,
    pub eps: Vec<f64>,
    pub full: Vec<EstimateWithError>,
    pub truncated: Vec<EstimateWithError>,
    /// Largest per-replicate bound on the effect of lineage pruning.
    pub pruned_bound: f64,
}

fn params_at(params: &EngineParams, t: f64) -> EngineParams {
    EngineParams {
        horizon: t,
        snapshot_times: vec![t],
        ..params.clone()
    }
}

fn frequencies(hits: &[Vec<bool>], j: usize) -> Result<EstimateWithError> {
    let x: Vec<f64> = hits.iter().map(|h| f64::from(u8::from(h[j]))).collect();
    EstimateWithError::from_samples(&x)
}

/// Estimates `P(xi_t B(center, eps) > 0)` and the same for the truncated
/// process, for every `eps` of the ladder.
pub fn hit_ladder(
    params: &EngineParams,
    initial: &AtomicMeasure,
    t: f64,
    center: &[f64],
    eps_ladder: &[f64],
    reps: u64,
) -> Result<HitLadder> {
    if reps < 2 {
        return Err(domain("need at least two replicates"));
    }
    if eps_ladder.iter().any(|e| !(*e > 0.0)) {
        return Err(domain("eps must be positive"));
    }
    let p = params_at(params, t);
    let law = p.offspring_law()?;
    let sampler = ReducedSampler::new(&p, &law)?;
    let reach = eps_ladder.iter().cloned().fold(0.0, f64::max);
    let opts = ReducedOptions {
        focus: Some(Focus::new(center, reach)),
        ..Default::default()
    };
    let runs = run_replicates(reps, p.seed, |_, rng| {
        let s = sampler.sample(initial, &opts, rng)?;
        let bound = s[0].pruned_bound;
        let snap = s[0].particles.as_ref().expect("positions tracked");
        let mut full = f64::INFINITY;
        let mut kept = f64::INFINITY;
        for i in 0..snap.measure.len() {
            let r2 = dist2(snap.measure.position(i), center);
            full = full.min(r2);
            if snap.kept[i] {
                kept = kept.min(r2);
            }
        }
        let f: Vec<bool> = eps_ladder.iter().map(|e| full < e * e).collect();
        let k: Vec<bool> = eps_ladder.iter().map(|e| kept < e * e).collect();
        Ok((f, k, bound))
    })?;
    let full: Vec<Vec<bool>> = runs.iter().map(|r| r.0.clone()).collect();
    let kept: Vec<Vec<bool>> = runs.iter().map(|r| r.1.clone()).collect();
    let pruned_bound = runs.iter().map(|r| r.2).fold(0.0, f64::max);
    Ok(HitLadder {
        t,
        eps: eps_ladder.to_vec(),
        full: (0..eps_ladder.len())
            .map(|j| frequencies(&full, j))
            .collect::<Result<_>>()?,
        truncated: (0..eps_ladder.len())
            .map(|j| frequencies(&kept, j))
            .collect::<Result<_>>()?,
        pruned_bound,
    })
}

/// `P_mu(eta_t B > 0) = int mu(dx) P_x(eta_t B > 0)` for every `eps`.
pub fn cluster_hit_ladder(
    params: &EngineParams,
    initial: &AtomicMeasure,
    t: f64,
    center: &[f64],
    eps_ladder: &[f64],
    reps: u64,
) -> Result<Vec<EstimateWithError>> {
    if reps < 2 {
        return Err(domain("need at least two replicates"));
    }
    let total = initial.total_mass();
    if !(total > 0.0) {
        return Err(domain("initial measure has no mass"));
    }
    let p = params_at(params, t);
    let law = p.offspring_law()?;
    let sampler = ClusterSampler::new(&p, &law)?;
    let focus = Focus::new(center, eps_ladder.iter().cloned().fold(0.0, f64::max));
    let cumulative: Vec<f64> = initial
        .masses()
        .iter()
        .scan(0.0, |acc, m| {
            *acc += m / total;
            Some(*acc)
        })
        .collect();
    let runs = run_replicates(reps, derive_seed(p.seed, 3), |_, rng| {
        use rand::RngExt;
        let u: f64 = rng.random();
        let i = cumulative.partition_point(|c| *c < u).min(initial.len() - 1);
        let c = sampler.sample_focused(initial.position(i), Some(&focus), rng)?;
        let r2 = (0..c.measure.len())
            .map(|i| dist2(c.measure.position(i), center))
            .fold(f64::INFINITY, f64::min);
        Ok(eps_ladder.iter().map(|e| r2 < e * e).collect::<Vec<bool>>())
    })?;
    (0..eps_ladder.len())
        .map(|j| {
            let f = frequencies(&runs, j)?;
            Ok(EstimateWithError::new(f.value * total, f.stderr * total, f.reps))
        })
        .collect()
}

/// Single-query hitting probability.
pub fn estimate_hit_prob(
    q: &HitQuery,
    params: &EngineParams,
    reps: u64,
) -> Result<EstimateWithError> {
    let eps = [q.eps];
    match q.target {
        HitTarget::Full => Ok(hit_ladder(params, &q.initial, q.t, &q.center, &eps, reps)?.full[0]),
        HitTarget::Truncated => {
            Ok(hit_ladder(params, &q.initial, q.t, &q.center, &eps, reps)?.truncated[0])
        }
        HitTarget::Cluster => {
            Ok(cluster_hit_ladder(params, &q.initial, q.t, &q.center, &eps, reps)?[0])
        }
    }
}

/// `eps^{2/beta - d} (-log(1 - p))` with delta-method error.
pub fn scaled_rate(p: &EstimateWithError, eps: f64, beta: f64, d: usize) -> (f64, f64) {
    let s = eps.powf(2.0 / beta - d as f64);
    let v = -(-p.value).ln_1p();
    (s * v, s * p.stderr / (1.0 - p.value).max(1e-300))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichPoint {
    pub eps: f64,
    pub t: f64,
    pub hit: EstimateWithError,
    pub hit_truncated: EstimateWithError,
    /// `eps^{2/beta-d} (-log(1 - P))`, the scaled cluster rate
    /// `eps^{2/beta-d} (beta t)^{-1/beta} P(eta_t B > 0)`.
    pub scaled: f64,
    pub scaled_stderr: f64,
    pub scaled_truncated: f64,
    /// `(mu * p_{t'})(x)` with `t' = beta t/(1+beta)`.
    pub lower_reference: f64,
    /// `(mu * p_{2t})(x)`.
    pub upper_reference: f64,
    pub lower_ratio: f64,
    pub upper_ratio: f64,
    pub upper_ratio_truncated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub center: Vec<f64>,
    pub points: Vec<SandwichPoint>,
    /// Smallest lower ratio.
    pub c_low: f64,
    /// Three standard errors below `c_low`.
    pub c_low_margin: f64,
    /// Largest upper ratio.
    pub c_up: f64,
    pub c_up_truncated: f64,
    /// Whether the literal constants hold: `c_low >= 1` and `c_up <= 1`,
    /// each within three standard errors.
    pub unit_constants: bool,
    pub passed: bool,
}

/// Compares scaled hitting rates with the heat-kernel envelope on a grid of
/// `t` values and `eps` ladders (`eps <= sqrt(t)`).
pub fn sandwich_check(
    params: &EngineParams,
    initial: &AtomicMeasure,
    center: &[f64],
    t_values: &[f64],
    eps_ladder: &[f64],
    reps: u64,
) -> Result<SandwichReport> {
    let beta = params.beta;
    let d = params.d;
    let mut points = Vec::new();
    for (k, &t) in t_values.iter().enumerate() {
        if eps_ladder.iter().any(|e| !(*e > 0.0 && e * e <= t)) {
            return Err(precondition("sandwich bounds need 0 < eps <= sqrt(t)"));
        }
        let p = EngineParams {
            seed: derive_seed(params.seed, k as u64),
            ..params.clone()
        };
        let ladder = hit_ladder(&p, initial, t, center, eps_ladder, reps)?;
        let lower_reference = initial.convolve_heat(beta * t / (1.0 + beta), center)?;
        let upper_reference = initial.convolve_heat(2.0 * t, center)?;
        for (j, &eps) in eps_ladder.iter().enumerate() {
            let (scaled, scaled_stderr) = scaled_rate(&ladder.full[j], eps, beta, d);
            let (scaled_truncated, _) = scaled_rate(&ladder.truncated[j], eps, beta, d);
            points.push(SandwichPoint {
                eps,
                t,
                hit: ladder.full[j],
                hit_truncated: ladder.truncated[j],
                scaled,
                scaled_stderr,
                scaled_truncated,
                lower_reference,
                upper_reference,
                lower_ratio: scaled / lower_reference,
                upper_ratio: scaled / upper_reference,
                upper_ratio_truncated: scaled_truncated / upper_reference,
            });
        }
    }
    if points.is_empty() {
        return Err(domain("empty (eps, t) grid"));
    }
    let argmin = points
        .iter()
        .min_by(|a, b| a.lower_ratio.total_cmp(&b.lower_ratio))
        .unwrap();
    let c_low = argmin.lower_ratio;
    let c_low_margin = c_low - 3.0 * argmin.scaled_stderr / argmin.lower_reference;
    let c_up = points.iter().map(|p| p.upper_ratio).fold(0.0, f64::max);
    let c_up_truncated = points
        .iter()
        .map(|p| p.upper_ratio_truncated)
        .fold(0.0, f64::max);
    let unit_constants = points.iter().all(|p| {
        let se_low = p.scaled_stderr / p.lower_reference;
        let se_up = p.scaled_stderr / p.upper_reference;
        p.lower_ratio + 3.0 * se_low >= 1.0 && p.upper_ratio - 3.0 * se_up <= 1.0
    });
    Ok(SandwichReport {
        center: center.to_vec(),
        c_low,
        c_low_margin,
        c_up,
        c_up_truncated,
        unit_constants,
        passed: c_low_margin > 0.0 && c_up.is_finite() && c_up_truncated <= c_up,
        points,
    })
}

/// Builds closure-corrected ladder points from scaled rates divided by
/// `(mu * p_t)(x)`.
fn ladder_points(
    eps: &[f64],
    t: f64,
    rates: &[(f64, f64)],
    reference: f64,
    beta: f64,
    d: usize,
) -> Vec<LadderPoint> {
    eps.iter()
        .zip(rates)
        .filter(|(_, r)| r.0 > 0.0)
        .map(|(&e, &(v, se))| {
            LadderPoint::from_raw(e, t / (e * e), v / reference, se / reference, beta, d)
        })
        .collect()
}

/// Estimates `c_{beta,d}` from `eps^{2/beta-d} P(xi_t B_x^eps > 0) /
/// (mu * p_t)(x)` for a point source `mu = m delta_0`, one ladder per
/// probe, extrapolated like the PDE ladders.
pub fn asymptotic_constant(
    params: &EngineParams,
    mass: f64,
    probes: &[Probe],
    eps_ladder: &[f64],
    reps: u64,
) -> Result<ConstantEstimate> {
    let d = params.d;
    let beta = params.beta;
    let initial = AtomicMeasure::dirac(&vec![0.0; d], mass)?;
    let mut estimates = Vec::new();
    for (k, probe) in probes.iter().enumerate() {
        let mut center = vec![0.0; d];
        center[0] = probe.x;
        let p = EngineParams {
            seed: derive_seed(params.seed, 100 + k as u64),
            ..params.clone()
        };
        let ladder = hit_ladder(&p, &initial, probe.t, &center, eps_ladder, reps)?;
        let rates: Vec<(f64, f64)> = ladder
            .full
            .iter()
            .zip(eps_ladder)
            .map(|(h, &e)| scaled_rate(h, e, beta, d))
            .collect();
        let reference = mass * heat_kernel_radial(probe.t, probe.x, d)?;
        let points = ladder_points(eps_ladder, probe.t, &rates, reference, beta, d);
        if points.is_empty() {
            return Err(Error::NonConverged("no ball was ever hit".into()));
        }
        let (value, error_bar) = extrapolate_ladder(&points, beta, d, true)?;
        estimates.push(ProbeEstimate {
            probe: *probe,
            value,
            error_bar,
            ladder: points,
        });
    }
    combine_probes(ConstantMethod::HittingMc, estimates)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub eps: f64,
    /// `-(beta t)^{1/beta} log(1 - P(xi hits))`.
    pub from_process: EstimateWithError,
    /// Directly estimated `P_mu(eta_t hits)`.
    pub from_clusters: EstimateWithError,
    pub z: f64,
}

/// Compares the cluster hitting rate implied by the process hitting
/// probability with the one estimated from clusters.
pub fn transfer_check(
    params: &EngineParams,
    initial: &AtomicMeasure,
    t: f64,
    center: &[f64],
    eps_ladder: &[f64],
    reps: u64,
) -> Result<Vec<TransferRow>> {
    let xi = hit_ladder(params, initial, t, center, eps_ladder, reps)?;
    let eta = cluster_hit_ladder(params, initial, t, center, eps_ladder, reps)?;
    let a = cluster_normalizer(t, params.beta);
    Ok(eps_ladder
        .iter()
        .enumerate()
        .map(|(j, &eps)| {
            let p = xi.full[j];
            let v = cluster_hit_from_xi(p.value, a);
            let se = a * p.stderr / (1.0 - p.value).max(1e-300);
            let from_process = EstimateWithError::new(v, se, p.reps);
            let from_clusters = eta[j];
            let z = (v - from_clusters.value).abs()
                / se.hypot(from_clusters.stderr).max(1e-300);
            TransferRow {
                eps,
                from_process,
                from_clusters,
                z,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityRow {
    pub eps: f64,
    /// `int |eps^{2/beta-d} P_x / c - (mu * p_t)(x)| dx / int (mu * p_t)`.
    pub discrepancy: f64,
    /// Monte-Carlo error of the discrepancy.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityReport {
    pub t: f64,
    pub c_beta_d: f64,
    pub spacing: f64,
    pub rows: Vec<IntensityRow>,
    /// Whether the discrepancy never rises by more than two standard errors
    /// as `eps` decreases.
    pub declining: bool,
    /// `chi^2` comparison of the mean atom mass per cell with `mu * p_t`.
    pub mean_measure_chi2: f64,
    pub mean_measure_dof: usize,
    pub mean_measure_p_value: f64,
}

/// Cubic probe grid over `[-half, half]^d` with `n` points per axis.
fn probe_grid(d: usize, half: f64, n: usize) -> Vec<Vec<f64>> {
    let step = 2.0 * half / n as f64;
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let i = idx % n;
                    idx /= n;
                    -half + (i as f64 + 0.5) * step
                })
                .collect()
        })
        .collect()
}

/// Total-variation distance between the scaled hitting intensity and
/// `c_{beta,d} (mu * p_t)` on the cube `[-half, half]^d` sampled at `n` cell
/// centres per axis, along a decreasing `eps` ladder. Also checks the mean
/// measure `E xi_t = mu * p_t` cell by cell.
#[allow(clippy::too_many_arguments)]
pub fn intensity_tv(
    params: &EngineParams,
    initial: &AtomicMeasure,
    t: f64,
    eps_ladder: &[f64],
    half: f64,
    n: usize,
    c_beta_d: f64,
    reps: u64,
) -> Result<IntensityReport> {
    let d = params.d;
    let beta = params.beta;
    if reps < 2 || n == 0 {
        return Err(domain("need reps >= 2 and a nonempty probe grid"));
    }
    if eps_ladder.is_empty() || eps_ladder.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(domain("eps ladder must be nonempty and decreasing"));
    }
    let spacing = 2.0 * half / n as f64;
    if spacing > 0.5 * t.sqrt() {
        return Err(Error::Resolution(format!(
            "probe spacing {spacing} exceeds half the diffusion length {}",
            0.5 * t.sqrt()
        )));
    }
    let grid = probe_grid(d, half, n);
    let cell = spacing.powi(d as i32);
    let density: Vec<f64> = grid
        .iter()
        .map(|x| initial.convolve_heat(t, x))
        .collect::<Result<_>>()?;
    let reach = eps_ladder[0];
    let p = params_at(params, t);
    let law = p.offspring_law()?;
    let sampler = ReducedSampler::new(&p, &law)?;
    let ne = eps_ladder.len();
    let runs = run_replicates(reps, p.seed, |_, rng| {
        let s = sampler.sample(initial, &ReducedOptions::default(), rng)?;
        let m = &s[0].particles.as_ref().expect("positions tracked").measure;
        let mut hits = vec![0u32; grid.len() * ne];
        let mut counts = vec![0.0; grid.len()];
        if m.is_empty() {
            return Ok((hits, counts));
        }
        let lower = vec![-half; d];
        let hash = SpatialHash::new(m, reach, &lower);
        for (g, x) in grid.iter().enumerate() {
            let near = hash.within(x, reach);
            let r2 = near
                .iter()
                .map(|&i| dist2(m.position(i as usize), x))
                .fold(f64::INFINITY, f64::min);
            for (j, e) in eps_ladder.iter().enumerate() {
                if r2 < e * e {
                    hits[g * ne + j] = 1;
                }
            }
        }
        for (x, w) in m.iter() {
            let idx: Option<usize> = (0..d).rev().try_fold(0usize, |acc, k| {
                let i = ((x[k] + half) / spacing).floor();
                (i >= 0.0 && (i as usize) < n).then(|| acc * n + i as usize)
            });
            if let Some(i) = idx {
                counts[i] += w;
            }
        }
        Ok((hits, counts))
    })?;
    let total: f64 = density.iter().sum::<f64>() * cell;
    let mut rows = Vec::new();
    for (j, &eps) in eps_ladder.iter().enumerate() {
        let scale = eps.powf(2.0 / beta - d as f64) / c_beta_d;
        let mut disc = 0.0;
        let mut var = 0.0;
        for g in 0..grid.len() {
            let k = runs.iter().filter(|r| r.0[g * ne + j] == 1).count() as f64;
            let ph = k / reps as f64;
            disc += (scale * ph - density[g]).abs() * cell;
            var += (scale * cell).powi(2) * ph * (1.0 - ph) / reps as f64;
        }
        rows.push(IntensityRow {
            eps,
            discrepancy: disc / total,
            stderr: var.sqrt() / total,
        });
    }
    let declining = rows.windows(2).all(|w| {
        w[1].discrepancy <= w[0].discrepancy + 2.0 * w[0].stderr.hypot(w[1].stderr)
    });
    // mean measure per cell against the heat-kernel mass of the cell
    let mut chi2 = 0.0;
    let mut dof = 0;
    for g in 0..grid.len() {
        let xs: Vec<f64> = runs.iter().map(|r| r.1[g]).collect();
        let e = EstimateWithError::from_samples(&xs)?;
        let expected = density[g] * cell;
        if expected * (p.mass_scale as f64) < 20.0 || e.stderr == 0.0 {
            continue;
        }
        chi2 += ((e.value - expected) / e.stderr).powi(2);
        dof += 1;
    }
    let p_value = if dof > 0 {
        1.0 - ChiSquared::new(dof as f64)
            .map_err(|e| domain(e.to_string()))?
            .cdf(chi2)
    } else {
        1.0
    };
    Ok(IntensityReport {
        t,
        c_beta_d,
        spacing,
        rows,
        declining,
        mean_measure_chi2: chi2,
        mean_measure_dof: dof,
        mean_measure_p_value: p_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionRow {
    pub t: f64,
    /// `P(xi_t B > 0)`.
    pub hit: EstimateWithError,
    /// `E xi_t B`.
    pub ball_mass: EstimateWithError,
    /// `P(xi_t != 0)`.
    pub survival: EstimateWithError,
    /// Exact particle-level `P(xi_t != 0)`.
    pub survival_reference: f64,
    /// `(mu * p_t)(x)`.
    pub mu_p_t: f64,
    /// `(mu * p_{2t})(x) ^ 1`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionReport {
    pub center: Vec<f64>,
    pub radius: f64,
    pub rows: Vec<ExtinctionRow>,
    /// `max_t P(xi_t B > 0) / ((mu p_{2t}) ^ 1)`.
    pub fitted_constant: f64,
    /// Every diagnostic is non-increasing in `t` within two standard errors.
    pub monotone: bool,
    /// Survival frequencies match the exact value within three standard
    /// errors at every `t`.
    pub survival_matches: bool,
}

/// Follows hitting, ball mass and survival along increasing `t` for a finite
/// initial measure, against `mu p_{2t} ^ 1`.
pub fn extinction_equivalence(
    params: &EngineParams,
    initial: &AtomicMeasure,
    t_ladder: &[f64],
    center: &[f64],
    radius: f64,
    reps: u64,
) -> Result<ExtinctionReport> {
    if t_ladder.is_empty() || t_ladder.windows(2).any(|w| !(w[0] < w[1])) || t_ladder[0] <= 0.0 {
        return Err(domain("t ladder must be positive and increasing"));
    }
    if reps < 2 {
        return Err(domain("need at least two replicates"));
    }
    let p = EngineParams {
        horizon: *t_ladder.last().unwrap(),
        snapshot_times: t_ladder.to_vec(),
        ..params.clone()
    };
    let law = p.offspring_law()?;
    let sampler = ReducedSampler::new(&p, &law)?;
    let nt = t_ladder.len();
    let runs = run_replicates(reps, p.seed, |_, rng| {
        let s = sampler.sample(initial, &ReducedOptions::default(), rng)?;
        Ok(s.iter()
            .map(|r| {
                let m = &r.particles.as_ref().expect("positions tracked").measure;
                let bm = m.ball_mass(center, radius);
                let hit = m.hits_ball(center, radius);
                (hit, bm, !m.is_empty())
            })
            .collect::<Vec<_>>())
    })?;
    let mut rows = Vec::new();
    for (j, &t) in t_ladder.iter().enumerate() {
        let col = |f: &dyn Fn(&(bool, f64, bool)) -> f64| -> Vec<f64> {
            runs.iter().map(|r| f(&r[j])).collect()
        };
        let hit = EstimateWithError::from_samples(&col(&|r| f64::from(u8::from(r.0))))?;
        let ball_mass = EstimateWithError::from_samples(&col(&|r| r.1))?;
        let survival = EstimateWithError::from_samples(&col(&|r| f64::from(u8::from(r.2))))?;
        rows.push(ExtinctionRow {
            t,
            hit,
            ball_mass,
            survival,
            survival_reference: 1.0
                - particle_extinction_prob(initial.total_mass(), t, p.beta, p.mass_scale),
            mu_p_t: initial.convolve_heat(t, center)?,
            bound: initial.convolve_heat(2.0 * t, center)?.min(1.0),
        });
    }
    let fitted_constant = rows
        .iter()
        .map(|r| r.hit.value / r.bound)
        .fold(0.0, f64::max);
    let declines = |a: &EstimateWithError, b: &EstimateWithError| {
        b.value <= a.value + 2.0 * a.stderr.hypot(b.stderr)
    };
    let monotone = (1..nt).all(|j| {
        let (a, b) = (&rows[j - 1], &rows[j]);
        declines(&a.hit, &b.hit)
            && declines(&a.ball_mass, &b.ball_mass)
            && declines(&a.survival, &b.survival)
            && b.mu_p_t <= a.mu_p_t
    });
    let survival_matches = rows.iter().all(|r| {
        let se = (r.survival_reference * (1.0 - r.survival_reference) / reps as f64).sqrt();
        (r.survival.value - r.survival_reference).abs() <= 3.0 * se.max(1e-12)
    });
    Ok(ExtinctionReport {
        center: center.to_vec(),
        radius,
        rows,
        fitted_constant,
        monotone,
        survival_matches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConsistencyRow {
    pub t: f64,
    pub eps: f64,
    /// `eps^{2/beta-d} (-log(1 - P)) / (m p_t(0))`.
    pub rate: f64,
    pub stderr: f64,
}

/// Scaled hitting rate of a centred ball from a point source of mass `mass`
/// at several `t` with `eps / sqrt(t)` fixed. The mass scale is adjusted
/// with `t` so that the particle system is scaled along with the process.
pub fn scaling_consistency(
    params: &EngineParams,
    mass: f64,
    ratio: f64,
    t_values: &[f64],
    reps: u64,
) -> Result<Vec<ScalingConsistencyRow>> {
    let d = params.d;
    let beta = params.beta;
    let t0 = t_values.first().copied().ok_or_else(|| domain("no t values"))?;
    let origin = vec![0.0; d];
    t_values
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            // mass scales like t^{1/beta}; particle mass follows
            let n = (params.mass_scale as f64 * (t0 / t).powf(1.0 / beta)).round().max(1.0);
            let m = mass * (t / t0).powf(1.0 / beta);
            let p = EngineParams {
                mass_scale: n as u64,
                seed: derive_seed(params.seed, 200 + k as u64),
                ..params.clone()
            };
            let init = AtomicMeasure::dirac(&origin, m)?;
            let eps = ratio * t.sqrt();
            let l = hit_ladder(&p, &init, t, &origin, &[eps], reps)?;
            let (v, se) = scaled_rate(&l.full[0], eps, beta, d);
            let reference = m * heat_kernel_radial(t, 0.0, d)?;
            Ok(ScalingConsistencyRow {
                t,
                eps,
                rate: v / reference,
                stderr: se / reference,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(m: f64) -> AtomicMeasure {
        AtomicMeasure::dirac(&[0.0; 3], m).unwrap()
    }

    #[test]
    fn huge_ball_sees_survival() {
        let params = EngineParams::new(0.8, 3, 1000, 1.0).with_seed(2);
        let l = hit_ladder(&params, &point(1.0), 1.0, &[0.0; 3], &[1e6], 2000).unwrap();
        let surv = 1.0 - particle_extinction_prob(1.0, 1.0, 0.8, 1000);
        assert!(l.full[0].within(surv, 4.0), "{:?} vs {surv}", l.full[0]);
    }

    #[test]
    fn far_ball_is_not_hit_and_ladder_is_monotone() {
        let params = EngineParams::new(0.8, 3, 1000, 1.0).with_seed(3);
        let l = hit_ladder(&params, &point(1.0), 1.0, &[30.0, 0.0, 0.0], &[0.5], 200).unwrap();
        assert_eq!(l.full[0].value, 0.0);
        let l = hit_ladder(&params, &point(1.0), 1.0, &[0.0; 3], &[0.1, 0.3, 1.0], 300).unwrap();
        assert!(l.full[0].value <= l.full[1].value && l.full[1].value <= l.full[2].value);
        for j in 0..3 {
            assert!(l.truncated[j].value <= l.full[j].value);
        }
    }

    #[test]
    fn sandwich_rejects_large_eps() {
        let params = EngineParams::new(0.8, 3, 1000, 1.0);
        let r = sandwich_check(&params, &point(1.0), &[0.0; 3], &[0.25], &[0.6], 10);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn cluster_target_scales_with_mass() {
        let params = EngineParams::new(0.8, 3, 1000, 1.0).with_seed(4);
        let q = HitQuery {
            initial: point(0.5),
            t: 0.5,
            center: vec![0.0; 3],
            eps: 1e6,
            target: HitTarget::Cluster,
        };
        // every cluster survives, so the ball always sees it
        let e = estimate_hit_prob(&q, &params, 50).unwrap();
        assert!((e.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coarse_probe_grid_is_rejected() {
        let params = EngineParams::new(0.8, 3, 1000, 1.0);
        let r = intensity_tv(&params, &point(1.0), 1.0, &[0.2], 3.0, 4, 8.0, 4);
        assert!(matches!(r, Err(Error::Resolution(_))));
    }

    #[test]
    fn probe_grid_covers_the_cube() {
        let g = probe_grid(3, 1.0, 4);
        assert_eq!(g.len(), 64);
        assert!(g.iter().all(|x| x.iter().all(|v| v.abs() < 1.0)));
        let s: f64 = g.iter().map(|x| x[0] + x[1] + x[2]).sum();
        assert!(s.abs() < 1e-12);
    }
}
