//! Replicate batches and the truncation-time and jump-intensity experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracles::{c_beta, jump_tail_rate, particle_jump_tail_rate, truncated_event_rate};
use super::{simulate_coupled_with_law, CoupledTrajectory, EngineParams};
use crate::error::{domain, precondition, Error, Result};
use crate::measure::AtomicMeasure;
use crate::offspring::OffspringLaw;
use crate::rng::{replicate_rng, SimRng};
use crate::stats::{loglog_fit, EstimateWithError, LinearFit, RunningStats};

/// Runs `reps` independent replicates, replicate `i` on stream `i` of
/// `seed`, and returns the results in replicate order.
pub fn run_replicates<T, F>(reps: u64, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &mut SimRng) -> Result<T> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i);
            f(i, &mut rng)
        })
        .collect()
}

/// Estimates of `P(tau_K <= t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TauTailReport {
    pub truncation: f64,
    pub horizon: f64,
    /// Conditional-expectation estimator
    /// `1 - exp(-rho P(K > kstar) int_0^t Z^K_s ds)`.
    pub estimate: EstimateWithError,
    /// Plain indicator estimator `1{tau_K <= t}`.
    pub indicator: EstimateWithError,
    /// `t |mu| K^{-1-beta}`.
    pub rate_comparison: f64,
}

/// Estimates `P(tau_K <= t)` with `t = params.horizon`.
///
/// Before `tau_K` the full process coincides with the K-process, and
/// truncated events hit each K-particle at the constant rate
/// `rho P(K > kstar)` without altering the K-process. Given the K-process
/// path, `tau_K` is therefore exponential in the accumulated exposure, which
/// yields an unbiased estimator with far smaller variance than the
/// indicator.
pub fn tau_tail_experiment(
    params: &EngineParams,
    initial: &AtomicMeasure,
    reps: u64,
) -> Result<TauTailReport> {
    if reps < 2 {
        return Err(domain("tau tail experiment needs at least two replicates"));
    }
    let k = params
        .truncation
        .ok_or_else(|| precondition("tau tail experiment needs a finite K"))?;
    let mut p = params.clone();
    if p.snapshot_times.last() != Some(&p.horizon) {
        p.snapshot_times.push(p.horizon);
    }
    let law = p.offspring_law()?;
    let hazard_rate = truncated_event_rate(&law, p.mass_scale, k) * p.mass_scale as f64;
    let samples = run_replicates(reps, p.seed, |_, rng| {
        let tr = simulate_coupled_with_law(&p, &law, initial, rng)?;
        let last = tr.snapshots.last().expect("at least one snapshot");
        let exposure = last.kept_exposure.unwrap_or(0.0);
        let conditional = -(-hazard_rate * exposure).exp_m1();
        Ok((conditional, f64::from(tr.tau_k <= p.horizon)))
    })?;
    let estimate: RunningStats = samples.iter().map(|s| s.0).collect();
    let indicator: RunningStats = samples.iter().map(|s| s.1).collect();
    Ok(TauTailReport {
        truncation: k,
        horizon: p.horizon,
        estimate: estimate.estimate()?,
        indicator: indicator.estimate()?,
        rate_comparison: p.horizon * initial.total_mass() * k.powf(-1.0 - p.beta),
    })
}

/// One threshold of the jump-intensity comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompensatorRow {
    pub r: f64,
    pub count: u64,
    /// `c_beta r^{-1-beta}/(1+beta)` times the summed exposure.
    pub expected: f64,
    /// The same with the exact particle-level jump rate.
    pub expected_particle: f64,
    pub ratio: f64,
    pub ratio_stderr: f64,
}

/// Comparison of logged jump counts with the compensator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompensatorReport {
    pub c_beta: f64,
    pub exposure: f64,
    pub rows: Vec<CompensatorRow>,
    pub slope: LinearFit,
    /// Logged K-process jumps above `K` that were not truncated (always 0).
    pub k_violations: u64,
}

/// Compares counts of logged jumps above each `r` with the intensity
/// `c_beta r^{-1-beta}/(1+beta) int |xi_s| ds`, using the realised
/// exposure of every trajectory.
pub fn jump_compensator_check(
    batch: &[CoupledTrajectory],
    r_ladder: &[f64],
    beta: f64,
    law: &OffspringLaw,
    truncation: Option<f64>,
) -> Result<CompensatorReport> {
    if batch.is_empty() || batch.iter().all(|t| t.jump_log.events.is_empty()) {
        return Err(Error::EmptyLog);
    }
    let threshold = batch
        .iter()
        .map(|t| t.jump_log.threshold)
        .fold(0.0f64, f64::max);
    if r_ladder.iter().any(|&r| r < threshold) {
        return Err(precondition(format!(
            "jump thresholds must be at least the logging threshold {threshold}"
        )));
    }
    let n = batch[0].mass_scale;
    let exposure: f64 = batch
        .iter()
        .map(|t| {
            t.snapshots
                .last()
                .and_then(|s| s.full_exposure)
                .unwrap_or(0.0)
        })
        .sum();
    let rows: Vec<CompensatorRow> = r_ladder
        .iter()
        .map(|&r| {
            let count: u64 = batch.iter().map(|t| t.jump_log.count_above(r) as u64).sum();
            let expected = jump_tail_rate(r, beta) * exposure;
            let expected_particle = particle_jump_tail_rate(r, law, n) * exposure;
            CompensatorRow {
                r,
                count,
                expected,
                expected_particle,
                ratio: count as f64 / expected,
                ratio_stderr: (count.max(1) as f64).sqrt() / expected,
            }
        })
        .collect();
    let est: Vec<EstimateWithError> = rows
        .iter()
        .map(|row| EstimateWithError::new(row.count as f64, (row.count.max(1) as f64).sqrt(), 1))
        .collect();
    let slope = loglog_fit(r_ladder, &est)?;
    let k_violations = batch
        .iter()
        .flat_map(|t| t.jump_log.events.iter())
        .filter(|e| e.in_k_process && !e.truncated && truncation.is_some_and(|k| e.net_mass > k))
        .count() as u64;
    Ok(CompensatorReport {
        c_beta: c_beta(beta),
        exposure,
        rows,
        slope,
        k_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicates_are_ordered_and_reproducible() {
        let a = run_replicates(50, 3, |i, rng| Ok((i, rand::Rng::next_u64(rng)))).unwrap();
        let b = run_replicates(50, 3, |i, rng| Ok((i, rand::Rng::next_u64(rng)))).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, x)| x.0 == i as u64));
    }

    #[test]
    fn tau_requires_finite_truncation() {
        let p = EngineParams::new(0.8, 3, 100, 0.1).with_positions(false);
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        assert!(tau_tail_experiment(&p, &init, 10).is_err());
        let p = p.with_truncation(Some(0.5));
        assert!(tau_tail_experiment(&p, &init, 0).is_err());
    }

    #[test]
    fn huge_truncation_gives_zero() {
        let p = EngineParams::new(0.8, 3, 100, 0.2)
            .with_positions(false)
            .with_truncation(Some(1e12));
        let init = AtomicMeasure::dirac(&[0.0; 3], 1.0).unwrap();
        let r = tau_tail_experiment(&p, &init, 20).unwrap();
        assert!(r.estimate.value < 1e-12);
        assert_eq!(r.indicator.value, 0.0);
    }
}
