//! `c_{beta,d}` from the mean Lebesgue measure of `eps`-neighbourhoods.

use serde::{Deserialize, Serialize};

use super::raster::rasterize;
use crate::engine::{run_replicates, EngineParams, ReducedOptions, ReducedSampler};
use crate::error::{domain, Error, Result};
use crate::measure::{AtomicMeasure, Window};
use crate::pde::{
    combine_probes, ConstantEstimate, ConstantMethod, LadderPoint, Probe,
    ProbeEstimate,
};
use crate::rng::derive_seed;
use crate::stats::RunningStats;

/// Ratio of means `eps^{2/beta-d} E|xi_t^eps| / E|xi_t|` at one `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LebesgueRow {
    pub eps: f64,
    pub mean_volume: f64,
    pub mean_mass: f64,
    pub ratio: f64,
    pub stderr: f64,
}

/// Ratio of means along a decreasing `eps` ladder, every `eps` evaluated on
/// the same replicates of the process started from `initial` and observed
/// at `t`.
pub fn lebesgue_ratios(
    params: &EngineParams,
    initial: &AtomicMeasure,
    t: f64,
    eps_ladder: &[f64],
    voxels_per_eps: f64,
    reps: u64,
) -> Result<Vec<LebesgueRow>> {
    if reps < 2 {
        return Err(domain("need at least two replicates"));
    }
    if eps_ladder.is_empty() || eps_ladder.iter().any(|e| !(*e > 0.0)) {
        return Err(domain("eps ladder must be nonempty and positive"));
    }
    let p = EngineParams {
        horizon: t,
        snapshot_times: vec![t],
        ..params.clone()
    };
    let law = p.offspring_law()?;
    let sampler = ReducedSampler::new(&p, &law)?;
    let runs = run_replicates(reps, p.seed, |_, rng| {
        let s = sampler.sample(initial, &ReducedOptions::default(), rng)?;
        let m = &s[0].particles.as_ref().expect("positions tracked").measure;
        let mass = m.total_mass();
        let volumes = eps_ladder
            .iter()
            .map(|&eps| {
                let res = eps / voxels_per_eps;
                match Window::covering(m, eps, res)? {
                    None => Ok(0.0),
                    Some(w) => Ok(rasterize(m, None, eps, &w, &[])?.volume),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok((mass, volumes))
    })?;
    let masses: RunningStats = runs.iter().map(|r| r.0).collect();
    let mean_mass = masses.mean();
    if !(mean_mass > 0.0) {
        return Err(Error::NonConverged("every replicate went extinct".into()));
    }
    let n = reps as f64;
    let d = params.d as f64;
    Ok(eps_ladder
        .iter()
        .enumerate()
        .map(|(j, &eps)| {
            let scale = eps.powf(2.0 / params.beta - d);
            let vols: RunningStats = runs.iter().map(|r| r.1[j]).collect();
            let q = vols.mean() / mean_mass;
            // delta method for a ratio of means
            let resid: RunningStats = runs.iter().map(|r| r.1[j] - q * r.0).collect();
            let stderr = scale * (resid.variance() / n).sqrt() / mean_mass;
            LebesgueRow {
                eps,
                mean_volume: vols.mean(),
                mean_mass,
                ratio: scale * q,
                stderr,
            }
        })
        .collect())
}

/// Plateau of closure-corrected rungs: their inverse-variance weighted mean,
/// with an error bar combining its standard error and half the spread.
///
/// The raw neighbourhood ratio still carries large finite-`T` terms at the
/// reachable `T`, so the raw/corrected midpoint fit used for pointwise
/// ratios does not apply; the corrected rungs are already flat.
pub fn corrected_plateau(points: &[LadderPoint]) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(domain("empty eps ladder"));
    }
    let w: Vec<f64> = points
        .iter()
        .map(|p| 1.0 / p.stderr.max(1e-12 * p.corrected.abs()).powi(2))
        .collect();
    let sw: f64 = w.iter().sum();
    let mean = points.iter().zip(&w).map(|(p, w)| p.corrected * w).sum::<f64>() / sw;
    let lo = points.iter().map(|p| p.corrected).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.corrected).fold(f64::NEG_INFINITY, f64::max);
    Ok((mean, sw.sqrt().recip().hypot(0.5 * (hi - lo))))
}

/// Estimates `c_{beta,d}` from ratios of means for a point source of mass
/// `mass`, one ladder per probe time (the probe position is ignored). Each
/// rung is corrected by the Gaussian closure at `T = t / eps^2` and the
/// ladder is summarised by [`corrected_plateau`].
pub fn lebesgue_constant(
    params: &EngineParams,
    mass: f64,
    probes: &[Probe],
    eps_ladder: &[f64],
    voxels_per_eps: f64,
    reps: u64,
) -> Result<ConstantEstimate> {
    let d = params.d;
    let beta = params.beta;
    let initial = AtomicMeasure::dirac(&vec![0.0; d], mass)?;
    let mut estimates = Vec::new();
    for (k, probe) in probes.iter().enumerate() {
        let p = EngineParams {
            seed: derive_seed(params.seed, 300 + k as u64),
            ..params.clone()
        };
        let rows = lebesgue_ratios(&p, &initial, probe.t, eps_ladder, voxels_per_eps, reps)?;
        let ladder: Vec<LadderPoint> = rows
            .iter()
            .map(|r| {
                LadderPoint::from_raw(r.eps, probe.t / (r.eps * r.eps), r.ratio, r.stderr, beta, d)
            })
            .collect();
        let (value, error_bar) = corrected_plateau(&ladder)?;
        estimates.push(ProbeEstimate {
            probe: *probe,
            value,
            error_bar,
            ladder,
        });
    }
    combine_probes(ConstantMethod::LebesgueRatio, estimates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_are_decreasing_volumes() {
        let params = EngineParams::new(0.8, 3, 1000, 0.2).with_seed(5);
        let init = AtomicMeasure::dirac(&[0.0; 3], 0.2).unwrap();
        let rows = lebesgue_ratios(&params, &init, 0.2, &[0.2, 0.1], 8.0, 20).unwrap();
        assert!(rows[0].mean_volume >= rows[1].mean_volume);
        assert!(rows.iter().all(|r| r.ratio > 0.0 && r.stderr >= 0.0));
        // one ball per atom bounds the volume
        let ball = 4.0 / 3.0 * std::f64::consts::PI * 0.001;
        assert!(rows[1].mean_volume <= rows[1].mean_mass * 1000.0 * ball * 1.05);
    }

    #[test]
    fn plateau_of_flat_ladder() {
        let pts: Vec<LadderPoint> = [7.0, 7.2, 7.1]
            .iter()
            .enumerate()
            .map(|(i, &c)| LadderPoint {
                eps: 0.1 / (i + 1) as f64,
                big_t: 1.0,
                raw: 10.0,
                corrected: c,
                raw_stderr: 0.1,
                stderr: 0.05,
            })
            .collect();
        let (v, e) = corrected_plateau(&pts).unwrap();
        assert!((v - 7.1).abs() < 1e-12);
        assert!((0.1..0.11).contains(&e));
    }
}
